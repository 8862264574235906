#include "dhi/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dhi::pipeline {

using nlohmann::json;

namespace {

json integer(std::optional<double> min = std::nullopt) {
  json s{{"type", "integer"}};
  if (min) s["minimum"] = *min;
  return s;
}

json number() { return json{{"type", "number"}}; }
json positive() { return json{{"type", "number"}, {"exclusiveMinimum", 0}}; }
json non_negative() { return json{{"type", "number"}, {"minimum", 0}}; }
json boolean() { return json{{"type", "boolean"}}; }
json string_enum(std::vector<std::string> values) {
  return json{{"type", "string"}, {"enum", values}};
}
json object(json properties, std::vector<std::string> required = {}) {
  json s{{"type", "object"}, {"properties", std::move(properties)}, {"additionalProperties", false}};
  if (!required.empty()) s["required"] = required;
  return s;
}
json unit_open() {
  return json{{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}};
}

json optimizer_properties(bool with_patience) {
  json p{{"learning_rate", non_negative()},
         {"beta1", unit_open()},
         {"beta2", unit_open()},
         {"epsilon", positive()},
         {"max_epoch", integer(0)},
         {"batch_size", integer(1)}};
  if (with_patience) p["patience"] = integer(1);
  return p;
}

json build_schema() {
  const json synth = object({{"n_windows", integer(50)},
                             {"window_len", integer(2)},
                             {"sample_rate_hz", positive()},
                             {"noise_std", non_negative()},
                             {"fault_onset_fraction",
                              json{{"type", "number"}, {"minimum", 0}, {"exclusiveMaximum", 1}}},
                             {"growth_rate", number()},
                             {"growth", string_enum({"exponential", "linear"})},
                             {"broadband_coupling", non_negative()},
                             {"random_phase", boolean()},
                             {"impulse_frequency_hz", positive()},
                             {"impulse_amplitude", non_negative()},
                             {"resonance_hz", positive()},
                             {"damping_per_s", non_negative()},
                             {"seed", integer(0)}});
  const json source = object({{"id", json{{"type", "string"}, {"minLength", 1}}},
                              {"format", string_enum({"pronostia", "generic", "synthetic"})},
                              {"path", json{{"type", "string"}, {"minLength", 1}}},
                              {"synth", synth}},
                             {"id", "format"});
  const json sources = json{{"type", "array"}, {"minItems", 1}, {"items", source}};

  json skipae = optimizer_properties(false);
  skipae.update(json{{"input_length", integer(1)},
                     {"latent_dim", integer(1)},
                     {"channels", json{{"type", "array"},
                                       {"minItems", 3},
                                       {"maxItems", 3},
                                       {"items", integer(1)}}},
                     {"kernel_size", integer(1)},
                     {"stride", integer(1)},
                     {"leaky_slope", json{{"type", "number"}, {"minimum", 0}, {"exclusiveMaximum", 1}}},
                     {"latent_activation", boolean()},
                     {"batchnorm_epsilon", positive()},
                     {"batchnorm_momentum", json{{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}});

  json hi = optimizer_properties(true);
  hi.update(json{{"feature_dim", integer(1)},
                 {"hidden", json{{"type", "array"}, {"items", integer(1)}}},
                 {"pool_window", integer(1)},
                 {"lambda", non_negative()},
                 {"gamma", non_negative()},
                 {"r", number()},
                 {"tau", integer(1)},
                 {"lookback", integer(2)},
                 {"pretrain_epochs", integer(0)},
                 {"frozen_side", string_enum({"inputs", "target"})}});

  const json evaluation = object(
      {{"smoothing_window", integer(1)},
       {"methods", json{{"type", "array"},
                        {"minItems", 1},
                        {"items", string_enum({"ours", "rms-baseline", "pca-ablation"})}}}});

  json forecast = optimizer_properties(true);
  forecast.update(json{{"test_len", integer(1)},
                       {"threshold", unit_open()},
                       {"end_of_life_index", integer(0)},
                       {"lookback", integer(2)},
                       {"pool_window", integer(1)},
                       {"pred_limit", positive()},
                       {"teacher_forced", boolean()}});

  const json ablation = object({{"skip_enabled", boolean()},
                                {"prediction_block_enabled", boolean()},
                                {"use_pca_hi", boolean()}});

  return object({{"seed", integer(0)},
                 {"out", json{{"type", "string"}, {"minLength", 1}}},
                 {"data", object({{"train", sources}, {"test", sources}}, {"train", "test"})},
                 {"skipae", object(skipae)},
                 {"hi", object(hi)},
                 {"evaluation", evaluation},
                 {"forecast", object(forecast)},
                 {"ablation", ablation}},
                {"data"});
}

std::string type_name(const json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

bool type_matches(const std::string& expected, const json& v) {
  if (expected == "integer") return v.is_number_integer();
  if (expected == "number") return v.is_number();
  if (expected == "boolean") return v.is_boolean();
  if (expected == "string") return v.is_string();
  if (expected == "array") return v.is_array();
  if (expected == "object") return v.is_object();
  if (expected == "null") return v.is_null();
  return false;
}

std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string pointer_text(const json::json_pointer& p) {
  const auto s = p.to_string();
  return s.empty() ? "/" : s;
}

void validate_node(const json& schema, const json& value, const json::json_pointer& where,
                   std::vector<std::string>& out) {
  const auto here = pointer_text(where);
  if (schema.contains("type")) {
    const auto expected = schema.at("type").get<std::string>();
    if (!type_matches(expected, value)) {
      out.push_back(here + ": expected " + expected + ", got " + type_name(value));
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema.at("enum")) found = found || e == value;
    if (!found) out.push_back(here + ": " + value.dump() + " is not one of " + schema.at("enum").dump());
  }
  if (value.is_number()) {
    const double v = value.get<double>();
    if (!std::isfinite(v)) out.push_back(here + ": must be finite");
    if (schema.contains("minimum") && v < schema.at("minimum").get<double>()) {
      out.push_back(here + ": must be >= " + format_number(schema.at("minimum").get<double>()));
    }
    if (schema.contains("maximum") && v > schema.at("maximum").get<double>()) {
      out.push_back(here + ": must be <= " + format_number(schema.at("maximum").get<double>()));
    }
    if (schema.contains("exclusiveMinimum") && !(v > schema.at("exclusiveMinimum").get<double>())) {
      out.push_back(here + ": must be > " + format_number(schema.at("exclusiveMinimum").get<double>()));
    }
    if (schema.contains("exclusiveMaximum") && !(v < schema.at("exclusiveMaximum").get<double>())) {
      out.push_back(here + ": must be < " + format_number(schema.at("exclusiveMaximum").get<double>()));
    }
  }
  if (value.is_string() && schema.contains("minLength") &&
      value.get<std::string>().size() < schema.at("minLength").get<std::size_t>()) {
    out.push_back(here + ": must not be empty");
  }
  if (value.is_array()) {
    if (schema.contains("minItems") && value.size() < schema.at("minItems").get<std::size_t>()) {
      out.push_back(here + ": needs at least " + schema.at("minItems").dump() + " item(s)");
    }
    if (schema.contains("maxItems") && value.size() > schema.at("maxItems").get<std::size_t>()) {
      out.push_back(here + ": allows at most " + schema.at("maxItems").dump() + " item(s)");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        validate_node(schema.at("items"), value[i], where / i, out);
      }
    }
  }
  if (value.is_object()) {
    const json empty = json::object();
    const json& props = schema.contains("properties") ? schema.at("properties") : empty;
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required")) {
        if (!value.contains(key.get<std::string>())) {
          out.push_back(pointer_text(where / key.get<std::string>()) + ": required key is missing");
        }
      }
    }
    for (const auto& [key, child] : value.items()) {
      if (props.contains(key)) {
        validate_node(props.at(key), child, where / key, out);
      } else if (schema.value("additionalProperties", true) == false) {
        out.push_back(pointer_text(where / key) + ": unknown key");
      }
    }
  }
}

SourceFormat format_from_string(const std::string& s) {
  if (s == "pronostia") return SourceFormat::Pronostia;
  if (s == "generic") return SourceFormat::Generic;
  return SourceFormat::Synthetic;
}

const char* format_name(SourceFormat f) {
  switch (f) {
    case SourceFormat::Pronostia: return "pronostia";
    case SourceFormat::Generic: return "generic";
    case SourceFormat::Synthetic: return "synthetic";
  }
  return "synthetic";
}

nn::OptimizerConfig optimizer_from_json(const json& j, nn::OptimizerConfig c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.max_epoch = j.value("max_epoch", c.max_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  return c;
}

json optimizer_to_json(const nn::OptimizerConfig& c, bool with_patience) {
  json j{{"learning_rate", c.learning_rate},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"max_epoch", c.max_epoch},
         {"batch_size", c.batch_size}};
  if (with_patience) j["patience"] = c.patience;
  return j;
}

std::vector<BearingSource> sources_from_json(const json& list, std::uint64_t seed, std::uint64_t salt,
                                             const std::string& where) {
  std::vector<BearingSource> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& j = list[i];
    const std::string at = where + "/" + std::to_string(i);
    BearingSource s;
    s.id = j.at("id").get<std::string>();
    s.format = format_from_string(j.at("format").get<std::string>());
    if (s.format == SourceFormat::Synthetic) {
      const json synth = j.value("synth", json::object());
      s.synth = ingestion::SynthConfig::from_json(synth);
      if (!synth.contains("seed")) s.synth.seed = derive_seed(seed, salt + i);
      try {
        s.synth.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(at + "/synth: " + e.what());
      }
    } else {
      if (!j.contains("path")) throw ConfigError(at + "/path: required for format " + format_name(s.format));
      s.path = j.at("path").get<std::string>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

json sources_to_json(const std::vector<BearingSource>& sources) {
  json list = json::array();
  for (const auto& s : sources) {
    json j{{"id", s.id}, {"format", format_name(s.format)}};
    if (s.format == SourceFormat::Synthetic) j["synth"] = s.synth.to_json();
    else j["path"] = s.path.string();
    list.push_back(std::move(j));
  }
  return list;
}

template <typename F>
void with_pointer(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

const json& config_schema() {
  static const json schema = build_schema();
  return schema;
}

std::vector<std::string> schema_violations(const json& schema, const json& value) {
  std::vector<std::string> out;
  validate_node(schema, value, json::json_pointer(), out);
  return out;
}

void ExperimentConfig::validate() const {
  if (train.empty()) throw ConfigError("/data/train: needs at least one bearing");
  if (test.empty()) throw ConfigError("/data/test: needs at least one bearing");
  std::set<std::string> ids;
  for (const auto* list : {&train, &test}) {
    for (const auto& s : *list) {
      if (!ids.insert(s.id).second) throw ConfigError("/data: duplicate bearing id '" + s.id + "'");
      if (s.format != SourceFormat::Synthetic && !std::filesystem::exists(s.path)) {
        throw NotFoundError("bearing '" + s.id + "': path " + s.path.string() + " does not exist");
      }
    }
  }
  with_pointer("/skipae", [&] { skipae.validate(); });
  with_pointer("/skipae", [&] { skipae_optimizer.validate(); });
  with_pointer("/hi", [&] { hi.validate(); });
  if (hi.feature_dim != skipae.latent_dim) {
    throw ConfigError("/hi/feature_dim: must equal /skipae/latent_dim (" +
                      std::to_string(skipae.latent_dim) + ")");
  }
  with_pointer("/evaluation/smoothing_window", [&] { nn::check_pool_window(smoothing_window); });
  with_pointer("/forecast", [&] { split.validate(); });
  with_pointer("/forecast", [&] { forecaster.validate(); });
  for (const auto& m : methods) {
    if (!hi_methods().contains(m)) throw ConfigError("/evaluation/methods: unknown method '" + m + "'");
  }
}

json ExperimentConfig::to_json() const {
  json sk = skipae.to_json();
  sk.erase("skip_enabled");
  sk.update(optimizer_to_json(skipae_optimizer, false));

  json h = hi.to_json();
  h.erase("prediction_block_enabled");
  h.update(optimizer_to_json(hi.optimizer, true));

  json fc = optimizer_to_json(forecaster.optimizer, true);
  fc.update(json{{"test_len", split.test_len},
                 {"threshold", split.threshold},
                 {"end_of_life_index", split.end_of_life_index},
                 {"lookback", forecaster.lookback},
                 {"pool_window", forecaster.pool_window},
                 {"pred_limit", pred_limit},
                 {"teacher_forced", teacher_forced}});

  return json{{"seed", seed},
              {"out", out.string()},
              {"data", {{"train", sources_to_json(train)}, {"test", sources_to_json(test)}}},
              {"skipae", sk},
              {"hi", h},
              {"evaluation", {{"smoothing_window", smoothing_window}, {"methods", methods}}},
              {"forecast", fc},
              {"ablation",
               {{"skip_enabled", skipae.skip_enabled},
                {"prediction_block_enabled", hi.prediction_block_enabled},
                {"use_pca_hi", use_pca_hi}}}};
}

ExperimentConfig config_from_json(const json& input) {
  const json& j = input.is_object() && input.contains("config") && input.contains("hashes")
                      ? input.at("config")
                      : input;
  const auto violations = schema_violations(config_schema(), j);
  if (!violations.empty()) {
    std::string msg = "invalid config:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ConfigError(msg);
  }

  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  c.train = sources_from_json(j.at("data").at("train"), c.seed, 0x7000, "/data/train");
  c.test = sources_from_json(j.at("data").at("test"), c.seed, 0x7E00, "/data/test");

  const json sk = j.value("skipae", json::object());
  c.skipae = skipae::SkipAEConfig::from_json(sk);
  c.skipae_optimizer = optimizer_from_json(sk, c.skipae_optimizer);

  const json h = j.value("hi", json::object());
  c.hi = hi::HiConfig::from_json(h);
  c.hi.optimizer = optimizer_from_json(h, c.hi.optimizer);

  const json ev = j.value("evaluation", json::object());
  c.smoothing_window = ev.value("smoothing_window", c.smoothing_window);
  if (ev.contains("methods")) c.methods = ev.at("methods").get<std::vector<std::string>>();

  const json fc = j.value("forecast", json::object());
  c.split.test_len = fc.value("test_len", c.split.test_len);
  c.split.threshold = fc.value("threshold", c.split.threshold);
  c.split.end_of_life_index = fc.value("end_of_life_index", c.split.end_of_life_index);
  c.forecaster.lookback = fc.value("lookback", c.forecaster.lookback);
  c.forecaster.pool_window = fc.value("pool_window", c.forecaster.pool_window);
  c.forecaster.optimizer = optimizer_from_json(fc, c.forecaster.optimizer);
  c.pred_limit = fc.value("pred_limit", c.pred_limit);
  c.teacher_forced = fc.value("teacher_forced", c.teacher_forced);

  const json ab = j.value("ablation", json::object());
  c.skipae.skip_enabled = ab.value("skip_enabled", c.skipae.skip_enabled);
  c.hi.prediction_block_enabled = ab.value("prediction_block_enabled", c.hi.prediction_block_enabled);
  c.use_pca_hi = ab.value("use_pca_hi", c.use_pca_hi);

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace dhi::pipeline
