#include "dhi/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dhi::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "dhi-checkpoint/1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return __builtin_bswap64(v);
  }
}

json shape_json(const std::vector<Index>& shape) {
  json j = json::array();
  for (auto d : shape) j.push_back(d);
  return j;
}

}  // namespace

void write_f64_file(const fs::path& path, const Vector& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (Index i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &values[i], sizeof bits);
    bits = to_little_endian(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw DataError("short write to " + path.string());
}

Vector read_f64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint file not found: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 8 != 0) throw ParseError(path.string() + ": size is not a multiple of 8 bytes");
  Vector values(static_cast<Index>(bytes / 8));
  for (Index i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    bits = to_little_endian(bits);
    std::memcpy(&values[i], &bits, sizeof bits);
  }
  return values;
}

json layer_spec_to_json(const LayerSpec& spec) {
  return json{{"kind", std::string(to_string(spec.kind))},
              {"kernel_size", spec.kernel_size},
              {"stride", spec.stride},
              {"in_channels", spec.in_channels},
              {"out_channels", spec.out_channels},
              {"negative_slope", spec.negative_slope}};
}

LayerSpec layer_spec_from_json(const json& j) {
  LayerSpec spec;
  spec.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  spec.kernel_size = j.at("kernel_size").get<Index>();
  spec.stride = j.at("stride").get<Index>();
  spec.in_channels = j.at("in_channels").get<Index>();
  spec.out_channels = j.at("out_channels").get<Index>();
  spec.negative_slope = j.at("negative_slope").get<double>();
  return spec;
}

void save_checkpoint(const fs::path& dir, const CheckpointManifest& manifest,
                     const ParameterRefs<Real>& params, const BufferRefs<Real>& buffers,
                     bool include_optimizer_state) {
  fs::create_directories(dir);
  json layers = json::array();
  for (const auto& layer : manifest.layers) {
    layers.push_back({{"path", layer.path}, {"spec", layer_spec_to_json(layer.spec)}});
  }
  json param_list = json::array();
  for (const auto* p : params) {
    json entry{{"name", p->name}, {"shape", shape_json(p->shape)}, {"file", p->name + ".f64"}};
    write_f64_file(dir / (p->name + ".f64"), p->values);
    if (include_optimizer_state) {
      write_f64_file(dir / (p->name + ".adam_m.f64"), p->adam_m);
      write_f64_file(dir / (p->name + ".adam_v.f64"), p->adam_v);
      entry["adam_m"] = p->name + ".adam_m.f64";
      entry["adam_v"] = p->name + ".adam_v.f64";
      entry["step_count"] = p->step_count;
    }
    param_list.push_back(std::move(entry));
  }
  json buffer_list = json::array();
  for (const auto* b : buffers) {
    write_f64_file(dir / (b->name + ".f64"), b->values);
    buffer_list.push_back(
        {{"name", b->name}, {"size", b->values.size()}, {"file", b->name + ".f64"}});
  }
  json doc{{"format", kFormat},   {"model", manifest.model},     {"seed", manifest.seed},
           {"layers", layers},    {"parameters", param_list},    {"buffers", buffer_list},
           {"state", manifest.state}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << '\n';
}

CheckpointManifest read_checkpoint_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw NotFoundError("missing checkpoint manifest: " + (dir / "manifest.json").string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (doc.value("format", "") != kFormat) {
    throw ParseError((dir / "manifest.json").string() + ": unsupported checkpoint format");
  }
  CheckpointManifest manifest;
  manifest.model = doc.at("model").get<std::string>();
  manifest.seed = doc.at("seed").get<std::uint64_t>();
  for (const auto& layer : doc.at("layers")) {
    manifest.layers.push_back(
        {layer.at("path").get<std::string>(), layer_spec_from_json(layer.at("spec"))});
  }
  manifest.state = doc.value("state", json::object());
  manifest.state["__parameters"] = doc.at("parameters");
  manifest.state["__buffers"] = doc.at("buffers");
  return manifest;
}

CheckpointManifest load_checkpoint(const fs::path& dir, const ParameterRefs<Real>& params,
                                   const BufferRefs<Real>& buffers) {
  CheckpointManifest manifest = read_checkpoint_manifest(dir);
  std::map<std::string, json> param_entries;
  for (const auto& e : manifest.state["__parameters"]) {
    param_entries[e.at("name").get<std::string>()] = e;
  }
  std::map<std::string, json> buffer_entries;
  for (const auto& e : manifest.state["__buffers"]) {
    buffer_entries[e.at("name").get<std::string>()] = e;
  }
  manifest.state.erase("__parameters");
  manifest.state.erase("__buffers");

  if (param_entries.size() != params.size()) {
    throw DataError(dir.string() + ": checkpoint holds " + std::to_string(param_entries.size()) +
                    " parameters, model expects " + std::to_string(params.size()));
  }
  for (auto* p : params) {
    const auto it = param_entries.find(p->name);
    if (it == param_entries.end()) {
      throw DataError(dir.string() + ": checkpoint is missing parameter " + p->name);
    }
    const auto shape = it->second.at("shape").get<std::vector<Index>>();
    if (shape != p->shape) throw DimensionError(dir.string() + ": shape mismatch for " + p->name);
    Vector values = read_f64_file(dir / it->second.at("file").get<std::string>());
    if (values.size() != p->size()) {
      throw DimensionError(dir.string() + ": value count mismatch for " + p->name);
    }
    p->values = std::move(values);
    p->zero_grad();
    if (it->second.contains("adam_m")) {
      p->adam_m = read_f64_file(dir / it->second.at("adam_m").get<std::string>());
      p->adam_v = read_f64_file(dir / it->second.at("adam_v").get<std::string>());
      p->step_count = it->second.at("step_count").get<std::int64_t>();
      if (p->adam_m.size() != p->size() || p->adam_v.size() != p->size()) {
        throw DimensionError(dir.string() + ": optimizer state size mismatch for " + p->name);
      }
    } else {
      p->adam_m.setZero();
      p->adam_v.setZero();
      p->step_count = 0;
    }
  }
  for (auto* b : buffers) {
    const auto it = buffer_entries.find(b->name);
    if (it == buffer_entries.end()) {
      throw DataError(dir.string() + ": checkpoint is missing buffer " + b->name);
    }
    Vector values = read_f64_file(dir / it->second.at("file").get<std::string>());
    if (values.size() != b->values.size()) {
      throw DimensionError(dir.string() + ": size mismatch for buffer " + b->name);
    }
    b->values = std::move(values);
  }
  return manifest;
}

}  // namespace dhi::nn
