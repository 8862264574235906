#include "dhi/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace dhi;
using nlohmann::json;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

pipeline::ExperimentConfig resolve(const Globals& g) {
  std::ifstream in(g.config);
  if (!in) throw ConfigError("cannot open config " + g.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(g.config + ": " + e.what());
  }
  json& target = j.is_object() && j.contains("config") && j.contains("hashes") ? j["config"] : j;
  if (!target.is_object()) throw ConfigError(g.config + ": top level must be an object");
  if (g.seed) target["seed"] = *g.seed;
  if (!g.out.empty()) target["out"] = g.out;
  return pipeline::config_from_json(j);
}

void print_metrics(const std::vector<pipeline::MetricRow>& rows) {
  std::printf("%-16s %-14s %-5s %8s %8s %8s %8s\n", "bearing", "method", "role", "mon", "tred", "rob", "hs");
  for (const auto& r : rows) {
    std::printf("%-16s %-14s %-5s %8.4f %8.4f %8.4f %8.4f\n", r.bearing.c_str(), r.method.c_str(),
                pipeline::to_string(r.role).c_str(), r.report.mon, r.report.tred, r.report.rob, r.report.hs);
  }
}

void print_forecasts(const std::vector<pipeline::ForecastRow>& rows) {
  std::printf("%-16s %-14s %8s %8s %8s %8s %9s\n", "bearing", "method", "rmse", "pred", "rul_est", "rul_act",
              "accuracy");
  for (const auto& r : rows) {
    const auto& p = r.prognosis;
    std::printf("%-16s %-14s %8.4f %8.4f %8s %8s %9s\n", r.bearing.c_str(), r.method.c_str(), r.raw.rmse,
                r.raw.pred, p.rul_estimated ? std::to_string(*p.rul_estimated).c_str() : "NA",
                p.rul_actual ? std::to_string(*p.rul_actual).c_str() : "NA",
                p.accuracy ? std::to_string(*p.accuracy).c_str() : "NA");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Dynamic health indicator construction and degradation forecasting"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON) or run manifest")->required();
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out", g.out, "Override the output directory");

  auto* prepare = app.add_subcommand("prepare", "Compute spectra and standardization statistics");
  auto* train = app.add_subcommand("train", "Train the SkipAE and then the dynamic HI model");
  std::optional<int> max_epoch;
  bool resume = false;
  train->add_option("--max-epoch", max_epoch, "Cap every training stage at this many epochs");
  train->add_flag("--resume", resume, "Continue SkipAE training from the last epoch checkpoint");
  auto* construct = app.add_subcommand("construct", "Write HI series for every bearing");
  std::vector<std::string> methods;
  construct->add_option("--method", methods, "Restrict to these methods (ours, rms-baseline, pca-ablation)");
  auto* evaluate = app.add_subcommand("evaluate", "Score HI series and plot them");
  auto* forecast = app.add_subcommand("forecast", "Forecast the test HI tails and estimate RUL");
  bool teacher_forced = false;
  forecast->add_flag("--teacher-forced", teacher_forced, "One-step predictions from true history");
  auto* report = app.add_subcommand("report", "Write the run manifest");
  auto* run_all = app.add_subcommand("run", "Run every stage in order");
  run_all->add_option("--max-epoch", max_epoch, "Cap every training stage at this many epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto config = resolve(g);
  pipeline::thread_count();
  if (!methods.empty()) {
    for (const auto& m : methods) pipeline::find_method(m);
    config.methods = methods;
  }
  if (teacher_forced) config.teacher_forced = true;

  if (prepare->parsed()) {
    const auto r = pipeline::cmd_prepare(config);
    std::printf("%s %s\n", r.cache_hit ? "cache hit" : "cache written", r.fingerprint.c_str());
  } else if (train->parsed()) {
    const auto s = pipeline::cmd_train(config, {max_epoch, resume});
    if (s.skipae_resumed_from > 0) std::printf("resumed SkipAE at epoch %d\n", s.skipae_resumed_from + 1);
    if (!s.skipae_history.empty()) {
      std::printf("skipae: %zu epoch(s), final loss %.6g\n", s.skipae_history.size(),
                  s.skipae_history.back().loss);
    }
    if (s.hi) {
      std::printf("dynamic hi: %zu pre-training + %zu epoch(s)%s, final loss %.6g\n", s.hi->pretrain.size(),
                  s.hi->history.size(), s.hi->stopped_early ? " (early stop)" : "",
                  s.hi->history.empty() ? 0.0 : s.hi->history.back().loss.total);
    }
  } else if (construct->parsed()) {
    pipeline::cmd_construct(config);
  } else if (evaluate->parsed()) {
    print_metrics(pipeline::cmd_evaluate(config));
  } else if (forecast->parsed()) {
    print_forecasts(pipeline::cmd_forecast(config));
  } else if (report->parsed()) {
    pipeline::cmd_report(config);
    std::printf("%s\n", pipeline::RunPaths{config.out}.manifest().string().c_str());
  } else if (run_all->parsed()) {
    pipeline::cmd_prepare(config);
    pipeline::cmd_train(config, {max_epoch, false});
    pipeline::cmd_construct(config);
    print_metrics(pipeline::cmd_evaluate(config));
    print_forecasts(pipeline::cmd_forecast(config));
    pipeline::cmd_report(config);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dhi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const dhi::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dhi::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
