#include "dhi/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace dhi::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum SeedStream : std::uint64_t {
  kSkipAEInit = 1,
  kSkipAETrain = 2,
  kHiInit = 3,
  kHiTrain = 4,
  kForecast = 0x100,
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }
std::string opt_int(const std::optional<Index>& v) { return v ? std::to_string(*v) : "NA"; }

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> steps(Index first, Index n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(first + i);
  return x;
}

void require_checkpoint(const fs::path& dir, const std::string& what) {
  if (!fs::exists(dir / "manifest.json")) {
    throw NotFoundError("missing " + what + " checkpoint " + dir.string() + "; run `train` first");
  }
}

void write_skipae_curve(const RunPaths& paths, const std::vector<skipae::EpochRecord>& history) {
  std::string csv = "epoch,loss\n";
  PlotSeries s{"reconstruction", {}, {}, "#1f77b4"};
  for (const auto& r : history) {
    csv += std::to_string(r.epoch + 1) + "," + num(r.loss) + "\n";
    s.x.push_back(r.epoch + 1);
    s.y.push_back(r.loss);
  }
  write_text_file(paths.curves() / "skipae_loss.csv", csv);
  write_text_file(paths.plots() / "skipae_loss.svg",
                  render_svg({"SkipAE training loss", "epoch", "loss", {s}, {}, {}, true}));
}

void write_hi_curve(const RunPaths& paths, const hi::HiTrainResult& r) {
  std::string csv = "phase,epoch,reconstruction,prediction,monotonic,total,refreshed\n";
  PlotSeries pre{"pre-training", {}, {}, "#7f7f7f"};
  PlotSeries total{"combined", {}, {}, "#1f77b4"};
  PlotSeries rec{"reconstruction", {}, {}, "#2ca02c", true};
  for (const auto& p : r.pretrain) {
    csv += "pretrain," + std::to_string(p.epoch + 1) + "," + num(p.loss) + ",NA,NA," + num(p.loss) + ",0\n";
    pre.x.push_back(p.epoch + 1);
    pre.y.push_back(p.loss);
  }
  const double offset = static_cast<double>(r.pretrain.size());
  for (const auto& h : r.history) {
    csv += "train," + std::to_string(h.epoch + 1) + "," + num(h.loss.reconstruction) + "," +
           num(h.loss.prediction) + "," + num(h.loss.monotonic) + "," + num(h.loss.total) + "," +
           (h.refreshed ? "1" : "0") + "\n";
    total.x.push_back(offset + h.epoch + 1);
    total.y.push_back(h.loss.total);
    rec.x.push_back(offset + h.epoch + 1);
    rec.y.push_back(h.loss.reconstruction);
  }
  write_text_file(paths.curves() / "hi_loss.csv", csv);
  write_text_file(paths.plots() / "hi_loss.svg",
                  render_svg({"Dynamic HI training loss", "epoch (pre-training first)", "loss",
                              {pre, total, rec}, {offset + 0.5}, {}, true}));
}

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

TrainSummary cmd_train(const ExperimentConfig& config, const TrainFlags& flags) {
  const RunPaths paths{config.out};
  const Dataset ds = load_dataset(config);
  TrainSummary summary;

  nn::OptimizerConfig ae_opt = config.skipae_optimizer;
  hi::HiConfig hi_cfg = config.hi;
  if (flags.max_epoch) {
    if (*flags.max_epoch < 0) throw ConfigError("--max-epoch must be >= 0");
    ae_opt.max_epoch = *flags.max_epoch;
    hi_cfg.optimizer.max_epoch = *flags.max_epoch;
    hi_cfg.pretrain_epochs = std::min(hi_cfg.pretrain_epochs, *flags.max_epoch);
  }

  std::vector<ingestion::SpectrumSample> pooled;
  for (const auto& b : ds.bearings) {
    if (b.role == Role::Train) pooled.insert(pooled.end(), b.spectra.begin(), b.spectra.end());
  }
  const auto dataset = skipae::stack_spectra(pooled);

  std::optional<skipae::SkipAEModel> model;
  int start_epoch = 0;
  if (flags.resume && fs::exists(paths.skipae_last() / "manifest.json")) {
    json state;
    model.emplace(skipae::load_skipae(paths.skipae_last(), &state));
    if (model->config().to_json() != config.skipae.to_json()) {
      throw ConfigError("--resume: checkpoint " + paths.skipae_last().string() +
                        " was trained with a different SkipAE configuration");
    }
    start_epoch = state.at("next_epoch").get<int>();
    for (const auto& r : state.at("history")) {
      summary.skipae_history.push_back({r.at(0).get<int>(), r.at(1).get<double>()});
    }
    summary.skipae_resumed_from = start_epoch;
  } else {
    fs::remove_all(paths.skipae_last());
    model.emplace(config.skipae, derive_seed(config.seed, kSkipAEInit));
  }

  skipae::TrainOptions opts;
  opts.optimizer = ae_opt;
  opts.seed = derive_seed(config.seed, kSkipAETrain);
  opts.start_epoch = start_epoch;
  opts.on_epoch = [&](const skipae::EpochRecord& r, skipae::SkipAEModel& m) {
    summary.skipae_history.push_back(r);
    json history = json::array();
    for (const auto& h : summary.skipae_history) history.push_back({h.epoch, h.loss});
    skipae::save_skipae(m, paths.skipae_last(), json{{"next_epoch", r.epoch + 1}, {"history", history}});
  };
  skipae::train_skipae(*model, dataset, opts);
  skipae::save_skipae(*model, paths.skipae_checkpoint(),
                      json{{"epochs", static_cast<int>(summary.skipae_history.size())}});
  write_skipae_curve(paths, summary.skipae_history);

  if (config.use_pca_hi) {
    fs::remove_all(paths.hi_checkpoint());
    fs::remove(paths.curves() / "hi_loss.csv");
    return summary;
  }

  std::vector<hi::BearingFeatures> features;
  for (const auto& b : ds.bearings) {
    if (b.role != Role::Train) continue;
    const auto fv = model->extract_features(b.spectra);
    hi::BearingFeatures bf{b.id, b.indices, Matrix(config.skipae.latent_dim, static_cast<Index>(fv.size()))};
    for (std::size_t i = 0; i < fv.size(); ++i) bf.features.col(static_cast<Index>(i)) = fv[i].z;
    features.push_back(std::move(bf));
  }
  hi::HiModel hi_model(hi_cfg, derive_seed(config.seed, kHiInit));
  hi::HiTrainOptions hopts;
  hopts.seed = derive_seed(config.seed, kHiTrain);
  summary.hi = hi::train_dynamic_hi(hi_model, std::move(features), hopts);
  hi_model.config() = config.hi;
  hi::save_hi_model(hi_model, paths.hi_checkpoint(),
                    json{{"epochs", static_cast<int>(summary.hi->history.size())},
                         {"pretrain_epochs", static_cast<int>(summary.hi->pretrain.size())},
                         {"stopped_early", summary.hi->stopped_early},
                         {"flipped_after_pretrain", summary.hi->flipped_after_pretrain}});
  write_hi_curve(paths, *summary.hi);
  return summary;
}

MethodContext::MethodContext(const ExperimentConfig& config, const Dataset& dataset)
    : config_(config), dataset_(dataset) {}

const hi::BearingFeatures& MethodContext::features(const std::string& bearing_id) {
  if (auto it = features_.find(bearing_id); it != features_.end()) return it->second;
  if (!skipae_) {
    const RunPaths paths{config_.out};
    require_checkpoint(paths.skipae_checkpoint(), "SkipAE");
    skipae_.emplace(skipae::load_skipae(paths.skipae_checkpoint()));
  }
  const auto& b = dataset_.find(bearing_id);
  const auto fv = skipae_->extract_features(b.spectra);
  hi::BearingFeatures bf{b.id, b.indices,
                         Matrix(skipae_->config().latent_dim, static_cast<Index>(fv.size()))};
  for (std::size_t i = 0; i < fv.size(); ++i) bf.features.col(static_cast<Index>(i)) = fv[i].z;
  return features_.emplace(bearing_id, std::move(bf)).first->second;
}

const hi::PcaProjection& MethodContext::pca() {
  if (!pca_) {
    std::vector<const Matrix*> parts;
    Index cols = 0;
    for (const auto& b : dataset_.bearings) {
      if (b.role != Role::Train) continue;
      parts.push_back(&features(b.id).features);
      cols += parts.back()->cols();
    }
    Matrix pooled(parts.front()->rows(), cols);
    Index at = 0;
    for (const auto* p : parts) {
      pooled.middleCols(at, p->cols()) = *p;
      at += p->cols();
    }
    pca_ = hi::fit_pca(pooled);
  }
  return *pca_;
}

hi::HiModel& MethodContext::hi_model() {
  if (!hi_) {
    const RunPaths paths{config_.out};
    require_checkpoint(paths.hi_checkpoint(), "dynamic HI");
    hi_.emplace(hi::load_hi_model(paths.hi_checkpoint()));
  }
  return *hi_;
}

const std::map<std::string, HiMethod>& hi_methods() {
  static const std::map<std::string, HiMethod> registry{
      {"ours",
       [](MethodContext& ctx, const BearingData& b) {
         if (ctx.config().use_pca_hi) return hi::pca_baseline_hi(ctx.features(b.id), ctx.pca());
         return hi::construct_hi(ctx.hi_model(), ctx.features(b.id));
       }},
      {"rms-baseline",
       [](MethodContext&, const BearingData& b) { return hi::normalize_hi(b.rms, b.id, b.indices); }},
      {"pca-ablation",
       [](MethodContext& ctx, const BearingData& b) {
         return hi::pca_baseline_hi(ctx.features(b.id), ctx.pca());
       }},
  };
  return registry;
}

const HiMethod& find_method(const std::string& name) {
  const auto& r = hi_methods();
  const auto it = r.find(name);
  if (it == r.end()) throw ConfigError("unknown HI method '" + name + "'");
  return it->second;
}

void cmd_construct(const ExperimentConfig& config) {
  const RunPaths paths{config.out};
  const Dataset ds = load_dataset(config);
  MethodContext ctx(config, ds);
  for (const auto& method : config.methods) {
    const auto& build = find_method(method);
    for (const auto& b : ds.bearings) {
      const auto series = build(ctx, b);
      hi::write_hi_csv(series, paths.hi_dir(method) / (file_safe(b.id) + ".csv"));
    }
  }
}

std::vector<MetricRow> cmd_evaluate(const ExperimentConfig& config) {
  const RunPaths paths{config.out};
  std::vector<MetricRow> rows;
  std::string csv = "bearing,method,role,mon,tred,rob,hs,smoothing_window,seed\n";
  auto add = [&](const BearingSource& source, Role role, const std::string& method) {
    const auto series =
        hi::read_hi_csv(paths.hi_dir(method) / (file_safe(source.id) + ".csv"), source.id);
    MetricRow row{source.id, method, role, metrics::evaluate_hi(series.values, config.smoothing_window)};
    const auto& m = row.report;
    csv += source.id + "," + method + "," + to_string(role) + "," + num(m.mon) + "," + num(m.tred) + "," +
           num(m.rob) + "," + num(m.hs) + "," + std::to_string(m.smoothing_window) + "," +
           std::to_string(config.seed) + "\n";

    const Vector trend = metrics::smooth_trend(series.values, config.smoothing_window);
    std::vector<double> x;
    for (const auto i : series.indices) x.push_back(static_cast<double>(i));
    PlotSpec plot{method + " HI, " + source.id + " (" + to_string(role) + ")",
                  "window",
                  "HI",
                  {{"HI", x, to_std(series.values), "#1f77b4"},
                   {"trend", x, to_std(trend), "#d62728", true}},
                  {},
                  {},
                  false};
    write_text_file(paths.plots() / ("hi_" + method + "_" + file_safe(source.id) + ".svg"), render_svg(plot));
    rows.push_back(std::move(row));
  };
  for (const auto& method : config.methods) {
    for (const auto& s : config.train) add(s, Role::Train, method);
    for (const auto& s : config.test) add(s, Role::Test, method);
  }
  write_text_file(paths.metrics_csv(), csv);
  return rows;
}

std::vector<ForecastRow> cmd_forecast(const ExperimentConfig& config) {
  const RunPaths paths{config.out};
  struct Job {
    std::size_t method_index;
    std::size_t bearing_index;
  };
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    for (std::size_t b = 0; b < config.test.size(); ++b) jobs.push_back({m, b});
  }
  std::vector<ForecastRow> rows(jobs.size());
  const Index lookback = config.forecaster.lookback;

  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto& method = config.methods[jobs[j].method_index];
    const auto& source = config.test[jobs[j].bearing_index];
    const auto series = hi::read_hi_csv(paths.hi_dir(method) / (file_safe(source.id) + ".csv"), source.id);
    const auto sp = prognosis::split(series.values, config.split, lookback);
    const auto fit = prognosis::fit_forecaster(
        sp.train, config.forecaster, derive_seed(config.seed, kForecast + 1000 * jobs[j].method_index + jobs[j].bearing_index));
    const Index horizon = sp.test.size();
    Vector full(sp.train.size() + horizon);
    full << sp.train, sp.test;
    const Vector forecast =
        config.teacher_forced
            ? prognosis::teacher_forced_forecast(fit.block, full, sp.train.size(), horizon)
            : prognosis::recursive_forecast(fit.block, sp.train.tail(lookback), horizon);
    const Vector smoothed = metrics::smooth_trend(full, config.smoothing_window).tail(horizon);

    ForecastRow row;
    row.bearing = source.id;
    row.method = method;
    row.raw = prognosis::evaluate_forecast(forecast, sp.test, config.pred_limit);
    row.smoothed = prognosis::evaluate_forecast(forecast, smoothed, config.pred_limit);
    row.prognosis = prognosis::estimate_rul(forecast, config.split, sp.first_prediction_step, &sp.test);
    row.rul_to_end = horizon;
    if (row.prognosis.rul_estimated) {
      row.accuracy_to_end = prognosis::rul_accuracy(horizon, *row.prognosis.rul_estimated);
    }
    row.first_prediction_step = sp.first_prediction_step;
    row.truth = sp.test;

    std::string csv = "step,predicted,actual,actual_smoothed\n";
    for (Index h = 0; h < horizon; ++h) {
      csv += std::to_string(sp.first_prediction_step + h) + "," + num(forecast[h]) + "," + num(sp.test[h]) +
             "," + num(smoothed[h]) + "\n";
    }
    const std::string stem = method + "_" + file_safe(source.id);
    write_text_file(paths.forecast_dir() / (stem + ".csv"), csv);
    PlotSpec plot{method + " forecast, " + source.id,
                  "step",
                  "HI",
                  {{"HI", steps(1, full.size()), to_std(full), "#1f77b4"},
                   {"forecast", steps(sp.first_prediction_step, horizon), to_std(forecast), "#ff7f0e", true}},
                  {static_cast<double>(sp.first_prediction_step)},
                  {config.split.threshold},
                  false};
    write_text_file(paths.plots() / ("forecast_" + stem + ".svg"), render_svg(plot));
    rows[j] = std::move(row);
  });

  std::string csv =
      "bearing,method,rmse,pred,rmse_smoothed,pred_smoothed,crossing_step,rul_estimated,rul_actual,"
      "accuracy,rul_to_end,accuracy_to_end,seed\n";
  for (const auto& r : rows) {
    const auto& p = r.prognosis;
    csv += r.bearing + "," + r.method + "," + num(r.raw.rmse) + "," + num(r.raw.pred) + "," +
           num(r.smoothed.rmse) + "," + num(r.smoothed.pred) + "," + opt_int(p.crossing_step) + "," +
           opt_int(p.rul_estimated) + "," + opt_int(p.rul_actual) + "," + opt_num(p.accuracy) + "," +
           std::to_string(r.rul_to_end) + "," + opt_num(r.accuracy_to_end) + "," + std::to_string(config.seed) +
           "\n";
  }
  write_text_file(paths.forecast_csv(), csv);
  return rows;
}

json cmd_report(const ExperimentConfig& config) {
  const RunPaths paths{config.out};
  auto hash_tree = [&](const fs::path& dir) {
    json out = json::object();
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out[fs::relative(f, paths.root).generic_string()] = git_blob_sha1_file(f);
    return out;
  };
  json checkpoints = json::object();
  for (const auto& dir : {paths.skipae_checkpoint(), paths.hi_checkpoint()}) checkpoints.update(hash_tree(dir));
  json outputs = json::object();
  for (const auto& f : {paths.metrics_csv(), paths.forecast_csv()}) {
    if (fs::exists(f)) outputs[fs::relative(f, paths.root).generic_string()] = git_blob_sha1_file(f);
  }
  for (const auto& dir : {paths.root / "hi", paths.forecast_dir(), paths.curves()}) outputs.update(hash_tree(dir));

  json manifest{{"config", config.to_json()},
                {"seed", config.seed},
                {"hashes", {{"checkpoints", checkpoints}, {"outputs", outputs}}}};
  write_text_file(paths.manifest(), manifest.dump(2) + "\n");
  return manifest;
}

json run_all(const ExperimentConfig& config, const TrainFlags& flags) {
  cmd_prepare(config);
  cmd_train(config, flags);
  cmd_construct(config);
  cmd_evaluate(config);
  cmd_forecast(config);
  return cmd_report(config);
}

}  // namespace dhi::pipeline
