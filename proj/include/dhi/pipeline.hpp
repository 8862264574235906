#pragma once

// Experiment orchestration behind the command-line tool: dataset cache,
// two-stage training, HI construction, scoring, forecasting and reporting.

#include "dhi/dynamic_hi.hpp"
#include "dhi/ingestion.hpp"
#include "dhi/metrics.hpp"
#include "dhi/prognosis.hpp"
#include "dhi/skipae.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dhi::pipeline {

enum class SourceFormat { Pronostia, Generic, Synthetic };

struct BearingSource {
  std::string id;
  SourceFormat format = SourceFormat::Synthetic;
  std::filesystem::path path;
  ingestion::SynthConfig synth{};
};

struct ExperimentConfig {
  std::vector<BearingSource> train;
  std::vector<BearingSource> test;

  skipae::SkipAEConfig skipae{};
  nn::OptimizerConfig skipae_optimizer{};
  hi::HiConfig hi{};

  Index smoothing_window = metrics::kDefaultSmoothingWindow;
  std::vector<std::string> methods{"ours", "rms-baseline", "pca-ablation"};

  prognosis::SplitSpec split{};
  prognosis::ForecasterConfig forecaster{};
  double pred_limit = metrics::kDefaultPredLimit;
  bool teacher_forced = false;

  /// Replaces the learned HI ("ours") with PCA on the SkipAE features and skips stage 2.
  bool use_pca_hi = false;

  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";

  void validate() const;
  nlohmann::json to_json() const;
};

/// Checks `j` against the config schema; errors carry the JSON pointer of the
/// offending value. A run manifest (an object with a "config" member) is accepted too.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Reference schema (a JSON Schema subset) used by config_from_json.
const nlohmann::json& config_schema();
/// Returns the JSON pointer paths and messages of every schema violation.
std::vector<std::string> schema_violations(const nlohmann::json& schema, const nlohmann::json& value);

/// Output layout under ExperimentConfig::out.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path cache() const { return root / "cache"; }
  std::filesystem::path skipae_checkpoint() const { return root / "checkpoints" / "skipae"; }
  std::filesystem::path skipae_last() const { return root / "checkpoints" / "skipae_last"; }
  std::filesystem::path hi_checkpoint() const { return root / "checkpoints" / "hi"; }
  std::filesystem::path curves() const { return root / "curves"; }
  std::filesystem::path hi_dir(const std::string& method) const { return root / "hi" / method; }
  std::filesystem::path forecast_dir() const { return root / "forecast"; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
  std::filesystem::path forecast_csv() const { return root / "forecast.csv"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

enum class Role { Train, Test };
std::string to_string(Role role);

/// One cached bearing: raw spectra (windows x bins), RMS series and indices.
struct BearingData {
  std::string id;
  Role role = Role::Train;
  std::vector<Index> indices;
  Index end_of_life_index = 0;
  std::vector<ingestion::SpectrumSample> spectra;  // standardized
  Vector rms;
};

struct Dataset {
  ingestion::StandardizationStats stats;
  std::vector<BearingData> bearings;  // training bearings first, then test

  const BearingData& find(const std::string& id) const;
};

struct PrepareResult {
  bool cache_hit = false;
  std::string fingerprint;
};

/// Computes spectra, RMS and training-set standardization once per distinct
/// input fingerprint; later calls with unchanged inputs reuse the cache.
PrepareResult cmd_prepare(const ExperimentConfig& config);
Dataset load_dataset(const ExperimentConfig& config);

struct TrainFlags {
  /// Overrides every stage's epoch budget (pre-training included).
  std::optional<int> max_epoch;
  /// Continues SkipAE training from the last per-epoch checkpoint.
  bool resume = false;
};

struct TrainSummary {
  std::vector<skipae::EpochRecord> skipae_history;
  std::optional<hi::HiTrainResult> hi;
  int skipae_resumed_from = 0;
};

/// SkipAE then dynamic HI; writes loss CSVs and plots and a per-epoch SkipAE checkpoint.
TrainSummary cmd_train(const ExperimentConfig& config, const TrainFlags& flags = {});

/// Lazily loaded models shared by the HI construction methods of one command.
class MethodContext {
 public:
  MethodContext(const ExperimentConfig& config, const Dataset& dataset);

  const ExperimentConfig& config() const { return config_; }
  const Dataset& dataset() const { return dataset_; }
  const hi::BearingFeatures& features(const std::string& bearing_id);
  const hi::PcaProjection& pca();
  hi::HiModel& hi_model();

 private:
  const ExperimentConfig& config_;
  const Dataset& dataset_;
  std::optional<skipae::SkipAEModel> skipae_;
  std::map<std::string, hi::BearingFeatures> features_;
  std::optional<hi::PcaProjection> pca_;
  std::optional<hi::HiModel> hi_;
};

using HiMethod = std::function<hi::HiSeries(MethodContext&, const BearingData&)>;

/// String-keyed registry: "ours", "rms-baseline", "pca-ablation".
const std::map<std::string, HiMethod>& hi_methods();
const HiMethod& find_method(const std::string& name);

/// Writes hi/<method>/<bearing>.csv for every bearing and configured method.
void cmd_construct(const ExperimentConfig& config);

struct MetricRow {
  std::string bearing;
  std::string method;
  Role role = Role::Train;
  metrics::MetricReport report;
};

/// Scores every constructed HI, writes metrics.csv and one SVG per curve.
std::vector<MetricRow> cmd_evaluate(const ExperimentConfig& config);

struct ForecastRow {
  std::string bearing;
  std::string method;
  metrics::ForecastReport raw;
  metrics::ForecastReport smoothed;
  prognosis::PrognosisResult prognosis;
  /// Steps from the first prediction step to the last window (the recorded failure).
  Index rul_to_end = 0;
  std::optional<double> accuracy_to_end;
  Index first_prediction_step = 0;
  Vector truth;
};

/// Fits a forecaster on the head of each test HI and predicts its tail.
std::vector<ForecastRow> cmd_forecast(const ExperimentConfig& config);

/// Writes manifest.json: the resolved config and git blob hashes of checkpoints and outputs.
nlohmann::json cmd_report(const ExperimentConfig& config);

/// prepare, train, construct, evaluate, forecast and report in sequence.
nlohmann::json run_all(const ExperimentConfig& config, const TrainFlags& flags = {});

/// Git blob identifier: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(const std::string& bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

/// Worker count from DHI_NUM_THREADS (default 1). Throws ConfigError when malformed.
int thread_count();

// Deterministic, self-contained SVG line plots.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<double> vertical_markers;
  std::vector<double> horizontal_markers;
  bool log_y = false;
};

std::string render_svg(const PlotSpec& spec);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace dhi::pipeline
