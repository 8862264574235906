#pragma once

#include "dhi/nn/adam.hpp"
#include "dhi/nn/checkpoint.hpp"
#include "dhi/nn/init.hpp"
#include "dhi/nn/parameter.hpp"
#include "dhi/random.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dhi::hi {

struct LossWeights {
  double lambda = 0.1;
  double gamma = 1.0;
  double r = 10.0;
  int tau = 3;
  Index lookback = 20;

  void validate() const;
};

/// Which side of the prediction loss uses the periodically refreshed series.
enum class FrozenSide {
  Inputs,  // windows come from the frozen series, targets from the live encoder
  Target,  // windows from the live encoder, targets from the frozen series
};

struct HiConfig {
  Index feature_dim = 32;
  std::vector<Index> hidden{16, 8};
  Index pool_window = 9;
  LossWeights weights{};
  int pretrain_epochs = 100;
  nn::OptimizerConfig optimizer{};
  bool prediction_block_enabled = true;
  FrozenSide frozen_side = FrozenSide::Inputs;

  void validate() const;
  nlohmann::json to_json() const;
  static HiConfig from_json(const nlohmann::json& j);
};

/// Fully connected stack with ReLU between layers and a linear output.
/// Works on column-sample matrices (features x batch).
class DenseStack {
 public:
  struct Tape {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  DenseStack(const std::string& prefix, std::vector<Index> dims);

  void reset_parameters(Rng& rng);
  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;
  /// Accumulates parameter gradients; returns d(loss)/d(input).
  Matrix backward(const Tape& tape, const Matrix& grad_output);

  nn::ParameterRefs<Real> parameters();
  std::vector<nn::LayerRecord> layer_records() const;
  nn::Parameter<Real>& weight(std::size_t layer) { return weights_.at(layer); }
  nn::Parameter<Real>& bias(std::size_t layer) { return biases_.at(layer); }
  std::size_t layer_count() const { return weights_.size(); }
  Index input_dim() const { return dims_.front(); }
  Index output_dim() const { return dims_.back(); }

 private:
  std::string prefix_;
  std::vector<Index> dims_;
  std::vector<nn::Parameter<Real>> weights_;
  std::vector<nn::Parameter<Real>> biases_;
};

struct Decomposition {
  Vector trend;
  Vector seasonal;
};

/// trend = centered moving average (replicated edges), seasonal = window - trend.
Decomposition decompose(const Vector& window, Index pool_window);

/// Moving-average decomposition followed by one linear head per component.
class PredictionBlock {
 public:
  PredictionBlock(const std::string& prefix, Index lookback, Index pool_window);

  /// Uniform fan-in init, bound 1/sqrt(lookback), for weights and biases.
  void reset_parameters(Rng& rng);

  Decomposition decompose(const Vector& window) const;
  double predict(const Vector& window) const;
  /// Accumulates parameter gradients for d(loss)/d(prediction) = grad; returns d(loss)/d(window).
  Vector backward(const Vector& window, double grad);

  nn::Parameter<Real>& trend_weight() { return trend_weight_; }
  nn::Parameter<Real>& trend_bias() { return trend_bias_; }
  nn::Parameter<Real>& seasonal_weight() { return seasonal_weight_; }
  nn::Parameter<Real>& seasonal_bias() { return seasonal_bias_; }

  nn::ParameterRefs<Real> parameters();
  std::vector<nn::LayerRecord> layer_records() const;
  Index lookback() const { return lookback_; }
  Index pool_window() const { return pool_window_; }

 private:
  void check_window(const Vector& window) const;

  std::string prefix_;
  Index lookback_;
  Index pool_window_;
  nn::Parameter<Real> trend_weight_;
  nn::Parameter<Real> trend_bias_;
  nn::Parameter<Real> seasonal_weight_;
  nn::Parameter<Real> seasonal_bias_;
};

/// HI encoder (features -> scalar), HI decoder (scalar -> features) and the inner
/// prediction block.
class HiModel {
 public:
  HiModel(const HiConfig& config, std::uint64_t seed);

  /// One HI value per feature column.
  Vector encode(const Matrix& features) const;
  double encode_sample(const Vector& z) const;
  Matrix reconstruct(const Matrix& features) const;

  DenseStack& encoder() { return encoder_; }
  DenseStack& decoder() { return decoder_; }
  PredictionBlock& predictor() { return predictor_; }
  const PredictionBlock& predictor() const { return predictor_; }

  /// Negates the HI (encoder output layer and decoder input weights); the
  /// reconstruction is unchanged.
  void flip_orientation();

  nn::ParameterRefs<Real> parameters();
  nn::ParameterRefs<Real> autoencoder_parameters();
  std::vector<nn::LayerRecord> layer_records() const;
  const HiConfig& config() const { return config_; }
  HiConfig& config() { return config_; }
  std::uint64_t seed() const { return seed_; }

 private:
  void check_features(const Matrix& features) const;

  HiConfig config_;
  std::uint64_t seed_;
  DenseStack encoder_;
  DenseStack decoder_;
  PredictionBlock predictor_;
};

/// Mean over columns of the squared L2 distance.
double hi_reconstruction_loss(const Matrix& features, const Matrix& reconstruction);
/// Mean over i = 2..n of (y_i - y_{i-1} - r)^2.
double monotonic_loss(const Vector& y, double r);
Vector monotonic_loss_grad(const Vector& y, double r);
/// Mean over k = L+1..n of (targets_k - predict(inputs_{k-L..k-1}))^2.
double prediction_loss(const Vector& inputs, const Vector& targets, const PredictionBlock& block);
double prediction_loss(const Vector& y, const PredictionBlock& block);

struct PredictionLossGrad {
  double loss = 0.0;
  Vector d_inputs;
  Vector d_targets;
};
/// Gradients of weight * loss; the block's parameter gradients are accumulated
/// as a side effect. `loss` itself is unweighted.
PredictionLossGrad prediction_loss_backward(const Vector& inputs, const Vector& targets,
                                            PredictionBlock& block, double weight = 1.0);

double combined_loss(double reconstruction, double prediction, double monotonic,
                     const LossWeights& weights);

/// Feature matrix (dim x n) of one bearing, columns in window order.
struct BearingFeatures {
  std::string bearing_id;
  std::vector<Index> indices;
  Matrix features;
};

struct SequenceTerm {
  const Matrix* features = nullptr;
  const Vector* frozen = nullptr;
};

struct LossTerms {
  double reconstruction = 0.0;
  double prediction = 0.0;
  double monotonic = 0.0;
  double total = 0.0;
};

/// The training objective for one optimizer step: reconstruction over `batch`
/// plus the sequence losses averaged over `sequences`. With `backprop` set,
/// parameter gradients are accumulated. The frozen series is treated as a constant.
LossTerms combined_objective(HiModel& model, const Matrix& batch,
                             const std::vector<SequenceTerm>& sequences, bool backprop);

struct HiNormalization {
  double min = 0.0;
  double max = 1.0;
  bool flipped = false;
};

struct HiSeries {
  std::string bearing_id;
  std::vector<Index> indices;
  Vector raw;
  Vector values;
  HiNormalization normalization;
};

/// Min-max scaling to [0, 1], then 1 - y when the Spearman correlation with
/// time is negative. Throws DegenerateSeriesError for a constant series.
HiSeries normalize_hi(const Vector& raw, const std::string& bearing_id = {},
                      std::vector<Index> indices = {});

HiSeries construct_hi(const HiModel& model, const BearingFeatures& bearing);

struct HiEpochRecord {
  int epoch = 0;
  LossTerms loss;
  bool refreshed = false;
};

struct PretrainRecord {
  int epoch = 0;
  double loss = 0.0;
};

struct HiTrainOptions {
  std::uint64_t seed = 0;
  std::function<void(const HiEpochRecord&)> on_epoch;
  /// Called whenever the frozen series is refreshed, with the epoch and the new series.
  std::function<void(int, const std::vector<Vector>&)> on_refresh;
};

struct HiTrainResult {
  std::vector<PretrainRecord> pretrain;
  std::vector<HiEpochRecord> history;
  bool stopped_early = false;
  bool flipped_after_pretrain = false;
  std::vector<HiSeries> series;
};

/// Pre-trains the autoencoder on the reconstruction loss alone and orients the
/// HI so that it rises over the training runs on average, then runs the
/// combined objective with one Adam step per shuffled mini-batch. The frozen
/// series is re-encoded on epochs divisible by tau. Early stopping monitors the
/// combined loss over all training windows, evaluated after each epoch's updates.
/// Bearings are processed in bearing_id order.
HiTrainResult train_dynamic_hi(HiModel& model, std::vector<BearingFeatures> bearings,
                               const HiTrainOptions& options);

struct PcaProjection {
  Vector mean;
  Vector direction;
  double explained_variance = 0.0;

  Vector project(const Matrix& features) const;
};

/// First principal axis of the columns of `features`. The sign is fixed so the
/// largest-magnitude loading is positive.
PcaProjection fit_pca(const Matrix& features);
HiSeries pca_baseline_hi(const BearingFeatures& bearing);
HiSeries pca_baseline_hi(const BearingFeatures& bearing, const PcaProjection& projection);

void write_hi_csv(const HiSeries& series, const std::filesystem::path& path);
HiSeries read_hi_csv(const std::filesystem::path& path, const std::string& bearing_id = {});

void save_hi_model(HiModel& model, const std::filesystem::path& dir,
                   const nlohmann::json& state = nlohmann::json::object());
HiModel load_hi_model(const std::filesystem::path& dir, nlohmann::json* state = nullptr);

}  // namespace dhi::hi
