#include "dhi/dynamic_hi.hpp"

#include "dhi/metrics.hpp"
#include "dhi/nn/ops.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dhi::hi {

using nlohmann::json;

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw ConfigError("loss weights: lambda and gamma must be >= 0");
  if (!std::isfinite(r)) throw ConfigError("loss weights: r must be finite");
  if (tau < 1) throw ConfigError("loss weights: tau must be >= 1");
  if (lookback < 2) throw ConfigError("loss weights: lookback must be >= 2");
}

void HiConfig::validate() const {
  weights.validate();
  optimizer.validate();
  if (feature_dim < 1) throw ConfigError("hi config: feature_dim must be >= 1");
  for (auto h : hidden) {
    if (h < 1) throw ConfigError("hi config: hidden widths must be >= 1");
  }
  nn::check_pool_window(pool_window);
  if (pretrain_epochs < 0) throw ConfigError("hi config: pretrain_epochs must be >= 0");
}

namespace {

const char* to_string(FrozenSide side) { return side == FrozenSide::Inputs ? "inputs" : "target"; }

FrozenSide frozen_side_from_string(const std::string& s) {
  if (s == "inputs") return FrozenSide::Inputs;
  if (s == "target") return FrozenSide::Target;
  throw ConfigError("hi config: frozen_side must be \"inputs\" or \"target\", got \"" + s + "\"");
}

}  // namespace

json HiConfig::to_json() const {
  return json{{"feature_dim", feature_dim},
              {"hidden", hidden},
              {"pool_window", pool_window},
              {"lambda", weights.lambda},
              {"gamma", weights.gamma},
              {"r", weights.r},
              {"tau", weights.tau},
              {"lookback", weights.lookback},
              {"pretrain_epochs", pretrain_epochs},
              {"learning_rate", optimizer.learning_rate},
              {"max_epoch", optimizer.max_epoch},
              {"batch_size", optimizer.batch_size},
              {"patience", optimizer.patience},
              {"prediction_block_enabled", prediction_block_enabled},
              {"frozen_side", to_string(frozen_side)}};
}

HiConfig HiConfig::from_json(const json& j) {
  HiConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<Index>>();
  c.pool_window = j.value("pool_window", c.pool_window);
  c.weights.lambda = j.value("lambda", c.weights.lambda);
  c.weights.gamma = j.value("gamma", c.weights.gamma);
  c.weights.r = j.value("r", c.weights.r);
  c.weights.tau = j.value("tau", c.weights.tau);
  c.weights.lookback = j.value("lookback", c.weights.lookback);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  c.optimizer.max_epoch = j.value("max_epoch", c.optimizer.max_epoch);
  c.optimizer.batch_size = j.value("batch_size", c.optimizer.batch_size);
  c.optimizer.patience = j.value("patience", c.optimizer.patience);
  c.prediction_block_enabled = j.value("prediction_block_enabled", c.prediction_block_enabled);
  if (j.contains("frozen_side")) c.frozen_side = frozen_side_from_string(j.at("frozen_side"));
  return c;
}

// ---------------------------------------------------------------------------

DenseStack::DenseStack(const std::string& prefix, std::vector<Index> dims)
    : prefix_(prefix), dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ConfigError(prefix_ + ": need at least one layer");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    const std::string base = prefix_ + ".fc" + std::to_string(i + 1);
    weights_.emplace_back(base + ".weight", std::vector<Index>{dims_[i + 1], dims_[i]});
    biases_.emplace_back(base + ".bias", std::vector<Index>{dims_[i + 1]});
  }
}

void DenseStack::reset_parameters(Rng& rng) {
  const double relu_gain = nn::rectifier_gain(0.0);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const double gain = i + 1 < weights_.size() ? relu_gain : 1.0;
    nn::kaiming_uniform(weights_[i], dims_[i], gain, rng);
    nn::bias_uniform(biases_[i], dims_[i], rng);
  }
}

Matrix DenseStack::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != dims_.front()) {
    throw DimensionError(prefix_ + ": feature axis mismatch (got " + std::to_string(x.rows()) +
                         ", expected " + std::to_string(dims_.front()) + ")");
  }
  if (tape != nullptr) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    Matrix z = weights_[i].matrix(dims_[i + 1], dims_[i]) * h;
    z.colwise() += biases_[i].values;
    if (tape != nullptr) {
      tape->inputs.push_back(h);
      tape->pre.push_back(z);
    }
    h = i + 1 < weights_.size() ? Matrix(z.cwiseMax(0.0)) : z;
  }
  return h;
}

Matrix DenseStack::backward(const Tape& tape, const Matrix& grad_output) {
  if (tape.inputs.size() != weights_.size()) {
    throw StateError(prefix_ + ": backward called without a recorded forward pass");
  }
  Matrix g = grad_output;
  for (std::size_t ii = weights_.size(); ii-- > 0;) {
    if (ii + 1 < weights_.size()) g = (tape.pre[ii].array() > 0.0).select(g, 0.0);
    weights_[ii].grad_matrix(dims_[ii + 1], dims_[ii]).noalias() += g * tape.inputs[ii].transpose();
    biases_[ii].grad += g.rowwise().sum();
    g = weights_[ii].matrix(dims_[ii + 1], dims_[ii]).transpose() * g;
  }
  return g;
}

nn::ParameterRefs<Real> DenseStack::parameters() {
  nn::ParameterRefs<Real> params;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    params.push_back(&weights_[i]);
    params.push_back(&biases_[i]);
  }
  return params;
}

std::vector<nn::LayerRecord> DenseStack::layer_records() const {
  std::vector<nn::LayerRecord> records;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const std::string base = prefix_ + ".fc" + std::to_string(i + 1);
    records.push_back({base, nn::LayerSpec::dense(dims_[i], dims_[i + 1])});
    if (i + 1 < weights_.size()) records.push_back({base + "_act", nn::LayerSpec::relu()});
  }
  return records;
}

// ---------------------------------------------------------------------------

Decomposition decompose(const Vector& window, Index pool_window) {
  Decomposition d;
  d.trend = nn::avgpool1d_same(window, pool_window);
  d.seasonal = window - d.trend;
  return d;
}

PredictionBlock::PredictionBlock(const std::string& prefix, Index lookback, Index pool_window)
    : prefix_(prefix),
      lookback_(lookback),
      pool_window_(pool_window),
      trend_weight_(prefix + ".trend.weight", {1, lookback}),
      trend_bias_(prefix + ".trend.bias", {1}),
      seasonal_weight_(prefix + ".seasonal.weight", {1, lookback}),
      seasonal_bias_(prefix + ".seasonal.bias", {1}) {
  if (lookback < 2) throw ConfigError(prefix + ": lookback must be >= 2");
  nn::check_pool_window(pool_window);
}

void PredictionBlock::reset_parameters(Rng& rng) {
  for (auto* p : parameters()) nn::bias_uniform(*p, lookback_, rng);
}

void PredictionBlock::check_window(const Vector& window) const {
  if (window.size() != lookback_) {
    throw DimensionError(prefix_ + ": window length " + std::to_string(window.size()) +
                         ", expected " + std::to_string(lookback_));
  }
}

Decomposition PredictionBlock::decompose(const Vector& window) const {
  check_window(window);
  return hi::decompose(window, pool_window_);
}

double PredictionBlock::predict(const Vector& window) const {
  const auto d = decompose(window);
  return trend_weight_.values.dot(d.trend) + trend_bias_.values[0] +
         seasonal_weight_.values.dot(d.seasonal) + seasonal_bias_.values[0];
}

Vector PredictionBlock::backward(const Vector& window, double grad) {
  const auto d = decompose(window);
  trend_weight_.grad += grad * d.trend;
  trend_bias_.grad[0] += grad;
  seasonal_weight_.grad += grad * d.seasonal;
  seasonal_bias_.grad[0] += grad;
  const Vector through_trend = grad * (trend_weight_.values - seasonal_weight_.values);
  const auto pooled = nn::avgpool1d_same_backward(
      nn::Tensor3<Real>::from_data(1, 1, lookback_, through_trend), pool_window_);
  return grad * seasonal_weight_.values + pooled.data();
}

nn::ParameterRefs<Real> PredictionBlock::parameters() {
  return {&trend_weight_, &trend_bias_, &seasonal_weight_, &seasonal_bias_};
}

std::vector<nn::LayerRecord> PredictionBlock::layer_records() const {
  return {{prefix_ + ".decompose", nn::LayerSpec::avgpool(pool_window_)},
          {prefix_ + ".trend", nn::LayerSpec::dense(lookback_, 1)},
          {prefix_ + ".seasonal", nn::LayerSpec::dense(lookback_, 1)}};
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Index> encoder_dims(const HiConfig& c) {
  std::vector<Index> dims{c.feature_dim};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(1);
  return dims;
}

std::vector<Index> decoder_dims(const HiConfig& c) {
  auto dims = encoder_dims(c);
  std::reverse(dims.begin(), dims.end());
  return dims;
}

}  // namespace

HiModel::HiModel(const HiConfig& config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      encoder_("hi.encoder", encoder_dims(config)),
      decoder_("hi.decoder", decoder_dims(config)),
      predictor_("hi.prediction", config.weights.lookback, config.pool_window) {
  config_.validate();
  Rng rng(derive_seed(seed, 0x41));
  encoder_.reset_parameters(rng);
  decoder_.reset_parameters(rng);
  predictor_.reset_parameters(rng);
}

void HiModel::check_features(const Matrix& features) const {
  if (features.rows() != config_.feature_dim) {
    throw DimensionError("hi model: feature axis mismatch (got " + std::to_string(features.rows()) +
                         ", expected " + std::to_string(config_.feature_dim) + ")");
  }
}

Vector HiModel::encode(const Matrix& features) const {
  check_features(features);
  return encoder_.forward(features).row(0).transpose();
}

double HiModel::encode_sample(const Vector& z) const { return encode(Matrix(z))[0]; }

Matrix HiModel::reconstruct(const Matrix& features) const {
  check_features(features);
  return decoder_.forward(encoder_.forward(features));
}

void HiModel::flip_orientation() {
  auto negate = [](nn::Parameter<Real>& p) {
    p.values = -p.values;
    p.adam_m = -p.adam_m;
    p.grad = -p.grad;
  };
  negate(encoder_.weight(encoder_.layer_count() - 1));
  negate(encoder_.bias(encoder_.layer_count() - 1));
  negate(decoder_.weight(0));
}

nn::ParameterRefs<Real> HiModel::autoencoder_parameters() {
  auto params = encoder_.parameters();
  const auto dec = decoder_.parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  return params;
}

nn::ParameterRefs<Real> HiModel::parameters() {
  auto params = autoencoder_parameters();
  const auto pred = predictor_.parameters();
  params.insert(params.end(), pred.begin(), pred.end());
  return params;
}

std::vector<nn::LayerRecord> HiModel::layer_records() const {
  auto records = encoder_.layer_records();
  for (auto& r : decoder_.layer_records()) records.push_back(r);
  for (auto& r : predictor_.layer_records()) records.push_back(r);
  return records;
}

// ---------------------------------------------------------------------------

double hi_reconstruction_loss(const Matrix& features, const Matrix& reconstruction) {
  if (features.rows() != reconstruction.rows() || features.cols() != reconstruction.cols()) {
    throw DimensionError("hi_reconstruction_loss: shape mismatch");
  }
  if (features.cols() == 0) throw DataError("hi_reconstruction_loss: empty batch");
  return (features - reconstruction).squaredNorm() / static_cast<double>(features.cols());
}

double monotonic_loss(const Vector& y, double r) {
  if (y.size() < 2) throw InsufficientHistoryError("monotonic_loss: need at least 2 points");
  const Index m = y.size() - 1;
  const Vector e = (y.tail(m) - y.head(m)).array() - r;
  return e.squaredNorm() / static_cast<double>(m);
}

Vector monotonic_loss_grad(const Vector& y, double r) {
  if (y.size() < 2) throw InsufficientHistoryError("monotonic_loss: need at least 2 points");
  const Index m = y.size() - 1;
  const Vector e = ((y.tail(m) - y.head(m)).array() - r) * (2.0 / static_cast<double>(m));
  Vector g = Vector::Zero(y.size());
  g.tail(m) += e;
  g.head(m) -= e;
  return g;
}

namespace {

void check_history(const Vector& inputs, const Vector& targets, const PredictionBlock& block) {
  if (inputs.size() != targets.size()) {
    throw DimensionError("prediction_loss: input and target series lengths differ");
  }
  if (inputs.size() <= block.lookback()) {
    throw InsufficientHistoryError("prediction_loss: series of length " +
                                   std::to_string(inputs.size()) + " needs more than " +
                                   std::to_string(block.lookback()) + " points");
  }
}

}  // namespace

double prediction_loss(const Vector& inputs, const Vector& targets, const PredictionBlock& block) {
  check_history(inputs, targets, block);
  const Index lb = block.lookback();
  const Index n = inputs.size();
  double acc = 0.0;
  for (Index t = lb; t < n; ++t) {
    const double e = targets[t] - block.predict(inputs.segment(t - lb, lb));
    acc += e * e;
  }
  return acc / static_cast<double>(n - lb);
}

double prediction_loss(const Vector& y, const PredictionBlock& block) {
  return prediction_loss(y, y, block);
}

PredictionLossGrad prediction_loss_backward(const Vector& inputs, const Vector& targets,
                                            PredictionBlock& block, double weight) {
  check_history(inputs, targets, block);
  const Index lb = block.lookback();
  const Index n = inputs.size();
  const double scale = 2.0 * weight / static_cast<double>(n - lb);
  PredictionLossGrad out;
  out.d_inputs = Vector::Zero(n);
  out.d_targets = Vector::Zero(n);
  double acc = 0.0;
  for (Index t = lb; t < n; ++t) {
    const Vector window = inputs.segment(t - lb, lb);
    const double e = targets[t] - block.predict(window);
    acc += e * e;
    out.d_targets[t] += scale * e;
    out.d_inputs.segment(t - lb, lb) += block.backward(window, -scale * e);
  }
  out.loss = acc / static_cast<double>(n - lb);
  return out;
}

double combined_loss(double reconstruction, double prediction, double monotonic,
                     const LossWeights& weights) {
  return reconstruction + weights.lambda * prediction + weights.gamma * monotonic;
}

LossTerms combined_objective(HiModel& model, const Matrix& batch,
                             const std::vector<SequenceTerm>& sequences, bool backprop) {
  const auto& cfg = model.config();
  LossTerms terms;
  {
    DenseStack::Tape enc_tape;
    DenseStack::Tape dec_tape;
    const Matrix y = model.encoder().forward(batch, &enc_tape);
    const Matrix recon = model.decoder().forward(y, &dec_tape);
    terms.reconstruction = hi_reconstruction_loss(batch, recon);
    if (backprop) {
      const Matrix g = (2.0 / static_cast<double>(batch.cols())) * (recon - batch);
      model.encoder().backward(enc_tape, model.decoder().backward(dec_tape, g));
    }
  }

  const double lambda = cfg.prediction_block_enabled ? cfg.weights.lambda : 0.0;
  const double per_seq = sequences.empty() ? 0.0 : 1.0 / static_cast<double>(sequences.size());
  for (const auto& seq : sequences) {
    DenseStack::Tape tape;
    const Vector y = model.encoder().forward(*seq.features, &tape).row(0).transpose();
    const double mono = monotonic_loss(y, cfg.weights.r);
    terms.monotonic += per_seq * mono;
    Vector gy = Vector::Zero(y.size());
    if (backprop) gy += (cfg.weights.gamma * per_seq) * monotonic_loss_grad(y, cfg.weights.r);

    if (cfg.prediction_block_enabled) {
      const bool inputs_frozen = cfg.frozen_side == FrozenSide::Inputs;
      const Vector& inputs = inputs_frozen ? *seq.frozen : y;
      const Vector& targets = inputs_frozen ? y : *seq.frozen;
      if (backprop) {
        const auto pg =
            prediction_loss_backward(inputs, targets, model.predictor(), lambda * per_seq);
        gy += inputs_frozen ? pg.d_targets : pg.d_inputs;
        terms.prediction += per_seq * pg.loss;
      } else {
        terms.prediction += per_seq * prediction_loss(inputs, targets, model.predictor());
      }
    }
    if (backprop) model.encoder().backward(tape, gy.transpose());
  }
  LossWeights effective = cfg.weights;
  effective.lambda = lambda;
  terms.total = combined_loss(terms.reconstruction, terms.prediction, terms.monotonic, effective);
  return terms;
}

// ---------------------------------------------------------------------------

HiSeries normalize_hi(const Vector& raw, const std::string& bearing_id, std::vector<Index> indices) {
  if (raw.size() < 2) throw DegenerateSeriesError("normalize_hi: need at least 2 points");
  if (!raw.allFinite()) throw NumericalError("normalize_hi: series contains non-finite values");
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (!(hi > lo)) {
    throw DegenerateSeriesError("normalize_hi: constant series" +
                                (bearing_id.empty() ? std::string() : " for " + bearing_id));
  }
  HiSeries s;
  s.bearing_id = bearing_id;
  if (indices.empty()) {
    for (Index i = 0; i < raw.size(); ++i) indices.push_back(i + 1);
  }
  if (static_cast<Index>(indices.size()) != raw.size()) {
    throw DimensionError("normalize_hi: index list length differs from series length");
  }
  s.indices = std::move(indices);
  s.raw = raw;
  s.values = (raw.array() - lo) / (hi - lo);
  s.normalization.min = lo;
  s.normalization.max = hi;
  const Vector t = Vector::LinSpaced(raw.size(), 1.0, static_cast<double>(raw.size()));
  if (metrics::spearman(s.values, t) < 0.0) {
    s.values = 1.0 - s.values.array();
    s.normalization.flipped = true;
  }
  return s;
}

HiSeries construct_hi(const HiModel& model, const BearingFeatures& bearing) {
  return normalize_hi(model.encode(bearing.features), bearing.bearing_id, bearing.indices);
}

HiTrainResult train_dynamic_hi(HiModel& model, std::vector<BearingFeatures> bearings,
                               const HiTrainOptions& options) {
  const auto& cfg = model.config();
  cfg.validate();
  if (bearings.empty()) throw DataError("train_dynamic_hi: no training bearings");
  std::sort(bearings.begin(), bearings.end(),
            [](const BearingFeatures& a, const BearingFeatures& b) { return a.bearing_id < b.bearing_id; });
  Index total = 0;
  for (const auto& b : bearings) {
    if (b.features.rows() != cfg.feature_dim) {
      throw DimensionError("train_dynamic_hi: bearing " + b.bearing_id + " has " +
                           std::to_string(b.features.rows()) + " features, expected " +
                           std::to_string(cfg.feature_dim));
    }
    if (b.features.cols() < 2 ||
        (cfg.prediction_block_enabled && b.features.cols() <= cfg.weights.lookback)) {
      throw InsufficientHistoryError("train_dynamic_hi: bearing " + b.bearing_id + " has " +
                                     std::to_string(b.features.cols()) +
                                     " windows, not enough for lookback " +
                                     std::to_string(cfg.weights.lookback));
    }
    total += b.features.cols();
  }
  Matrix pooled(cfg.feature_dim, total);
  {
    Index col = 0;
    for (const auto& b : bearings) {
      pooled.middleCols(col, b.features.cols()) = b.features;
      col += b.features.cols();
    }
  }
  auto gather = [&pooled](const std::vector<Index>& idx) {
    Matrix out(pooled.rows(), static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Index>(i)) = pooled.col(idx[i]);
    return out;
  };

  HiTrainResult result;
  const auto ae_params = model.autoencoder_parameters();
  const auto all_params = model.parameters();
  nn::zero_grads(all_params);

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    Rng rng(derive_seed(options.seed, 0x10000000ULL + static_cast<std::uint64_t>(epoch)));
    const auto batches = nn::make_batches(total, cfg.optimizer.batch_size, rng);
    double acc = 0.0;
    for (const auto& idx : batches) {
      const auto terms = combined_objective(model, gather(idx), {}, true);
      acc += terms.reconstruction;
      nn::adam_step(ae_params, cfg.optimizer);
    }
    const double loss = acc / static_cast<double>(batches.size());
    if (!std::isfinite(loss)) {
      throw NumericalError("train_dynamic_hi: non-finite pre-training loss at epoch " +
                           std::to_string(epoch));
    }
    result.pretrain.push_back({epoch, loss});
  }
  nn::zero_grads(all_params);

  std::vector<Vector> frozen;
  double orientation = 0.0;
  for (const auto& b : bearings) {
    frozen.push_back(model.encode(b.features));
    const Vector t = Vector::LinSpaced(b.features.cols(), 1.0, static_cast<double>(b.features.cols()));
    const Vector& y = frozen.back();
    if (y.maxCoeff() > y.minCoeff()) orientation += metrics::spearman(y, t);
  }
  if (orientation < 0.0) {
    model.flip_orientation();
    result.flipped_after_pretrain = true;
    for (auto& y : frozen) y = -y;
  }
  std::vector<SequenceTerm> sequences;
  for (std::size_t i = 0; i < bearings.size(); ++i) {
    sequences.push_back({&bearings[i].features, &frozen[i]});
  }

  nn::EarlyStopping stopper(cfg.optimizer.patience);
  for (int epoch = 0; epoch < cfg.optimizer.max_epoch; ++epoch) {
    HiEpochRecord record;
    record.epoch = epoch;
    if (epoch % cfg.weights.tau == 0) {
      for (std::size_t i = 0; i < bearings.size(); ++i) frozen[i] = model.encode(bearings[i].features);
      record.refreshed = true;
      if (options.on_refresh) options.on_refresh(epoch, frozen);
    }
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
    const auto batches = nn::make_batches(total, cfg.optimizer.batch_size, rng);
    for (const auto& idx : batches) {
      const auto terms = combined_objective(model, gather(idx), sequences, true);
      if (!std::isfinite(terms.total)) {
        std::ostringstream msg;
        msg << "train_dynamic_hi: non-finite combined loss at epoch " << epoch << " (rec "
            << terms.reconstruction << ", pre " << terms.prediction << ", mono " << terms.monotonic
            << ")";
        throw NumericalError(msg.str());
      }
      nn::adam_step(all_params, cfg.optimizer);
    }
    record.loss = combined_objective(model, pooled, sequences, false);
    result.history.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
    if (stopper.update(record.loss.total)) {
      result.stopped_early = true;
      break;
    }
  }

  for (const auto& b : bearings) result.series.push_back(construct_hi(model, b));
  return result;
}

// ---------------------------------------------------------------------------

Vector PcaProjection::project(const Matrix& features) const {
  if (features.rows() != mean.size()) {
    throw DimensionError("pca: feature axis mismatch (got " + std::to_string(features.rows()) +
                         ", expected " + std::to_string(mean.size()) + ")");
  }
  return (features.colwise() - mean).transpose() * direction;
}

PcaProjection fit_pca(const Matrix& features) {
  if (features.cols() < 2) throw DataError("pca: need at least 2 samples");
  PcaProjection p;
  p.mean = features.rowwise().mean();
  const Matrix centered = features.colwise() - p.mean;
  if (centered.squaredNorm() == 0.0) throw DegenerateSeriesError("pca: rank-0 feature matrix");
  const Matrix cov = centered * centered.transpose() / static_cast<double>(features.cols() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("pca: eigen-decomposition failed");
  const Index top = cov.rows() - 1;
  p.direction = solver.eigenvectors().col(top);
  p.explained_variance = solver.eigenvalues()[top];
  Index arg = 0;
  p.direction.cwiseAbs().maxCoeff(&arg);
  if (p.direction[arg] < 0.0) p.direction = -p.direction;
  return p;
}

HiSeries pca_baseline_hi(const BearingFeatures& bearing, const PcaProjection& projection) {
  return normalize_hi(projection.project(bearing.features), bearing.bearing_id, bearing.indices);
}

HiSeries pca_baseline_hi(const BearingFeatures& bearing) {
  return pca_baseline_hi(bearing, fit_pca(bearing.features));
}

// ---------------------------------------------------------------------------

void write_hi_csv(const HiSeries& series, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw NotFoundError("cannot write " + path.string());
  out << "index,hi_raw,hi_normalized\n";
  char buf[96];
  for (Index i = 0; i < series.raw.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g\n",
                  static_cast<long long>(series.indices[static_cast<std::size_t>(i)]),
                  series.raw[i], series.values[i]);
    out << buf;
  }
}

HiSeries read_hi_csv(const std::filesystem::path& path, const std::string& bearing_id) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("missing HI file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("index,hi_raw,hi_normalized", 0) != 0) {
    throw ParseError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<Index> indices;
  std::vector<double> raw;
  std::vector<double> norm;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    long long idx = 0;
    double a = 0.0;
    double b = 0.0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf", &idx, &a, &b) != 3) {
      throw ParseError(path.string() + ": malformed row " + std::to_string(row));
    }
    indices.push_back(idx);
    raw.push_back(a);
    norm.push_back(b);
  }
  const Vector raw_v = Eigen::Map<const Vector>(raw.data(), static_cast<Index>(raw.size()));
  HiSeries s = normalize_hi(raw_v, bearing_id, indices);
  s.values = Eigen::Map<const Vector>(norm.data(), static_cast<Index>(norm.size()));
  return s;
}

void save_hi_model(HiModel& model, const std::filesystem::path& dir, const json& state) {
  nn::CheckpointManifest manifest;
  manifest.model = "dynamic-hi";
  manifest.seed = model.seed();
  manifest.layers = model.layer_records();
  manifest.state = state;
  manifest.state["config"] = model.config().to_json();
  nn::save_checkpoint(dir, manifest, model.parameters(), {});
}

HiModel load_hi_model(const std::filesystem::path& dir, json* state) {
  const auto header = nn::read_checkpoint_manifest(dir);
  if (header.model != "dynamic-hi") {
    throw DataError(dir.string() + ": checkpoint holds a '" + header.model + "' model");
  }
  HiModel model(HiConfig::from_json(header.state.at("config")), header.seed);
  auto manifest = nn::load_checkpoint(dir, model.parameters(), {});
  if (state != nullptr) *state = manifest.state;
  return model;
}

}  // namespace dhi::hi
