#include "dhi/prognosis.hpp"

#include <cmath>
#include <cstdlib>

namespace dhi::prognosis {

void SplitSpec::validate() const {
  if (test_len < 1) throw ConfigError("split: test_len must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("split: threshold must lie in (0, 1)");
  if (end_of_life_index < 0) throw ConfigError("split: end_of_life_index must be >= 0");
}

SplitSeries split(const Vector& series, const SplitSpec& spec, Index lookback) {
  spec.validate();
  Vector s = series;
  if (spec.end_of_life_index > 0) {
    if (spec.end_of_life_index > series.size()) {
      throw DataError("split: end of life " + std::to_string(spec.end_of_life_index) +
                      " lies beyond the series length " + std::to_string(series.size()));
    }
    s = series.head(spec.end_of_life_index);
  }
  if (s.size() <= spec.test_len + lookback) {
    throw InsufficientHistoryError("split: series of length " + std::to_string(s.size()) +
                                   " is too short for test_len " + std::to_string(spec.test_len) +
                                   " plus lookback " + std::to_string(lookback));
  }
  SplitSeries out;
  out.train = s.head(s.size() - spec.test_len);
  out.test = s.tail(spec.test_len);
  out.first_prediction_step = out.train.size() + 1;
  return out;
}

void ForecasterConfig::validate() const {
  if (lookback < 2) throw ConfigError("forecaster: lookback must be >= 2");
  nn::check_pool_window(pool_window);
  optimizer.validate();
}

FitResult fit_forecaster(const Vector& train, const ForecasterConfig& config, std::uint64_t seed) {
  config.validate();
  const Index lb = config.lookback;
  if (train.size() <= lb) {
    throw InsufficientHistoryError("fit_forecaster: " + std::to_string(train.size()) +
                                   " points do not exceed lookback " + std::to_string(lb));
  }
  FitResult fit{hi::PredictionBlock("forecaster", lb, config.pool_window), {}, false};
  Rng init(derive_seed(seed, 0xF0));
  fit.block.reset_parameters(init);
  const auto params = fit.block.parameters();
  nn::zero_grads(params);

  const Index pairs = train.size() - lb;
  auto full_loss = [&] {
    double acc = 0.0;
    for (Index p = 0; p < pairs; ++p) {
      const double e = fit.block.predict(train.segment(p, lb)) - train[p + lb];
      acc += e * e;
    }
    return acc / static_cast<double>(pairs);
  };
  nn::EarlyStopping stopper(config.optimizer.patience);
  for (int epoch = 0; epoch < config.optimizer.max_epoch; ++epoch) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    const auto batches = nn::make_batches(pairs, config.optimizer.batch_size, rng);
    for (const auto& batch : batches) {
      const double scale = 2.0 / static_cast<double>(batch.size());
      for (const Index p : batch) {
        const Vector window = train.segment(p, lb);
        const double e = fit.block.predict(window) - train[p + lb];
        fit.block.backward(window, scale * e);
      }
      nn::adam_step(params, config.optimizer);
    }
    const double epoch_loss = full_loss();
    if (!std::isfinite(epoch_loss)) {
      throw NumericalError("fit_forecaster: non-finite loss at epoch " + std::to_string(epoch));
    }
    fit.loss_curve.push_back(epoch_loss);
    if (stopper.update(epoch_loss)) {
      fit.stopped_early = true;
      break;
    }
  }
  return fit;
}

Vector recursive_forecast(const hi::PredictionBlock& block, const Vector& seed_window, Index horizon) {
  if (seed_window.size() != block.lookback()) {
    throw DimensionError("recursive_forecast: seed window length " +
                         std::to_string(seed_window.size()) + ", expected " +
                         std::to_string(block.lookback()));
  }
  if (horizon < 0) throw ConfigError("recursive_forecast: negative horizon");
  const Index lb = block.lookback();
  Vector buffer(lb + horizon);
  buffer.head(lb) = seed_window;
  for (Index h = 0; h < horizon; ++h) buffer[lb + h] = block.predict(buffer.segment(h, lb));
  return buffer.tail(horizon);
}

Vector teacher_forced_forecast(const hi::PredictionBlock& block, const Vector& series, Index start,
                               Index horizon) {
  const Index lb = block.lookback();
  if (start < lb || start + horizon > series.size()) {
    throw DimensionError("teacher_forced_forecast: range [" + std::to_string(start) + ", " +
                         std::to_string(start + horizon) + ") outside the usable series");
  }
  Vector out(horizon);
  for (Index h = 0; h < horizon; ++h) out[h] = block.predict(series.segment(start + h - lb, lb));
  return out;
}

std::optional<Index> first_crossing(const Vector& series, double threshold) {
  for (Index i = 0; i < series.size(); ++i) {
    if (series[i] >= threshold) return i;
  }
  return std::nullopt;
}

double rul_accuracy(Index actual, Index estimated) {
  if (actual <= 0) throw DataError("rul_accuracy: actual RUL must be positive");
  return 1.0 - static_cast<double>(std::llabs(actual - estimated)) / static_cast<double>(actual);
}

PrognosisResult estimate_rul(const Vector& forecast, const SplitSpec& spec,
                             Index first_prediction_step, const Vector* truth) {
  if (forecast.size() == 0) throw DataError("estimate_rul: empty forecast");
  PrognosisResult r;
  r.forecast = forecast;
  if (const auto c = first_crossing(forecast, spec.threshold)) {
    r.crossing_step = first_prediction_step + *c;
    r.rul_estimated = *c + 1;
  }
  if (truth != nullptr && truth->size() > 0) {
    const auto c = first_crossing(*truth, spec.threshold);
    r.rul_actual = c ? *c + 1 : truth->size();
  }
  if (r.rul_estimated && r.rul_actual) r.accuracy = rul_accuracy(*r.rul_actual, *r.rul_estimated);
  return r;
}

metrics::ForecastReport evaluate_forecast(const Vector& forecast, const Vector& truth, double limit) {
  return metrics::evaluate_forecast(forecast, truth, limit);
}

}  // namespace dhi::prognosis
