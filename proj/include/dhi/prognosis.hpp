#pragma once

#include "dhi/dynamic_hi.hpp"
#include "dhi/metrics.hpp"

#include <optional>
#include <vector>

namespace dhi::prognosis {

struct SplitSpec {
  Index test_len = 150;
  double threshold = 0.75;
  /// When positive, the series is truncated to its first end_of_life_index points before splitting.
  Index end_of_life_index = 0;

  void validate() const;
};

struct SplitSeries {
  Vector train;
  Vector test;
  /// 1-based position of test(0) in the (truncated) series.
  Index first_prediction_step = 0;
};

/// Contiguous prefix/suffix split; requires length > test_len + lookback.
SplitSeries split(const Vector& series, const SplitSpec& spec, Index lookback);

struct ForecasterConfig {
  Index lookback = 20;
  Index pool_window = 9;
  nn::OptimizerConfig optimizer{};

  void validate() const;
};

struct FitResult {
  hi::PredictionBlock block;
  std::vector<double> loss_curve;
  bool stopped_early = false;
};

/// Trains a fresh decomposition + two-linear-head block on every one-step-ahead
/// pair of `train` with Adam. Early stopping monitors the squared error over all
/// pairs, evaluated after each epoch's updates.
FitResult fit_forecaster(const Vector& train, const ForecasterConfig& config, std::uint64_t seed);

/// Rolls the block forward from `seed_window`, feeding back its own outputs.
Vector recursive_forecast(const hi::PredictionBlock& block, const Vector& seed_window, Index horizon);

/// One-step predictions for series(start .. start + horizon - 1), each from the true
/// preceding lookback values.
Vector teacher_forced_forecast(const hi::PredictionBlock& block, const Vector& series, Index start,
                               Index horizon);

/// 0-based index of the first value >= threshold.
std::optional<Index> first_crossing(const Vector& series, double threshold);

/// 1 - |actual - estimated| / actual.
double rul_accuracy(Index actual, Index estimated);

struct PrognosisResult {
  Vector forecast;
  /// Absolute step of the first forecast value at or above the threshold.
  std::optional<Index> crossing_step;
  std::optional<Index> rul_estimated;
  std::optional<Index> rul_actual;
  std::optional<double> accuracy;
};

/// RUL counted in steps from the first prediction step (a crossing on the first
/// forecast value is an RUL of 1). The actual RUL is the first crossing of
/// `truth`, or its full length when it never crosses; with no truth it is left unset.
PrognosisResult estimate_rul(const Vector& forecast, const SplitSpec& spec,
                             Index first_prediction_step, const Vector* truth = nullptr);

metrics::ForecastReport evaluate_forecast(const Vector& forecast, const Vector& truth,
                                          double limit = metrics::kDefaultPredLimit);

}  // namespace dhi::prognosis
