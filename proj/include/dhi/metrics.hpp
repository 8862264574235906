#pragma once

// HI quality (Mon, Tred, Rob, HS) and forecast quality (RMSE, Pred) scores.

#include "dhi/core.hpp"
#include "dhi/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace dhi::metrics {

inline constexpr Index kDefaultSmoothingWindow = 11;
inline constexpr double kDefaultPredLimit = 0.3;
inline constexpr double kRobustnessFloor = 1e-12;

namespace detail {

inline void expect_same_length(const char* op, Index a, Index b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

template <typename Derived>
std::vector<double> average_ranks(const Eigen::MatrixBase<Derived>& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) {
    return x(static_cast<Index>(a)) < x(static_cast<Index>(b));
  });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x(static_cast<Index>(order[j + 1])) == x(static_cast<Index>(order[i]))) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Centered moving average with replicated edges.
template <typename Derived>
VectorX<typename Derived::Scalar> smooth_trend(const Eigen::MatrixBase<Derived>& y,
                                               Index window = kDefaultSmoothingWindow) {
  nn::check_pool_window(window);
  if (y.size() < window) {
    throw InsufficientHistoryError("smooth_trend: series of length " + std::to_string(y.size()) +
                                   " is shorter than the window " + std::to_string(window));
  }
  return nn::avgpool1d_same(y, window);
}

/// |#increases - #decreases| / (K - 1); equal neighbours count toward neither.
template <typename Derived>
double monotonicity(const Eigen::MatrixBase<Derived>& y) {
  const Index k = y.size();
  if (k < 2) throw InsufficientHistoryError("monotonicity: need at least 2 points");
  Index up = 0;
  Index down = 0;
  for (Index i = 1; i < k; ++i) {
    if (y(i) > y(i - 1)) ++up;
    else if (y(i) < y(i - 1)) ++down;
  }
  return static_cast<double>(std::abs(up - down)) / static_cast<double>(k - 1);
}

template <typename DerivedA, typename DerivedB>
double pearson(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  detail::expect_same_length("pearson", a.size(), b.size());
  const double n = static_cast<double>(a.size());
  const auto da = (a.array().template cast<double>() - a.template cast<double>().sum() / n).matrix();
  const auto db = (b.array().template cast<double>() - b.template cast<double>().sum() / n).matrix();
  const double saa = da.squaredNorm();
  const double sbb = db.squaredNorm();
  if (saa == 0.0 || sbb == 0.0) {
    throw DegenerateSeriesError("pearson: zero variance input");
  }
  return da.dot(db) / std::sqrt(saa * sbb);
}

/// Spearman rank correlation with average ranks for ties.
template <typename DerivedA, typename DerivedB>
double spearman(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  detail::expect_same_length("spearman", a.size(), b.size());
  const auto ra = detail::average_ranks(a);
  const auto rb = detail::average_ranks(b);
  return pearson(Eigen::Map<const Vector>(ra.data(), static_cast<Index>(ra.size())),
                 Eigen::Map<const Vector>(rb.data(), static_cast<Index>(rb.size())));
}

/// |corr(y, t)|; t must be strictly increasing.
template <typename DerivedY, typename DerivedT>
double trendability(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedT>& t) {
  detail::expect_same_length("trendability", y.size(), t.size());
  if (y.size() < 3) throw InsufficientHistoryError("trendability: need at least 3 points");
  for (Index i = 1; i < t.size(); ++i) {
    if (!(t(i) > t(i - 1))) throw DataError("trendability: time axis must be strictly increasing");
  }
  const double yy = (y.array() - y.mean()).matrix().squaredNorm();
  if (yy == 0.0) throw DegenerateSeriesError("trendability: series has zero variance");
  return std::abs(pearson(y, t));
}

template <typename DerivedY>
double trendability(const Eigen::MatrixBase<DerivedY>& y) {
  const Vector t = Vector::LinSpaced(y.size(), 1.0, static_cast<double>(y.size()));
  return trendability(y, t);
}

/// mean exp(-|(y - y_tr) / y|); |y| below kRobustnessFloor is clamped with a warning.
template <typename DerivedY, typename DerivedT>
double robustness(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedT>& trend) {
  detail::expect_same_length("robustness", y.size(), trend.size());
  if (y.size() == 0) throw InsufficientHistoryError("robustness: empty series");
  double acc = 0.0;
  Index clamped = 0;
  for (Index k = 0; k < y.size(); ++k) {
    double denom = std::abs(static_cast<double>(y(k)));
    if (denom < kRobustnessFloor) {
      denom = kRobustnessFloor;
      ++clamped;
    }
    acc += std::exp(-std::abs(static_cast<double>(y(k) - trend(k))) / denom);
  }
  if (clamped > 0) {
    warn("robustness: " + std::to_string(clamped) + " value(s) with |y| < 1e-12 clamped");
  }
  return acc / static_cast<double>(y.size());
}

inline double hybrid_scale(double mon, double tred, double rob) { return (mon + tred + rob) / 3.0; }

template <typename DerivedA, typename DerivedB>
double rmse(const Eigen::MatrixBase<DerivedA>& predicted, const Eigen::MatrixBase<DerivedB>& actual) {
  detail::expect_same_length("rmse", predicted.size(), actual.size());
  if (actual.size() == 0) throw InsufficientHistoryError("rmse: empty input");
  return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(actual.size()));
}

template <typename DerivedA, typename DerivedB>
double mean_absolute_error(const Eigen::MatrixBase<DerivedA>& predicted,
                           const Eigen::MatrixBase<DerivedB>& actual) {
  detail::expect_same_length("mean_absolute_error", predicted.size(), actual.size());
  if (actual.size() == 0) throw InsufficientHistoryError("mean_absolute_error: empty input");
  return (predicted - actual).cwiseAbs().sum() / static_cast<double>(actual.size());
}

inline double predictability_from_mae(double mae, double limit = kDefaultPredLimit) {
  if (!(limit > 0.0)) throw ConfigError("predictability: limit must be positive");
  return std::exp(-std::numbers::ln2 * mae / limit);
}

/// exp(-ln2 * MAE / limit).
template <typename DerivedA, typename DerivedB>
double predictability(const Eigen::MatrixBase<DerivedA>& predicted,
                      const Eigen::MatrixBase<DerivedB>& actual, double limit = kDefaultPredLimit) {
  if (!(limit > 0.0)) throw ConfigError("predictability: limit must be positive");
  return predictability_from_mae(mean_absolute_error(predicted, actual), limit);
}

struct MetricReport {
  double mon = 0.0;
  double tred = 0.0;
  double rob = 0.0;
  double hs = 0.0;
  Index smoothing_window = kDefaultSmoothingWindow;
};

/// Mon and Tred on the smoothed trend, Rob on the raw series against it.
template <typename Derived>
MetricReport evaluate_hi(const Eigen::MatrixBase<Derived>& y,
                         Index smoothing_window = kDefaultSmoothingWindow) {
  const Vector yv = y.template cast<double>();
  const Vector trend = smooth_trend(yv, smoothing_window);
  MetricReport r;
  r.smoothing_window = smoothing_window;
  r.mon = monotonicity(trend);
  r.tred = trendability(trend);
  r.rob = robustness(yv, trend);
  r.hs = hybrid_scale(r.mon, r.tred, r.rob);
  return r;
}

struct ForecastReport {
  double rmse = 0.0;
  double pred = 0.0;
  double limit = kDefaultPredLimit;
};

template <typename DerivedA, typename DerivedB>
ForecastReport evaluate_forecast(const Eigen::MatrixBase<DerivedA>& forecast,
                                 const Eigen::MatrixBase<DerivedB>& truth,
                                 double limit = kDefaultPredLimit) {
  ForecastReport r;
  r.limit = limit;
  r.rmse = rmse(forecast, truth);
  r.pred = predictability(forecast, truth, limit);
  return r;
}

}  // namespace dhi::metrics
