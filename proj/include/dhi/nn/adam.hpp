#pragma once

#include "dhi/nn/parameter.hpp"
#include "dhi/random.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace dhi::nn {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epoch = 1000;
  int batch_size = 64;
  int patience = 15;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("optimizer: learning_rate must be finite and non-negative");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
    if (max_epoch < 0) throw ConfigError("optimizer: max_epoch must be non-negative");
    if (batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("optimizer: patience must be >= 1");
  }
};

/// Bias-corrected Adam update; increments step_count and zeroes grads.
template <typename Scalar>
void adam_step(const ParameterRefs<Scalar>& params, const OptimizerConfig& config) {
  const Scalar b1 = static_cast<Scalar>(config.beta1);
  const Scalar b2 = static_cast<Scalar>(config.beta2);
  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  const Scalar eps = static_cast<Scalar>(config.epsilon);
  for (auto* p : params) {
    p->step_count += 1;
    const Scalar t = static_cast<Scalar>(p->step_count);
    const Scalar c1 = Scalar(1) - std::pow(b1, t);
    const Scalar c2 = Scalar(1) - std::pow(b2, t);
    p->adam_m = b1 * p->adam_m + (Scalar(1) - b1) * p->grad;
    p->adam_v = b2 * p->adam_v + (Scalar(1) - b2) * p->grad.cwiseAbs2();
    p->values.array() -=
        lr * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + eps);
    p->zero_grad();
  }
}

/// Patience counter on a monitored loss; `update` returns true when training should stop.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      wait_ = 0;
      return false;
    }
    return ++wait_ >= patience_;
  }

  double best() const { return best_; }
  int wait() const { return wait_; }
  void restore(double best, int wait) {
    best_ = best;
    wait_ = wait;
  }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

/// Shuffled mini-batch partition of [0, n). A trailing batch of one sample is
/// merged into its predecessor so batchnorm never sees a singleton batch.
inline std::vector<std::vector<Index>> make_batches(Index n, int batch_size, Rng& rng,
                                                    bool shuffle = true) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle) rng.shuffle(std::span<Index>(order));
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index stop = std::min<Index>(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace dhi::nn
