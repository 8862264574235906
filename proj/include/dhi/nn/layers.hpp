#pragma once

// Stateful layer wrappers: each owns its parameters, caches what backward
// needs during forward, and refuses to run backward without a recorded pass.

#include "dhi/nn/init.hpp"
#include "dhi/nn/ops.hpp"

#include <optional>
#include <string>
#include <utility>

namespace dhi::nn {

namespace detail {

template <typename T>
const T& require_cache(const std::optional<T>& cache, const std::string& layer) {
  if (!cache) throw StateError(layer + ": backward called without a recorded forward pass");
  return *cache;
}

}  // namespace detail

template <typename Scalar>
class Conv1d {
 public:
  Conv1d(const std::string& name, Index in, Index out, Index kernel, Index stride)
      : spec_(LayerSpec::conv1d(in, out, kernel, stride)),
        weight_(name + ".weight", {out, in, kernel}),
        bias_(name + ".bias", {out}),
        name_(name) {
    spec_.validate();
  }

  void reset_parameters(Rng& rng, double gain) {
    kaiming_uniform(weight_, spec_.in_channels * spec_.kernel_size, gain, rng);
    bias_uniform(bias_, spec_.in_channels * spec_.kernel_size, rng);
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    input_ = x;
    return conv1d_forward(x, weight_, bias_, spec_);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& x = detail::require_cache(input_, name_);
    auto dx = conv1d_backward(x, grad, weight_, bias_, spec_);
    input_.reset();
    return dx;
  }

  ParameterRefs<Scalar> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  std::string name_;
  std::optional<Tensor3<Scalar>> input_;
};

template <typename Scalar>
class DeConv1d {
 public:
  DeConv1d(const std::string& name, Index in, Index out, Index kernel, Index stride)
      : spec_(LayerSpec::deconv1d(in, out, kernel, stride)),
        weight_(name + ".weight", {in, out, kernel}),
        bias_(name + ".bias", {out}),
        name_(name) {
    spec_.validate();
  }

  void reset_parameters(Rng& rng, double gain) {
    kaiming_uniform(weight_, spec_.in_channels * spec_.kernel_size, gain, rng);
    bias_uniform(bias_, spec_.in_channels * spec_.kernel_size, rng);
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    input_ = x;
    return deconv1d_forward(x, weight_, bias_, spec_);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& x = detail::require_cache(input_, name_);
    auto dx = deconv1d_backward(x, grad, weight_, bias_, spec_);
    input_.reset();
    return dx;
  }

  ParameterRefs<Scalar> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  std::string name_;
  std::optional<Tensor3<Scalar>> input_;
};

template <typename Scalar>
class ConcatConv1x1 {
 public:
  ConcatConv1x1(const std::string& name, Index in, Index out)
      : spec_(LayerSpec::concat_conv1x1(in, out)),
        weight_(name + ".weight", {out, in, 1}),
        bias_(name + ".bias", {out}),
        name_(name) {
    spec_.validate();
  }

  void reset_parameters(Rng& rng, double gain) {
    kaiming_uniform(weight_, spec_.in_channels, gain, rng);
    bias_uniform(bias_, spec_.in_channels, rng);
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b) {
    inputs_ = std::make_pair(a, b);
    return concat_conv1x1_forward(a, b, weight_, bias_, spec_);
  }

  ConcatGrads<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& [a, b] = detail::require_cache(inputs_, name_);
    auto grads = concat_conv1x1_backward(a, b, grad, weight_, bias_, spec_);
    inputs_.reset();
    return grads;
  }

  ParameterRefs<Scalar> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  std::string name_;
  std::optional<std::pair<Tensor3<Scalar>, Tensor3<Scalar>>> inputs_;
};

template <typename Scalar>
class Dense {
 public:
  Dense(const std::string& name, Index in, Index out)
      : spec_(LayerSpec::dense(in, out)),
        weight_(name + ".weight", {out, in}),
        bias_(name + ".bias", {out}),
        name_(name) {
    spec_.validate();
  }

  void reset_parameters(Rng& rng, double gain) {
    kaiming_uniform(weight_, spec_.in_channels, gain, rng);
    bias_uniform(bias_, spec_.in_channels, rng);
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    input_ = x;
    return dense_forward(x, weight_, bias_, spec_);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& x = detail::require_cache(input_, name_);
    auto dx = dense_backward(x, grad, weight_, bias_, spec_);
    input_.reset();
    return dx;
  }

  ParameterRefs<Scalar> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  std::string name_;
  std::optional<Tensor3<Scalar>> input_;
};

template <typename Scalar>
class BatchNorm1d {
 public:
  BatchNorm1d(const std::string& name, Index channels, BatchNormOptions options = {})
      : spec_(LayerSpec::batchnorm(channels)),
        gamma_(name + ".gamma", {channels}),
        beta_(name + ".beta", {channels}),
        running_mean_{name + ".running_mean", VectorX<Scalar>::Zero(channels)},
        running_var_{name + ".running_var", VectorX<Scalar>::Ones(channels)},
        options_(options),
        name_(name) {
    spec_.validate();
    gamma_.values.setOnes();
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x, bool training) {
    BatchNormCache<Scalar> cache;
    auto y = batchnorm1d_forward(x, gamma_, beta_, running_mean_, running_var_, training, options_,
                                 &cache);
    cache_ = std::move(cache);
    return y;
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& cache = detail::require_cache(cache_, name_);
    auto dx = batchnorm1d_backward(grad, cache, gamma_, beta_);
    cache_.reset();
    return dx;
  }

  ParameterRefs<Scalar> parameters() { return {&gamma_, &beta_}; }
  BufferRefs<Scalar> buffers() { return {&running_mean_, &running_var_}; }
  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Buffer<Scalar>& running_mean() { return running_mean_; }
  Buffer<Scalar>& running_var() { return running_var_; }

 private:
  LayerSpec spec_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Buffer<Scalar> running_mean_;
  Buffer<Scalar> running_var_;
  BatchNormOptions options_;
  std::string name_;
  std::optional<BatchNormCache<Scalar>> cache_;
};

template <typename Scalar>
class Activation {
 public:
  Activation(const std::string& name, LayerSpec spec) : spec_(spec), name_(name) {}

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    input_ = x;
    return activation_forward(x, spec_);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto& x = detail::require_cache(input_, name_);
    auto dx = activation_backward(x, grad, spec_);
    input_.reset();
    return dx;
  }

  const LayerSpec& spec() const { return spec_; }

 private:
  LayerSpec spec_;
  std::string name_;
  std::optional<Tensor3<Scalar>> input_;
};

template <typename Scalar>
class AvgPool1dSame {
 public:
  AvgPool1dSame(const std::string& name, Index window)
      : spec_(LayerSpec::avgpool(window)), name_(name) {
    spec_.validate();
  }

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    recorded_ = true;
    return avgpool1d_same_forward(x, spec_.kernel_size);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    if (!recorded_) throw StateError(name_ + ": backward called without a recorded forward pass");
    recorded_ = false;
    return avgpool1d_same_backward(grad, spec_.kernel_size);
  }

  Index window() const { return spec_.kernel_size; }
  const LayerSpec& spec() const { return spec_; }

 private:
  LayerSpec spec_;
  std::string name_;
  bool recorded_ = false;
};

template <typename Scalar>
class Flatten {
 public:
  explicit Flatten(const std::string& name) : name_(name) {}

  Tensor3<Scalar> forward(const Tensor3<Scalar>& x) {
    shape_ = std::make_pair(x.channels(), x.length());
    return flatten_forward(x);
  }

  Tensor3<Scalar> backward(const Tensor3<Scalar>& grad) {
    const auto [channels, length] = detail::require_cache(shape_, name_);
    shape_.reset();
    return flatten_backward(grad, channels, length);
  }

  LayerSpec spec() const { return LayerSpec::flatten(); }

 private:
  std::string name_;
  std::optional<std::pair<Index, Index>> shape_;
};

}  // namespace dhi::nn
