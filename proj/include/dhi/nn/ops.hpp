#pragma once

// Forward and analytic backward kernels for every layer kind used by the
// autoencoders. Backward kernels accumulate into Parameter::grad and return
// the gradient with respect to the layer input.

#include "dhi/nn/layer_spec.hpp"
#include "dhi/nn/parameter.hpp"
#include "dhi/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dhi::nn {

namespace detail {

inline std::string axis_error(const char* op, const char* axis, Index got, Index want) {
  return std::string(op) + ": " + axis + " mismatch (got " + std::to_string(got) + ", expected " +
         std::to_string(want) + ")";
}

inline void expect_axis(const char* op, const char* axis, Index got, Index want) {
  if (got != want) throw DimensionError(axis_error(op, axis, got, want));
}

inline void expect_kind(const char* op, const LayerSpec& spec, LayerKind kind) {
  if (spec.kind != kind) {
    throw ConfigError(std::string(op) + ": layer spec kind is " + std::string(to_string(spec.kind)));
  }
}

}  // namespace detail

inline Index conv1d_output_length(Index input_length, Index kernel, Index stride) {
  return (input_length - kernel) / stride + 1;
}

inline Index deconv1d_output_length(Index input_length, Index kernel, Index stride) {
  return (input_length - 1) * stride + kernel;
}

// ---------------------------------------------------------------------------
// Conv1d: valid cross-correlation, weight (out, in, kernel), bias (out).

namespace detail {

template <typename Scalar>
void im2col(const typename Tensor3<Scalar>::ConstSampleMap& x, Index kernel, Index stride,
            Index out_length, MatrixX<Scalar>& patches) {
  const Index channels = x.rows();
  patches.resize(channels * kernel, out_length);
  for (Index l = 0; l < out_length; ++l) {
    for (Index c = 0; c < channels; ++c) {
      for (Index k = 0; k < kernel; ++k) patches(c * kernel + k, l) = x(c, l * stride + k);
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor3<Scalar> conv1d_forward(const Tensor3<Scalar>& input, const Parameter<Scalar>& weight,
                               const Parameter<Scalar>& bias, const LayerSpec& spec) {
  detail::expect_kind("conv1d_forward", spec, LayerKind::Conv1d);
  spec.validate();
  detail::expect_axis("conv1d_forward", "channel axis", input.channels(), spec.in_channels);
  if (input.length() < spec.kernel_size) {
    throw DimensionError(detail::axis_error("conv1d_forward", "length axis (shorter than kernel)",
                                            input.length(), spec.kernel_size));
  }
  const Index k = spec.kernel_size;
  const Index out_len = conv1d_output_length(input.length(), k, spec.stride);
  detail::expect_axis("conv1d_forward", "weight size", weight.size(),
                      spec.out_channels * spec.in_channels * k);
  detail::expect_axis("conv1d_forward", "bias size", bias.size(), spec.out_channels);

  Tensor3<Scalar> out(input.batch(), spec.out_channels, out_len);
  const auto w = weight.matrix(spec.out_channels, spec.in_channels * k);
  MatrixX<Scalar> patches;
  for (Index b = 0; b < input.batch(); ++b) {
    detail::im2col<Scalar>(input.sample(b), k, spec.stride, out_len, patches);
    auto y = out.sample(b);
    y.noalias() = w * patches;
    y.colwise() += bias.values;
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> conv1d_backward(const Tensor3<Scalar>& input, const Tensor3<Scalar>& grad_output,
                                Parameter<Scalar>& weight, Parameter<Scalar>& bias,
                                const LayerSpec& spec) {
  const Index k = spec.kernel_size;
  const Index out_len = conv1d_output_length(input.length(), k, spec.stride);
  detail::expect_axis("conv1d_backward", "grad length axis", grad_output.length(), out_len);
  detail::expect_axis("conv1d_backward", "grad channel axis", grad_output.channels(),
                      spec.out_channels);
  detail::expect_axis("conv1d_backward", "grad batch axis", grad_output.batch(), input.batch());

  Tensor3<Scalar> grad_input(input.batch(), input.channels(), input.length());
  const auto w = weight.matrix(spec.out_channels, spec.in_channels * k);
  auto dw = weight.grad_matrix(spec.out_channels, spec.in_channels * k);
  MatrixX<Scalar> patches;
  MatrixX<Scalar> dpatches;
  for (Index b = 0; b < input.batch(); ++b) {
    detail::im2col<Scalar>(input.sample(b), k, spec.stride, out_len, patches);
    const auto dy = grad_output.sample(b);
    dw.noalias() += dy * patches.transpose();
    bias.grad += dy.rowwise().sum();
    dpatches.noalias() = w.transpose() * dy;
    auto dx = grad_input.sample(b);
    for (Index l = 0; l < out_len; ++l) {
      for (Index c = 0; c < input.channels(); ++c) {
        for (Index j = 0; j < k; ++j) dx(c, l * spec.stride + j) += dpatches(c * k + j, l);
      }
    }
  }
  return grad_input;
}

// ---------------------------------------------------------------------------
// DeConv1d: transposed convolution, no padding and no output padding.
// Weight (in, out, kernel), bias (out).

template <typename Scalar>
Tensor3<Scalar> deconv1d_forward(const Tensor3<Scalar>& input, const Parameter<Scalar>& weight,
                                 const Parameter<Scalar>& bias, const LayerSpec& spec) {
  detail::expect_kind("deconv1d_forward", spec, LayerKind::DeConv1d);
  spec.validate();
  detail::expect_axis("deconv1d_forward", "channel axis", input.channels(), spec.in_channels);
  if (input.length() < 1) throw DimensionError("deconv1d_forward: empty length axis");
  const Index k = spec.kernel_size;
  const Index co = spec.out_channels;
  detail::expect_axis("deconv1d_forward", "weight size", weight.size(), spec.in_channels * co * k);
  detail::expect_axis("deconv1d_forward", "bias size", bias.size(), co);

  const Index out_len = deconv1d_output_length(input.length(), k, spec.stride);
  Tensor3<Scalar> out(input.batch(), co, out_len);
  const auto w = weight.matrix(spec.in_channels, co * k);
  MatrixX<Scalar> cols;
  for (Index b = 0; b < input.batch(); ++b) {
    cols.noalias() = w.transpose() * input.sample(b);
    auto y = out.sample(b);
    for (Index l = 0; l < input.length(); ++l) {
      for (Index c = 0; c < co; ++c) {
        for (Index j = 0; j < k; ++j) y(c, l * spec.stride + j) += cols(c * k + j, l);
      }
    }
    y.colwise() += bias.values;
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> deconv1d_backward(const Tensor3<Scalar>& input,
                                  const Tensor3<Scalar>& grad_output, Parameter<Scalar>& weight,
                                  Parameter<Scalar>& bias, const LayerSpec& spec) {
  const Index k = spec.kernel_size;
  const Index co = spec.out_channels;
  const Index out_len = deconv1d_output_length(input.length(), k, spec.stride);
  detail::expect_axis("deconv1d_backward", "grad length axis", grad_output.length(), out_len);
  detail::expect_axis("deconv1d_backward", "grad channel axis", grad_output.channels(), co);
  detail::expect_axis("deconv1d_backward", "grad batch axis", grad_output.batch(), input.batch());

  Tensor3<Scalar> grad_input(input.batch(), input.channels(), input.length());
  const auto w = weight.matrix(spec.in_channels, co * k);
  auto dw = weight.grad_matrix(spec.in_channels, co * k);
  MatrixX<Scalar> dcols(co * k, input.length());
  for (Index b = 0; b < input.batch(); ++b) {
    const auto dy = grad_output.sample(b);
    for (Index l = 0; l < input.length(); ++l) {
      for (Index c = 0; c < co; ++c) {
        for (Index j = 0; j < k; ++j) dcols(c * k + j, l) = dy(c, l * spec.stride + j);
      }
    }
    bias.grad += dy.rowwise().sum();
    dw.noalias() += input.sample(b) * dcols.transpose();
    grad_input.sample(b).noalias() = w * dcols;
  }
  return grad_input;
}

// ---------------------------------------------------------------------------
// ConcatConv1x1: channel concatenation a (+) b followed by a 1x1 convolution.
// Weight (out, Ca + Cb), bias (out). b may have zero channels, in which case
// the layer is a plain 1x1 convolution of a.

template <typename Scalar>
Tensor3<Scalar> concat_conv1x1_forward(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                                       const Parameter<Scalar>& weight,
                                       const Parameter<Scalar>& bias, const LayerSpec& spec) {
  detail::expect_kind("concat_conv1x1_forward", spec, LayerKind::ConcatConv1x1);
  detail::expect_axis("concat_conv1x1_forward", "batch axis", b.batch(), a.batch());
  detail::expect_axis("concat_conv1x1_forward", "length axis", b.length(), a.length());
  detail::expect_axis("concat_conv1x1_forward", "channel axis (a+b)", a.channels() + b.channels(),
                      spec.in_channels);
  const Index co = spec.out_channels;
  detail::expect_axis("concat_conv1x1_forward", "weight size", weight.size(),
                      co * spec.in_channels);
  detail::expect_axis("concat_conv1x1_forward", "bias size", bias.size(), co);

  const auto w = weight.matrix(co, spec.in_channels);
  Tensor3<Scalar> out(a.batch(), co, a.length());
  for (Index s = 0; s < a.batch(); ++s) {
    auto y = out.sample(s);
    y.noalias() = w.leftCols(a.channels()) * a.sample(s);
    if (b.channels() > 0) y.noalias() += w.rightCols(b.channels()) * b.sample(s);
    y.colwise() += bias.values;
  }
  return out;
}

template <typename Scalar>
struct ConcatGrads {
  Tensor3<Scalar> a;
  Tensor3<Scalar> b;
};

template <typename Scalar>
ConcatGrads<Scalar> concat_conv1x1_backward(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                                            const Tensor3<Scalar>& grad_output,
                                            Parameter<Scalar>& weight, Parameter<Scalar>& bias,
                                            const LayerSpec& spec) {
  const Index co = spec.out_channels;
  detail::expect_axis("concat_conv1x1_backward", "grad channel axis", grad_output.channels(), co);
  detail::expect_axis("concat_conv1x1_backward", "grad length axis", grad_output.length(),
                      a.length());
  const auto w = weight.matrix(co, spec.in_channels);
  auto dw = weight.grad_matrix(co, spec.in_channels);
  ConcatGrads<Scalar> grads{Tensor3<Scalar>(a.batch(), a.channels(), a.length()),
                            Tensor3<Scalar>(b.batch(), b.channels(), b.length())};
  for (Index s = 0; s < a.batch(); ++s) {
    const auto dy = grad_output.sample(s);
    bias.grad += dy.rowwise().sum();
    dw.leftCols(a.channels()).noalias() += dy * a.sample(s).transpose();
    grads.a.sample(s).noalias() = w.leftCols(a.channels()).transpose() * dy;
    if (b.channels() > 0) {
      dw.rightCols(b.channels()).noalias() += dy * b.sample(s).transpose();
      grads.b.sample(s).noalias() = w.rightCols(b.channels()).transpose() * dy;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Dense: affine map on (batch, features, 1) tensors. Weight (out, in), bias (out).

template <typename Scalar>
Tensor3<Scalar> dense_forward(const Tensor3<Scalar>& input, const Parameter<Scalar>& weight,
                              const Parameter<Scalar>& bias, const LayerSpec& spec) {
  detail::expect_kind("dense_forward", spec, LayerKind::Dense);
  detail::expect_axis("dense_forward", "feature axis", input.sample_size(), spec.in_channels);
  detail::expect_axis("dense_forward", "weight size", weight.size(),
                      spec.out_channels * spec.in_channels);
  detail::expect_axis("dense_forward", "bias size", bias.size(), spec.out_channels);
  Tensor3<Scalar> out(input.batch(), spec.out_channels, 1);
  out.columns().noalias() = weight.matrix(spec.out_channels, spec.in_channels) * input.columns();
  out.columns().colwise() += bias.values;
  return out;
}

/// Single-vector convenience form of dense_forward.
template <typename Scalar>
VectorX<Scalar> dense_forward(const VectorX<Scalar>& x, const Parameter<Scalar>& weight,
                              const Parameter<Scalar>& bias, const LayerSpec& spec) {
  return dense_forward(Tensor3<Scalar>::from_data(1, x.size(), 1, x), weight, bias, spec).data();
}

template <typename Scalar>
Tensor3<Scalar> dense_backward(const Tensor3<Scalar>& input, const Tensor3<Scalar>& grad_output,
                               Parameter<Scalar>& weight, Parameter<Scalar>& bias,
                               const LayerSpec& spec) {
  detail::expect_axis("dense_backward", "grad feature axis", grad_output.sample_size(),
                      spec.out_channels);
  detail::expect_axis("dense_backward", "grad batch axis", grad_output.batch(), input.batch());
  const auto dy = grad_output.columns();
  weight.grad_matrix(spec.out_channels, spec.in_channels).noalias() +=
      dy * input.columns().transpose();
  bias.grad += dy.rowwise().sum();
  Tensor3<Scalar> grad_input(input.batch(), input.channels(), input.length());
  grad_input.columns().noalias() =
      weight.matrix(spec.out_channels, spec.in_channels).transpose() * dy;
  return grad_input;
}

// ---------------------------------------------------------------------------
// BatchNorm1d: per-channel standardization over batch x length.

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

template <typename Scalar>
struct BatchNormCache {
  Tensor3<Scalar> normalized;
  VectorX<Scalar> inv_std;
  bool training = false;
};

template <typename Scalar>
Tensor3<Scalar> batchnorm1d_forward(const Tensor3<Scalar>& input, const Parameter<Scalar>& gamma,
                                    const Parameter<Scalar>& beta, Buffer<Scalar>& running_mean,
                                    Buffer<Scalar>& running_var, bool training,
                                    const BatchNormOptions& options,
                                    BatchNormCache<Scalar>* cache = nullptr) {
  const Index channels = input.channels();
  detail::expect_axis("batchnorm1d_forward", "channel axis", gamma.size(), channels);
  if (training && input.batch() < 2) {
    throw ConfigError("batchnorm1d_forward: training mode needs a batch of at least 2, got " +
                      std::to_string(input.batch()));
  }
  const Index length = input.length();
  const Index count = input.batch() * length;
  Tensor3<Scalar> normalized(input.batch(), channels, length);
  VectorX<Scalar> inv_std(channels);

  for (Index c = 0; c < channels; ++c) {
    Scalar mean = 0;
    Scalar var = 0;
    if (training) {
      for (Index b = 0; b < input.batch(); ++b) mean += input.sample(b).row(c).sum();
      mean /= static_cast<Scalar>(count);
      for (Index b = 0; b < input.batch(); ++b) {
        var += (input.sample(b).row(c).array() - mean).square().sum();
      }
      var /= static_cast<Scalar>(count);
      const Scalar m = static_cast<Scalar>(options.momentum);
      const Scalar unbiased =
          count > 1 ? var * static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : var;
      running_mean.values[c] = (1 - m) * running_mean.values[c] + m * mean;
      running_var.values[c] = (1 - m) * running_var.values[c] + m * unbiased;
    } else {
      mean = running_mean.values[c];
      var = running_var.values[c];
    }
    inv_std[c] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(options.epsilon));
    for (Index b = 0; b < input.batch(); ++b) {
      normalized.sample(b).row(c) = (input.sample(b).row(c).array() - mean) * inv_std[c];
    }
  }

  Tensor3<Scalar> out(input.batch(), channels, length);
  for (Index b = 0; b < input.batch(); ++b) {
    auto y = out.sample(b);
    y = normalized.sample(b);
    y.array().colwise() *= gamma.values.array();
    y.colwise() += beta.values;
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> batchnorm1d_backward(const Tensor3<Scalar>& grad_output,
                                     const BatchNormCache<Scalar>& cache,
                                     Parameter<Scalar>& gamma, Parameter<Scalar>& beta) {
  const auto& xhat = cache.normalized;
  if (!grad_output.same_shape(xhat)) {
    throw DimensionError("batchnorm1d_backward: gradient shape " + grad_output.shape_string() +
                         " does not match cached " + xhat.shape_string());
  }
  const Index channels = xhat.channels();
  const Scalar count = static_cast<Scalar>(xhat.batch() * xhat.length());
  Tensor3<Scalar> grad_input(xhat.batch(), channels, xhat.length());
  for (Index c = 0; c < channels; ++c) {
    Scalar sum_dy = 0;
    Scalar sum_dy_xhat = 0;
    for (Index b = 0; b < xhat.batch(); ++b) {
      const auto dy = grad_output.sample(b).row(c);
      sum_dy += dy.sum();
      sum_dy_xhat += dy.dot(xhat.sample(b).row(c));
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;
    const Scalar scale = gamma.values[c] * cache.inv_std[c];
    for (Index b = 0; b < xhat.batch(); ++b) {
      const auto dy = grad_output.sample(b).row(c).array();
      if (cache.training) {
        grad_input.sample(b).row(c) =
            (scale / count) *
            (count * dy - sum_dy - xhat.sample(b).row(c).array() * sum_dy_xhat);
      } else {
        grad_input.sample(b).row(c) = scale * dy;
      }
    }
  }
  return grad_input;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

template <typename Scalar>
Tensor3<Scalar> activation_forward(const Tensor3<Scalar>& input, const LayerSpec& spec) {
  const Scalar slope = spec.kind == LayerKind::LeakyReLU ? static_cast<Scalar>(spec.negative_slope)
                                                         : Scalar(0);
  if (spec.kind != LayerKind::LeakyReLU && spec.kind != LayerKind::ReLU) {
    throw ConfigError("activation_forward: unsupported kind " + std::string(to_string(spec.kind)));
  }
  Tensor3<Scalar> out = input;
  out.data() = (input.data().array() > Scalar(0))
                   .select(input.data().array(), slope * input.data().array());
  return out;
}

template <typename Scalar>
Tensor3<Scalar> activation_backward(const Tensor3<Scalar>& input,
                                    const Tensor3<Scalar>& grad_output, const LayerSpec& spec) {
  if (!grad_output.same_shape(input)) {
    throw DimensionError("activation_backward: gradient shape " + grad_output.shape_string() +
                         " does not match input " + input.shape_string());
  }
  const Scalar slope = spec.kind == LayerKind::LeakyReLU ? static_cast<Scalar>(spec.negative_slope)
                                                         : Scalar(0);
  Tensor3<Scalar> grad = grad_output;
  grad.data() = (input.data().array() > Scalar(0))
                    .select(grad_output.data().array(), slope * grad_output.data().array());
  return grad;
}

// ---------------------------------------------------------------------------
// Centered moving average with replicated edges; output length == input length.

inline void check_pool_window(Index window) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("avgpool1d_same: window must be odd and >= 1, got " + std::to_string(window));
  }
}

template <typename Derived>
VectorX<typename Derived::Scalar> avgpool1d_same(const Eigen::MatrixBase<Derived>& series,
                                                 Index window) {
  using Scalar = typename Derived::Scalar;
  check_pool_window(window);
  const Index n = series.size();
  if (n == 0) throw DimensionError("avgpool1d_same: empty series");
  const Index half = window / 2;
  VectorX<Scalar> out(n);
  for (Index i = 0; i < n; ++i) {
    Scalar acc = 0;
    for (Index j = -half; j <= half; ++j) acc += series(std::clamp<Index>(i + j, 0, n - 1));
    out[i] = acc / static_cast<Scalar>(window);
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> avgpool1d_same_forward(const Tensor3<Scalar>& input, Index window) {
  Tensor3<Scalar> out(input.batch(), input.channels(), input.length());
  for (Index b = 0; b < input.batch(); ++b) {
    for (Index c = 0; c < input.channels(); ++c) {
      out.sample(b).row(c) = avgpool1d_same(input.sample(b).row(c).transpose(), window).transpose();
    }
  }
  return out;
}

/// Adjoint of avgpool1d_same_forward (the operator is linear).
template <typename Scalar>
Tensor3<Scalar> avgpool1d_same_backward(const Tensor3<Scalar>& grad_output, Index window) {
  check_pool_window(window);
  const Index n = grad_output.length();
  const Index half = window / 2;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(window);
  Tensor3<Scalar> grad(grad_output.batch(), grad_output.channels(), n);
  for (Index b = 0; b < grad.batch(); ++b) {
    for (Index c = 0; c < grad.channels(); ++c) {
      for (Index i = 0; i < n; ++i) {
        const Scalar g = grad_output(b, c, i) * inv;
        for (Index j = -half; j <= half; ++j) grad(b, c, std::clamp<Index>(i + j, 0, n - 1)) += g;
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Flatten: (batch, C, L) -> (batch, C*L, 1), channel-major.

template <typename Scalar>
Tensor3<Scalar> flatten_forward(const Tensor3<Scalar>& input) {
  return input.reshaped(input.sample_size(), 1);
}

template <typename Scalar>
Tensor3<Scalar> flatten_backward(const Tensor3<Scalar>& grad_output, Index channels, Index length) {
  return grad_output.reshaped(channels, length);
}

}  // namespace dhi::nn
