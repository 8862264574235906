#pragma once

#include "dhi/core.hpp"

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace dhi::nn {

/// Trainable array with its gradient and Adam moments.
template <typename Scalar>
struct Parameter {
  std::string name;
  std::vector<Index> shape;
  VectorX<Scalar> values;
  VectorX<Scalar> grad;
  VectorX<Scalar> adam_m;
  VectorX<Scalar> adam_v;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string parameter_name, std::vector<Index> parameter_shape)
      : name(std::move(parameter_name)), shape(std::move(parameter_shape)) {
    const Index n = numel(shape);
    values = VectorX<Scalar>::Zero(n);
    grad = VectorX<Scalar>::Zero(n);
    adam_m = VectorX<Scalar>::Zero(n);
    adam_v = VectorX<Scalar>::Zero(n);
  }

  static Index numel(const std::vector<Index>& dims) {
    return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
  }

  Index size() const { return values.size(); }

  void zero_grad() { grad.setZero(); }

  /// Row-major (rows x cols) view of the values; rows*cols must equal size().
  Eigen::Map<const RowMatrixX<Scalar>> matrix(Index rows, Index cols) const {
    return Eigen::Map<const RowMatrixX<Scalar>>(values.data(), rows, cols);
  }
  Eigen::Map<RowMatrixX<Scalar>> grad_matrix(Index rows, Index cols) {
    return Eigen::Map<RowMatrixX<Scalar>>(grad.data(), rows, cols);
  }
};

/// Non-trainable state saved with a model (batchnorm running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  VectorX<Scalar> values;
};

template <typename Scalar>
using ParameterRefs = std::vector<Parameter<Scalar>*>;
template <typename Scalar>
using BufferRefs = std::vector<Buffer<Scalar>*>;

template <typename Scalar>
void zero_grads(const ParameterRefs<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace dhi::nn
