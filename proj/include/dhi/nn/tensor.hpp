#pragma once

#include "dhi/core.hpp"

#include <string>

namespace dhi::nn {

/// Dense (batch, channels, length) tensor stored row-major.
///
/// A single sample is a channels x length row-major block, which lets every
/// kernel work on Eigen maps without copying. With length == 1 the storage is
/// also a column-major (features x batch) matrix, which is the layout the
/// dense layers consume.
template <typename Scalar>
class Tensor3 {
 public:
  using SampleMap = Eigen::Map<RowMatrixX<Scalar>>;
  using ConstSampleMap = Eigen::Map<const RowMatrixX<Scalar>>;
  using ColumnsMap = Eigen::Map<MatrixX<Scalar>>;
  using ConstColumnsMap = Eigen::Map<const MatrixX<Scalar>>;

  Tensor3() = default;
  Tensor3(Index batch, Index channels, Index length)
      : batch_(batch), channels_(channels), length_(length),
        data_(VectorX<Scalar>::Zero(batch * channels * length)) {
    if (batch < 0 || channels < 0 || length < 0) {
      throw DimensionError("Tensor3: negative extent");
    }
  }

  static Tensor3 constant(Index batch, Index channels, Index length, Scalar value) {
    Tensor3 t(batch, channels, length);
    t.data_.setConstant(value);
    return t;
  }

  /// Wraps an existing sample-major buffer; data.size() must match the shape.
  static Tensor3 from_data(Index batch, Index channels, Index length, VectorX<Scalar> data) {
    if (data.size() != batch * channels * length) {
      throw DimensionError("Tensor3: data length " + std::to_string(data.size()) +
                           " does not match shape");
    }
    Tensor3 t;
    t.batch_ = batch;
    t.channels_ = channels;
    t.length_ = length;
    t.data_ = std::move(data);
    return t;
  }

  /// Columns are samples: a (features x batch) matrix becomes (batch, features, 1).
  template <typename Derived>
  static Tensor3 from_columns(const Eigen::MatrixBase<Derived>& columns) {
    Tensor3 t(columns.cols(), columns.rows(), 1);
    t.columns() = columns;
    return t;
  }

  Index batch() const { return batch_; }
  Index channels() const { return channels_; }
  Index length() const { return length_; }
  Index size() const { return data_.size(); }
  Index sample_size() const { return channels_ * length_; }

  VectorX<Scalar>& data() { return data_; }
  const VectorX<Scalar>& data() const { return data_; }

  Scalar& operator()(Index b, Index c, Index l) { return data_[(b * channels_ + c) * length_ + l]; }
  Scalar operator()(Index b, Index c, Index l) const {
    return data_[(b * channels_ + c) * length_ + l];
  }

  SampleMap sample(Index b) {
    return SampleMap(data_.data() + b * sample_size(), channels_, length_);
  }
  ConstSampleMap sample(Index b) const {
    return ConstSampleMap(data_.data() + b * sample_size(), channels_, length_);
  }

  /// (channels*length) x batch view; each column is one flattened sample.
  ColumnsMap columns() { return ColumnsMap(data_.data(), sample_size(), batch_); }
  ConstColumnsMap columns() const { return ConstColumnsMap(data_.data(), sample_size(), batch_); }

  /// Same data with a new per-sample shape; channels*length must be preserved.
  Tensor3 reshaped(Index channels, Index length) const {
    if (channels * length != sample_size()) {
      throw DimensionError("Tensor3::reshaped: sample size " + std::to_string(sample_size()) +
                           " cannot be viewed as " + std::to_string(channels) + "x" +
                           std::to_string(length));
    }
    return from_data(batch_, channels, length, data_);
  }

  /// Copies the listed samples into a new tensor, in order.
  template <typename IndexRange>
  Tensor3 gather(const IndexRange& indices) const {
    Tensor3 out(static_cast<Index>(std::size(indices)), channels_, length_);
    Index row = 0;
    for (const auto idx : indices) {
      out.data_.segment(row * sample_size(), sample_size()) =
          data_.segment(static_cast<Index>(idx) * sample_size(), sample_size());
      ++row;
    }
    return out;
  }

  bool same_shape(const Tensor3& other) const {
    return batch_ == other.batch_ && channels_ == other.channels_ && length_ == other.length_;
  }

  bool all_finite() const { return data_.allFinite(); }

  std::string shape_string() const {
    return std::to_string(batch_) + "x" + std::to_string(channels_) + "x" +
           std::to_string(length_);
  }

 private:
  Index batch_ = 0;
  Index channels_ = 0;
  Index length_ = 0;
  VectorX<Scalar> data_;
};

}  // namespace dhi::nn
