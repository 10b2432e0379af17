#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "sqd/common.hpp"

namespace sqd {

/// Immutable dense tensor of 64-bit floats, row-major. Rank 0 is a scalar.
/// Copies share storage; every mutation path goes through a kernel that
/// builds fresh storage, so tensors are safe to share across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  // Validates that element count matches and all values are finite.
  static Tensor from_data(Shape shape, std::vector<double> data);
  // No finite check; internal fast path for kernels that guarantee it.
  static Tensor wrap(Shape shape, std::vector<double> data);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index size() const { return defined() ? Index(data_->size()) : 0; }
  Index dim(Index i) const { return shape_.at(size_t(i)); }
  // Rows/cols of a rank-2 tensor.
  Index rows() const;
  Index cols() const;

  double at(Index flat) const { return (*data_)[size_t(flat)]; }
  double scalar_value() const;
  const double* data() const { return data_->data(); }
  const std::vector<double>& storage() const { return *data_; }

  Eigen::Map<const Eigen::ArrayXd> array() const {
    return {data(), size()};
  }
  // Row-major matrix view of a rank-2 tensor.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  matrix() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  // Bitwise equality of shape and payload.
  bool equals(const Tensor& o) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

// ---------------------------------------------------------------------------
// Kernels. Every public kernel checks input shapes and throws NonFiniteError
// if the result contains NaN/Inf. No implicit broadcasting beyond bias_add
// and the explicit broadcast_row/broadcast_col primitives.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
// Multiply by a rank-0 scalar tensor.
Tensor smul(const Tensor& s, const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

Tensor sum(const Tensor& a);                       // -> rank 0
Tensor sum_rows(const Tensor& a);                  // [I,J] -> [J]
Tensor sum_cols(const Tensor& a);                  // [I,J] -> [I]
Tensor broadcast_row(const Tensor& v, Index rows); // [J] -> [rows,J]
Tensor broadcast_col(const Tensor& v, Index cols); // [I] -> [I,cols]
Tensor bias_add(const Tensor& x, const Tensor& b); // [I,J] + [J]
Tensor dot(const Tensor& a, const Tensor& b);      // rank-1 pair -> rank 0

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<Index>& axes);

Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows);
Tensor scatter_rows(const Tensor& rows_t, const std::vector<Index>& rows, Index total_rows);
Tensor gather_labels(const Tensor& a, const std::vector<int32_t>& labels);  // [n,C] -> [n]
Tensor scatter_labels(const Tensor& v, const std::vector<int32_t>& labels, Index classes);
Tensor take(const Tensor& v, Index i);             // rank-1 -> rank 0
Tensor put(const Tensor& s, Index i, Index n);     // rank 0 -> rank-1 one-hot * s

// Convolution plumbing: unfold [n,c,h,w] into rows of receptive fields
// ([n*oh*ow, c*kh*kw]) and its adjoint scatter-add.
Tensor im2col(const Tensor& x, Index kh, Index kw, Index stride, Index pad);
Tensor col2im(const Tensor& cols, const Shape& xshape, Index kh, Index kw, Index stride,
              Index pad);
Tensor avgpool(const Tensor& x, Index k);          // [n,c,h,w], floor division
Tensor upsample_nn(const Tensor& x, Index k);

// Forward-only helpers (used as detached constants in recorded code).
Tensor rowmax(const Tensor& a);                    // [I,J] -> [I]
std::vector<Index> argmax_rows(const Tensor& a);
Tensor step_mask(const Tensor& a);                 // 1 where a > 0

// Output spatial size for conv/pool arithmetic.
Index conv_out_dim(Index in, Index k, Index stride, Index pad);

}  // namespace sqd
