#include "sqd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sqd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) shape_fail(op, detail);
}

Tensor finish(const char* op, Shape shape, std::vector<double> data) {
  Tensor t = Tensor::wrap(std::move(shape), std::move(data));
  if (!t.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite output");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& a, Index r) {
  require(a.rank() == r, op, "expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

template <class F>
Tensor map_unary(const char* op, const Tensor& a, F f) {
  require(a.defined(), op, "undefined tensor");
  std::vector<double> out(size_t(a.size()));
  const double* p = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(p[i]);
  return finish(op, a.shape(), std::move(out));
}

template <class F>
Tensor map_binary(const char* op, const Tensor& a, const Tensor& b, F f) {
  require_same_shape(op, a, b);
  std::vector<double> out(size_t(a.size()));
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  return finish(op, a.shape(), std::move(out));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  Index n = shape_size(shape);
  return wrap(std::move(shape), std::vector<double>(size_t(n), 0.0));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  Index n = shape_size(shape);
  Tensor t = wrap(std::move(shape), std::vector<double>(size_t(n), v));
  if (!t.all_finite()) throw NonFiniteError("full: non-finite fill value");
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != Index(data.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  Tensor t = wrap(std::move(shape), std::move(data));
  if (!t.all_finite()) throw NonFiniteError("from_data: non-finite input");
  return t;
}

Tensor Tensor::wrap(Shape shape, std::vector<double> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
  return t;
}

Index Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: not rank 2: " + shape_str(shape_));
  return shape_[0];
}

Index Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: not rank 2: " + shape_str(shape_));
  return shape_[1];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value: size != 1: " + shape_str(shape_));
  return (*data_)[0];
}

Eigen::Map<const RowMat> Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix: not rank 2: " + shape_str(shape_));
  return {data(), shape_[0], shape_[1]};
}

bool Tensor::all_finite() const {
  if (!defined()) return true;
  return array().isFinite().all();
}

bool Tensor::equals(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  if (!defined()) return !o.defined();
  return std::memcmp(data(), o.data(), size_t(size()) * sizeof(double)) == 0;
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) { return map_binary("add", a, b, [](double x, double y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return map_binary("sub", a, b, [](double x, double y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return map_binary("mul", a, b, [](double x, double y) { return x * y; }); }
Tensor div(const Tensor& a, const Tensor& b) { return map_binary("div", a, b, [](double x, double y) { return x / y; }); }

Tensor scale(const Tensor& a, double c) { return map_unary("scale", a, [c](double x) { return x * c; }); }
Tensor add_const(const Tensor& a, double c) { return map_unary("add_const", a, [c](double x) { return x + c; }); }
Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor smul(const Tensor& s, const Tensor& a) {
  require_rank("smul", s, 0);
  double c = s.scalar_value();
  return map_unary("smul", a, [c](double x) { return x * c; });
}

// --- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  require(a.dim(1) == b.dim(0), "matmul",
          "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(size_t(a.dim(0) * b.dim(1)));
  MMap(out.data(), a.dim(0), b.dim(1)).noalias() = a.matrix() * b.matrix();
  return finish("matmul", {a.dim(0), b.dim(1)}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  std::vector<double> out(size_t(a.size()));
  MMap(out.data(), a.dim(1), a.dim(0)) = a.matrix().transpose();
  return finish("transpose", {a.dim(1), a.dim(0)}, std::move(out));
}

// --- nonlinearities ---

Tensor tanh(const Tensor& a) { return map_unary("tanh", a, [](double x) { return std::tanh(x); }); }

Tensor relu(const Tensor& a) { return map_unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }); }

Tensor softplus(const Tensor& a) {
  // max(x,0) + log1p(exp(-|x|)) is overflow-safe.
  return map_unary("softplus", a, [](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
}

Tensor sigmoid(const Tensor& a) {
  return map_unary("sigmoid", a, [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
}

Tensor exp(const Tensor& a) { return map_unary("exp", a, [](double x) { return std::exp(x); }); }
Tensor log(const Tensor& a) { return map_unary("log", a, [](double x) { return std::log(x); }); }
Tensor sqrt(const Tensor& a) { return map_unary("sqrt", a, [](double x) { return std::sqrt(x); }); }

// --- reductions and broadcasts ---

Tensor sum(const Tensor& a) {
  require(a.defined(), "sum", "undefined tensor");
  return finish("sum", {}, {a.array().sum()});
}

Tensor sum_rows(const Tensor& a) {
  require_rank("sum_rows", a, 2);
  std::vector<double> out(size_t(a.dim(1)));
  Eigen::Map<Eigen::RowVectorXd>(out.data(), a.dim(1)) = a.matrix().colwise().sum();
  return finish("sum_rows", {a.dim(1)}, std::move(out));
}

Tensor sum_cols(const Tensor& a) {
  require_rank("sum_cols", a, 2);
  std::vector<double> out(size_t(a.dim(0)));
  Eigen::Map<Eigen::VectorXd>(out.data(), a.dim(0)) = a.matrix().rowwise().sum();
  return finish("sum_cols", {a.dim(0)}, std::move(out));
}

Tensor broadcast_row(const Tensor& v, Index rows) {
  require_rank("broadcast_row", v, 1);
  require(rows >= 1, "broadcast_row", "rows must be >= 1");
  Index j = v.dim(0);
  std::vector<double> out(size_t(rows * j));
  for (Index r = 0; r < rows; ++r)
    std::copy(v.data(), v.data() + j, out.begin() + r * j);
  return finish("broadcast_row", {rows, j}, std::move(out));
}

Tensor broadcast_col(const Tensor& v, Index cols) {
  require_rank("broadcast_col", v, 1);
  require(cols >= 1, "broadcast_col", "cols must be >= 1");
  Index i = v.dim(0);
  std::vector<double> out(size_t(i * cols));
  for (Index r = 0; r < i; ++r)
    std::fill(out.begin() + r * cols, out.begin() + (r + 1) * cols, v.at(r));
  return finish("broadcast_col", {i, cols}, std::move(out));
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  require_rank("bias_add", x, 2);
  require_rank("bias_add", b, 1);
  require(x.dim(1) == b.dim(0), "bias_add",
          "bias length " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out(size_t(x.size()));
  const double* px = x.data();
  const double* pb = b.data();
  Index rows = x.dim(0), cols = x.dim(1);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) out[size_t(r * cols + c)] = px[r * cols + c] + pb[c];
  return finish("bias_add", x.shape(), std::move(out));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank("dot", a, 1);
  require_same_shape("dot", a, b);
  return finish("dot", {}, {a.array().cwiseProduct(b.array()).sum()});
}

// --- shape manipulation ---

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_size(shape) == a.size(), "reshape",
          shape_str(a.shape()) + " -> " + shape_str(shape) + " changes size");
  return Tensor::wrap(std::move(shape), a.storage());
}

Tensor permute(const Tensor& a, const std::vector<Index>& axes) {
  Index r = a.rank();
  require(Index(axes.size()) == r, "permute", "axes rank mismatch");
  std::vector<bool> seen(size_t(r), false);
  for (Index ax : axes) {
    require(ax >= 0 && ax < r && !seen[size_t(ax)], "permute", "invalid axes");
    seen[size_t(ax)] = true;
  }
  Shape out_shape(size_t(r), 0);
  for (Index i = 0; i < r; ++i) out_shape[size_t(i)] = a.dim(axes[size_t(i)]);

  std::vector<Index> in_strides(size_t(r), 1), out_strides(size_t(r), 1);
  for (Index i = r - 2; i >= 0; --i)
    in_strides[size_t(i)] = in_strides[size_t(i + 1)] * a.dim(i + 1);
  for (Index i = r - 2; i >= 0; --i)
    out_strides[size_t(i)] = out_strides[size_t(i + 1)] * out_shape[size_t(i + 1)];

  std::vector<double> out(size_t(a.size()));
  std::vector<Index> idx(size_t(r), 0);
  const double* p = a.data();
  for (Index flat = 0; flat < a.size(); ++flat) {
    Index src = 0;
    for (Index i = 0; i < r; ++i) src += idx[size_t(i)] * in_strides[size_t(axes[size_t(i)])];
    out[size_t(flat)] = p[src];
    for (Index i = r - 1; i >= 0; --i) {
      if (++idx[size_t(i)] < out_shape[size_t(i)]) break;
      idx[size_t(i)] = 0;
    }
  }
  return Tensor::wrap(std::move(out_shape), std::move(out));
}

// --- gathers / scatters ---

Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows) {
  require(a.rank() >= 1, "gather_rows", "needs rank >= 1");
  Index stride = a.size() / a.dim(0);
  std::vector<double> out(rows.size() * size_t(stride));
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.dim(0), "gather_rows", "row index out of range");
    std::copy(a.data() + rows[i] * stride, a.data() + (rows[i] + 1) * stride,
              out.begin() + Index(i) * stride);
  }
  Shape s = a.shape();
  s[0] = Index(rows.size());
  return Tensor::wrap(std::move(s), std::move(out));
}

Tensor scatter_rows(const Tensor& rows_t, const std::vector<Index>& rows, Index total_rows) {
  require(rows_t.rank() >= 1, "scatter_rows", "needs rank >= 1");
  require(rows_t.dim(0) == Index(rows.size()), "scatter_rows", "row count mismatch");
  Index stride = rows_t.size() / std::max<Index>(rows_t.dim(0), 1);
  Shape s = rows_t.shape();
  s[0] = total_rows;
  std::vector<double> out(size_t(total_rows * stride), 0.0);
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < total_rows, "scatter_rows", "row index out of range");
    const double* src = rows_t.data() + Index(i) * stride;
    double* dst = out.data() + rows[i] * stride;
    for (Index j = 0; j < stride; ++j) dst[j] += src[j];
  }
  return Tensor::wrap(std::move(s), std::move(out));
}

Tensor gather_labels(const Tensor& a, const std::vector<int32_t>& labels) {
  require_rank("gather_labels", a, 2);
  require(a.dim(0) == Index(labels.size()), "gather_labels", "label count mismatch");
  std::vector<double> out(labels.size());
  Index cols = a.dim(1);
  for (size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < cols, "gather_labels",
            "label " + std::to_string(labels[i]) + " out of range for " + std::to_string(cols) + " classes");
    out[i] = a.at(Index(i) * cols + labels[i]);
  }
  return Tensor::wrap({Index(labels.size())}, std::move(out));
}

Tensor scatter_labels(const Tensor& v, const std::vector<int32_t>& labels, Index classes) {
  require_rank("scatter_labels", v, 1);
  require(v.dim(0) == Index(labels.size()), "scatter_labels", "label count mismatch");
  std::vector<double> out(labels.size() * size_t(classes), 0.0);
  for (size_t i = 0; i < labels.size(); ++i)
    out[i * size_t(classes) + size_t(labels[i])] = v.at(Index(i));
  return Tensor::wrap({Index(labels.size()), classes}, std::move(out));
}

Tensor take(const Tensor& v, Index i) {
  require_rank("take", v, 1);
  require(i >= 0 && i < v.dim(0), "take", "index out of range");
  return Tensor::wrap({}, {v.at(i)});
}

Tensor put(const Tensor& s, Index i, Index n) {
  require_rank("put", s, 0);
  require(i >= 0 && i < n, "put", "index out of range");
  std::vector<double> out(size_t(n), 0.0);
  out[size_t(i)] = s.scalar_value();
  return Tensor::wrap({n}, std::move(out));
}

// --- convolution plumbing ---

Index conv_out_dim(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

Tensor im2col(const Tensor& x, Index kh, Index kw, Index stride, Index pad) {
  require_rank("im2col", x, 4);
  Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Index oh = conv_out_dim(h, kh, stride, pad);
  Index ow = conv_out_dim(w, kw, stride, pad);
  require(oh >= 1 && ow >= 1, "im2col", "kernel larger than padded input");
  std::vector<double> out(size_t(n * oh * ow) * size_t(c * kh * kw), 0.0);
  const double* px = x.data();
  Index row_len = c * kh * kw;
  for (Index in_i = 0; in_i < n; ++in_i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        double* row = out.data() + ((in_i * oh + oy) * ow + ox) * row_len;
        for (Index ci = 0; ci < c; ++ci)
          for (Index ky = 0; ky < kh; ++ky) {
            Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < kw; ++kx) {
              Index ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              row[(ci * kh + ky) * kw + kx] = px[((in_i * c + ci) * h + iy) * w + ix];
            }
          }
      }
  return Tensor::wrap({n * oh * ow, row_len}, std::move(out));
}

Tensor col2im(const Tensor& cols, const Shape& xshape, Index kh, Index kw, Index stride,
              Index pad) {
  require_rank("col2im", cols, 2);
  require(Index(xshape.size()) == 4, "col2im", "xshape must be rank 4");
  Index n = xshape[0], c = xshape[1], h = xshape[2], w = xshape[3];
  Index oh = conv_out_dim(h, kh, stride, pad);
  Index ow = conv_out_dim(w, kw, stride, pad);
  Index row_len = c * kh * kw;
  require(cols.dim(0) == n * oh * ow && cols.dim(1) == row_len, "col2im",
          "cols shape does not match conv geometry");
  std::vector<double> out(size_t(shape_size(xshape)), 0.0);
  const double* pc = cols.data();
  for (Index in_i = 0; in_i < n; ++in_i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const double* row = pc + ((in_i * oh + oy) * ow + ox) * row_len;
        for (Index ci = 0; ci < c; ++ci)
          for (Index ky = 0; ky < kh; ++ky) {
            Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < kw; ++kx) {
              Index ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              out[size_t(((in_i * c + ci) * h + iy) * w + ix)] += row[(ci * kh + ky) * kw + kx];
            }
          }
      }
  return Tensor::wrap(Shape(xshape), std::move(out));
}

Tensor avgpool(const Tensor& x, Index k) {
  require_rank("avgpool", x, 4);
  require(k >= 1, "avgpool", "k must be >= 1");
  Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Index oh = h / k, ow = w / k;
  require(oh >= 1 && ow >= 1, "avgpool", "window larger than input");
  std::vector<double> out(size_t(n * c * oh * ow), 0.0);
  const double* px = x.data();
  double inv = 1.0 / double(k * k);
  for (Index i = 0; i < n * c; ++i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx)
            acc += px[(i * h + oy * k + ky) * w + ox * k + kx];
        out[size_t((i * oh + oy) * ow + ox)] = acc * inv;
      }
  return finish("avgpool", {n, c, oh, ow}, std::move(out));
}

Tensor upsample_nn(const Tensor& x, Index k) {
  require_rank("upsample_nn", x, 4);
  require(k >= 1, "upsample_nn", "k must be >= 1");
  Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Index oh = h * k, ow = w * k;
  std::vector<double> out(size_t(n * c * oh * ow));
  const double* px = x.data();
  for (Index i = 0; i < n * c; ++i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        out[size_t((i * oh + oy) * ow + ox)] = px[(i * h + oy / k) * w + ox / k];
  return Tensor::wrap({n, c, oh, ow}, std::move(out));
}

// --- forward-only helpers ---

Tensor rowmax(const Tensor& a) {
  require_rank("rowmax", a, 2);
  std::vector<double> out(size_t(a.dim(0)));
  Eigen::Map<Eigen::VectorXd>(out.data(), a.dim(0)) = a.matrix().rowwise().maxCoeff();
  return finish("rowmax", {a.dim(0)}, std::move(out));
}

std::vector<Index> argmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("argmax_rows: not rank 2");
  std::vector<Index> out(size_t(a.dim(0)));
  Index cols = a.dim(1);
  for (Index r = 0; r < a.dim(0); ++r) {
    const double* row = a.data() + r * cols;
    out[size_t(r)] = Index(std::max_element(row, row + cols) - row);
  }
  return out;
}

Tensor step_mask(const Tensor& a) {
  return map_unary("step_mask", a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

}  // namespace sqd
