#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sqd/tensor.hpp"

namespace sqd {

class Var;

// Backward rule for one op: given the cotangent of the output and the output
// itself, produce cotangents for each parent (same order as the parent list).
// Rules are written with recorded ops only, so gradients of gradients work.
using Vjp = std::function<std::vector<Var>(const Var& g, const Var& out)>;

struct Node {
  Tensor value;
  std::vector<Var> parents;
  Vjp vjp;
  bool needs_grad = false;
  const char* op = "leaf";
};

/// Handle into the computation graph. Copies are cheap and share the node.
/// The graph is functional: nodes are immutable once created and freed by
/// reference counting when the last handle goes away.
class Var {
 public:
  Var() = default;

  // Differentiable input.
  static Var leaf(Tensor value);
  // Input excluded from differentiation.
  static Var constant(Tensor value);
  // Internal: op result. Parents that carry no gradient are pruned.
  static Var make(const char* op, Tensor value, std::vector<Var> parents, Vjp vjp);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  bool needs_grad() const { return node_ && node_->needs_grad; }
  const char* op() const { return node_ ? node_->op : "undefined"; }
  const std::vector<Var>& parents() const;
  const Vjp& vjp() const { return node_->vjp; }
  // Node identity, used as a map key during backward traversal.
  const Node* node() const { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

// Cut the tape: same value, no history.
Var detach(const Var& v);

/// Reverse-mode gradient of a rank-0 output with respect to each entry of
/// `wrt`. Entries must be differentiable; leaves the output does not reach
/// get zero gradients. With `recordable` the results stay on the tape and can
/// be differentiated again; otherwise they are detached.
std::vector<Var> grad(const Var& scalar_out, const std::vector<Var>& wrt,
                      bool recordable = false);

// --- recorded ops, mirroring the tensor kernels ---

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var neg(const Var& a);
Var smul(const Var& s, const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var tanh(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);

Var sum(const Var& a);
Var sum_rows(const Var& a);
Var sum_cols(const Var& a);
Var broadcast_row(const Var& v, Index rows);
Var broadcast_col(const Var& v, Index cols);
Var bias_add(const Var& x, const Var& b);
Var dot(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<Index>& axes);

Var gather_rows(const Var& a, const std::vector<Index>& rows);
Var scatter_rows(const Var& rows_t, const std::vector<Index>& rows, Index total_rows);
Var gather_labels(const Var& a, const std::vector<int32_t>& labels);
Var scatter_labels(const Var& v, const std::vector<int32_t>& labels, Index classes);
Var take(const Var& v, Index i);
Var put(const Var& s, Index i, Index n);

Var im2col(const Var& x, Index kh, Index kw, Index stride, Index pad);
Var col2im(const Var& cols, const Shape& xshape, Index kh, Index kw, Index stride, Index pad);
Var avgpool(const Var& x, Index k);
Var upsample_nn(const Var& x, Index k);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Compares reverse-mode gradients of `f` against central finite differences
/// over every element of every input. Error is |tape - fd| / max(|tape| + |fd|, 1),
/// so it reads as absolute near zero and relative for large gradients.
double grad_check_many(const std::function<Var(const std::vector<Var>&)>& f,
                       const std::vector<Tensor>& inputs, double eps = 1e-5);

GradCheckReport grad_check(const std::function<Var(const Var&)>& f, const Tensor& point,
                           double eps = 1e-5, double tol = 1e-6);

}  // namespace sqd
