#include "sqd/autodiff.hpp"

#include <unordered_map>

namespace sqd {

namespace {

Var ensure(const Var& v, const char* who) {
  if (!v.defined()) throw TapeError(std::string(who) + ": undefined var");
  return v;
}

}  // namespace

const Tensor& Var::value() const {
  if (!node_) throw TapeError("value of undefined var");
  return node_->value;
}

const std::vector<Var>& Var::parents() const {
  static const std::vector<Var> none;
  return node_ ? node_->parents : none;
}

Var Var::leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->needs_grad = true;
  return Var(std::move(n));
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var Var::make(const char* op, Tensor value, std::vector<Var> parents, Vjp vjp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const Var& p : parents)
    if (p.needs_grad()) n->needs_grad = true;
  if (n->needs_grad) {
    n->parents = std::move(parents);
    n->vjp = std::move(vjp);
  }
  return Var(std::move(n));
}

Var detach(const Var& v) { return Var::constant(ensure(v, "detach").value()); }

std::vector<Var> grad(const Var& scalar_out, const std::vector<Var>& wrt, bool recordable) {
  ensure(scalar_out, "grad");
  if (scalar_out.value().rank() != 0)
    throw TapeError("grad: output must be rank 0, got " + shape_str(scalar_out.value().shape()));
  for (const Var& w : wrt) {
    ensure(w, "grad");
    if (!w.needs_grad()) throw TapeError("grad: wrt var does not carry a gradient");
  }

  // Postorder over the differentiable subgraph; parents land before users.
  std::vector<Var> topo;
  std::unordered_map<const Node*, bool> done;
  if (scalar_out.needs_grad()) {
    std::vector<std::pair<Var, size_t>> stack;
    stack.emplace_back(scalar_out, 0);
    done[scalar_out.node()] = false;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const auto& parents = v.parents();
      bool descended = false;
      while (next < parents.size()) {
        const Var& p = parents[next++];
        if (!p.needs_grad()) continue;
        auto [it, fresh] = done.emplace(p.node(), false);
        if (fresh) {
          stack.emplace_back(p, 0);
          descended = true;
          break;
        }
      }
      if (descended) continue;
      done[v.node()] = true;
      topo.push_back(v);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> cot;
  if (scalar_out.needs_grad()) cot.emplace(scalar_out.node(), Var::constant(Tensor::scalar(1.0)));

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const Var& v = *it;
    auto found = cot.find(v.node());
    if (found == cot.end()) continue;
    const auto& parents = v.parents();
    if (parents.empty()) continue;
    std::vector<Var> pg = v.vjp()(found->second, v);
    if (pg.size() != parents.size())
      throw TapeError(std::string("grad: op '") + v.op() + "' returned " +
                      std::to_string(pg.size()) + " cotangents for " +
                      std::to_string(parents.size()) + " parents");
    for (size_t i = 0; i < parents.size(); ++i) {
      const Var& p = parents[i];
      if (!p.needs_grad()) continue;
      if (!pg[i].value().same_shape(p.value()))
        throw TapeError(std::string("grad: op '") + v.op() + "' cotangent shape " +
                        shape_str(pg[i].value().shape()) + " vs parent " +
                        shape_str(p.value().shape()));
      auto [slot, fresh] = cot.emplace(p.node(), pg[i]);
      if (!fresh) slot->second = add(slot->second, pg[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto found = cot.find(w.node());
    Var g = found != cot.end() ? found->second
                               : Var::constant(Tensor::zeros(w.value().shape()));
    out.push_back(recordable ? g : detach(g));
  }
  return out;
}

// --- ops ---

Var add(const Var& a, const Var& b) {
  return Var::make("add", add(a.value(), b.value()), {a, b},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return Var::make("sub", sub(a.value(), b.value()), {a, b},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  return Var::make("mul", mul(a.value(), b.value()), {a, b},
                   [a, b](const Var& g, const Var&) -> std::vector<Var> {
                     return {mul(g, b), mul(g, a)};
                   });
}

Var div(const Var& a, const Var& b) {
  return Var::make("div", div(a.value(), b.value()), {a, b},
                   [b](const Var& g, const Var& out) -> std::vector<Var> {
                     return {div(g, b), neg(div(mul(g, out), b))};
                   });
}

Var scale(const Var& a, double c) {
  return Var::make("scale", scale(a.value(), c), {a},
                   [c](const Var& g, const Var&) -> std::vector<Var> { return {scale(g, c)}; });
}

Var add_const(const Var& a, double c) {
  return Var::make("add_const", add_const(a.value(), c), {a},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {g}; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var smul(const Var& s, const Var& a) {
  return Var::make("smul", smul(s.value(), a.value()), {s, a},
                   [s, a](const Var& g, const Var&) -> std::vector<Var> {
                     return {sum(mul(g, a)), smul(s, g)};
                   });
}

Var matmul(const Var& a, const Var& b) {
  return Var::make("matmul", matmul(a.value(), b.value()), {a, b},
                   [a, b](const Var& g, const Var&) -> std::vector<Var> {
                     return {matmul(g, transpose(b)), matmul(transpose(a), g)};
                   });
}

Var transpose(const Var& a) {
  return Var::make("transpose", transpose(a.value()), {a},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {transpose(g)}; });
}

Var tanh(const Var& a) {
  return Var::make("tanh", tanh(a.value()), {a},
                   [](const Var& g, const Var& out) -> std::vector<Var> {
                     return {mul(g, add_const(neg(mul(out, out)), 1.0))};
                   });
}

Var relu(const Var& a) {
  Tensor mask = step_mask(a.value());
  return Var::make("relu", relu(a.value()), {a},
                   [mask](const Var& g, const Var&) -> std::vector<Var> {
                     return {mul(g, Var::constant(mask))};
                   });
}

Var softplus(const Var& a) {
  return Var::make("softplus", softplus(a.value()), {a},
                   [a](const Var& g, const Var&) -> std::vector<Var> {
                     return {mul(g, sigmoid(a))};
                   });
}

Var sigmoid(const Var& a) {
  return Var::make("sigmoid", sigmoid(a.value()), {a},
                   [](const Var& g, const Var& out) -> std::vector<Var> {
                     return {mul(g, mul(out, add_const(neg(out), 1.0)))};
                   });
}

Var exp(const Var& a) {
  return Var::make("exp", exp(a.value()), {a},
                   [](const Var& g, const Var& out) -> std::vector<Var> {
                     return {mul(g, out)};
                   });
}

Var log(const Var& a) {
  return Var::make("log", log(a.value()), {a},
                   [a](const Var& g, const Var&) -> std::vector<Var> { return {div(g, a)}; });
}

Var sqrt(const Var& a) {
  // The tiny offset keeps the rule finite at 0; cosine terms hit it only
  // where the incoming cotangent is exactly zero.
  return Var::make("sqrt", sqrt(a.value()), {a},
                   [](const Var& g, const Var& out) -> std::vector<Var> {
                     return {div(g, add_const(scale(out, 2.0), 1e-300))};
                   });
}

Var sum(const Var& a) {
  Shape s = a.value().shape();
  return Var::make("sum", sum(a.value()), {a},
                   [s](const Var& g, const Var&) -> std::vector<Var> {
                     return {smul(g, Var::constant(Tensor::ones(s)))};
                   });
}

Var sum_rows(const Var& a) {
  Index rows = a.value().dim(0);
  return Var::make("sum_rows", sum_rows(a.value()), {a},
                   [rows](const Var& g, const Var&) -> std::vector<Var> {
                     return {broadcast_row(g, rows)};
                   });
}

Var sum_cols(const Var& a) {
  Index cols = a.value().dim(1);
  return Var::make("sum_cols", sum_cols(a.value()), {a},
                   [cols](const Var& g, const Var&) -> std::vector<Var> {
                     return {broadcast_col(g, cols)};
                   });
}

Var broadcast_row(const Var& v, Index rows) {
  return Var::make("broadcast_row", broadcast_row(v.value(), rows), {v},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {sum_rows(g)}; });
}

Var broadcast_col(const Var& v, Index cols) {
  return Var::make("broadcast_col", broadcast_col(v.value(), cols), {v},
                   [](const Var& g, const Var&) -> std::vector<Var> { return {sum_cols(g)}; });
}

Var bias_add(const Var& x, const Var& b) {
  return Var::make("bias_add", bias_add(x.value(), b.value()), {x, b},
                   [](const Var& g, const Var&) -> std::vector<Var> {
                     return {g, sum_rows(g)};
                   });
}

Var dot(const Var& a, const Var& b) {
  return Var::make("dot", dot(a.value(), b.value()), {a, b},
                   [a, b](const Var& g, const Var&) -> std::vector<Var> {
                     return {smul(g, b), smul(g, a)};
                   });
}

Var reshape(const Var& a, Shape shape) {
  Shape prev = a.value().shape();
  return Var::make("reshape", reshape(a.value(), shape), {a},
                   [prev](const Var& g, const Var&) -> std::vector<Var> {
                     return {reshape(g, prev)};
                   });
}

Var permute(const Var& a, const std::vector<Index>& axes) {
  std::vector<Index> inverse(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inverse[size_t(axes[i])] = Index(i);
  return Var::make("permute", permute(a.value(), axes), {a},
                   [inverse](const Var& g, const Var&) -> std::vector<Var> {
                     return {permute(g, inverse)};
                   });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Index total = a.value().dim(0);
  return Var::make("gather_rows", gather_rows(a.value(), rows), {a},
                   [rows, total](const Var& g, const Var&) -> std::vector<Var> {
                     return {scatter_rows(g, rows, total)};
                   });
}

Var scatter_rows(const Var& rows_t, const std::vector<Index>& rows, Index total_rows) {
  return Var::make("scatter_rows", scatter_rows(rows_t.value(), rows, total_rows), {rows_t},
                   [rows](const Var& g, const Var&) -> std::vector<Var> {
                     return {gather_rows(g, rows)};
                   });
}

Var gather_labels(const Var& a, const std::vector<int32_t>& labels) {
  Index classes = a.value().dim(1);
  return Var::make("gather_labels", gather_labels(a.value(), labels), {a},
                   [labels, classes](const Var& g, const Var&) -> std::vector<Var> {
                     return {scatter_labels(g, labels, classes)};
                   });
}

Var scatter_labels(const Var& v, const std::vector<int32_t>& labels, Index classes) {
  return Var::make("scatter_labels", scatter_labels(v.value(), labels, classes), {v},
                   [labels](const Var& g, const Var&) -> std::vector<Var> {
                     return {gather_labels(g, labels)};
                   });
}

Var take(const Var& v, Index i) {
  Index n = v.value().dim(0);
  return Var::make("take", take(v.value(), i), {v},
                   [i, n](const Var& g, const Var&) -> std::vector<Var> {
                     return {put(g, i, n)};
                   });
}

Var put(const Var& s, Index i, Index n) {
  return Var::make("put", put(s.value(), i, n), {s},
                   [i](const Var& g, const Var&) -> std::vector<Var> { return {take(g, i)}; });
}

Var im2col(const Var& x, Index kh, Index kw, Index stride, Index pad) {
  Shape xs = x.value().shape();
  return Var::make("im2col", im2col(x.value(), kh, kw, stride, pad), {x},
                   [xs, kh, kw, stride, pad](const Var& g, const Var&) -> std::vector<Var> {
                     return {col2im(g, xs, kh, kw, stride, pad)};
                   });
}

Var col2im(const Var& cols, const Shape& xshape, Index kh, Index kw, Index stride, Index pad) {
  return Var::make("col2im", col2im(cols.value(), xshape, kh, kw, stride, pad), {cols},
                   [kh, kw, stride, pad](const Var& g, const Var&) -> std::vector<Var> {
                     return {im2col(g, kh, kw, stride, pad)};
                   });
}

Var avgpool(const Var& x, Index k) {
  return Var::make("avgpool", avgpool(x.value(), k), {x},
                   [k](const Var& g, const Var&) -> std::vector<Var> {
                     return {scale(upsample_nn(g, k), 1.0 / double(k * k))};
                   });
}

Var upsample_nn(const Var& x, Index k) {
  return Var::make("upsample_nn", upsample_nn(x.value(), k), {x},
                   [k](const Var& g, const Var&) -> std::vector<Var> {
                     return {scale(avgpool(g, k), double(k * k))};
                   });
}

double grad_check_many(const std::function<Var(const std::vector<Var>&)>& f,
                       const std::vector<Tensor>& inputs, double eps) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(Var::leaf(t));
  std::vector<Var> analytic = grad(f(leaves), leaves);

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& base = inputs[i];
    for (Index j = 0; j < base.size(); ++j) {
      auto eval_at = [&](double delta) {
        std::vector<double> bumped = base.storage();
        bumped[size_t(j)] += delta;
        std::vector<Var> args = leaves;
        args[i] = Var::leaf(Tensor::from_data(base.shape(), std::move(bumped)));
        return f(args).value().scalar_value();
      };
      double fd = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      double tape = analytic[i].value().at(j);
      double err = std::abs(tape - fd) / std::max(std::abs(tape) + std::abs(fd), 1.0);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

GradCheckReport grad_check(const std::function<Var(const Var&)>& f, const Tensor& point,
                           double eps, double tol) {
  double err = grad_check_many(
      [&f](const std::vector<Var>& in) { return f(in[0]); }, {point}, eps);
  return {err, err <= tol};
}

}  // namespace sqd
