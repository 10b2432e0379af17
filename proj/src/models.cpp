#include "sqd/models.hpp"

#include <cmath>
#include <sstream>

#include "sqd/rng.hpp"

namespace sqd {

namespace {

const char* act_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

Var act(Activation a, const Var& x) {
  switch (a) {
    case Activation::Tanh: return tanh(x);
    case Activation::Relu: return relu(x);
    case Activation::Softplus: return softplus(x);
  }
  throw ShapeError("unknown activation");
}

// Spatial side lengths after each pooling block.
std::pair<Index, Index> pooled_dims(const Architecture& arch) {
  Index h = arch.input_shape[1], w = arch.input_shape[2];
  for (Index b = 0; b < arch.blocks; ++b) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

}  // namespace

void Architecture::validate() const {
  if (classes < 2) throw ShapeError("architecture: needs >= 2 classes");
  if (kind == ArchKind::Mlp) {
    // Image-shaped input is fine; the forward pass flattens it.
    if (input_shape.empty() || input_size() < 1)
      throw ShapeError("architecture: mlp needs a nonempty input shape, got " +
                       shape_str(input_shape));
    for (Index h : hidden)
      if (h < 1) throw ShapeError("architecture: hidden width must be >= 1");
  } else {
    if (input_shape.size() != 3)
      throw ShapeError("architecture: convnet input must be [c,h,w], got " +
                       shape_str(input_shape));
    if (channels < 1 || blocks < 1)
      throw ShapeError("architecture: convnet needs channels, blocks >= 1");
    auto [h, w] = pooled_dims(*this);
    if (h < 1 || w < 1)
      throw ShapeError("architecture: input " + shape_str(input_shape) + " too small for " +
                       std::to_string(blocks) + " pooling blocks");
  }
}

std::string Architecture::describe() const {
  std::ostringstream os;
  if (kind == ArchKind::Mlp) {
    os << "mlp(" << input_size();
    for (Index h : hidden) os << "-" << h;
    os << "-" << classes << "," << act_name(activation) << ")";
  } else {
    os << "convnet-mini(" << input_shape[0] << "x" << input_shape[1] << "x" << input_shape[2]
       << ",c" << channels << ",b" << blocks << "," << classes << "," << act_name(activation)
       << ")";
  }
  return os.str();
}

ParamSet init_params(const Architecture& arch, const InitSpec& init) {
  arch.validate();
  CounterRng rng(init.seed, "init");
  auto uniform_fill = [&rng](Shape shape, Index fan_in) {
    double bound = std::sqrt(6.0 / double(fan_in));
    std::vector<double> v(size_t(shape_size(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v));
  };

  ParamSet out;
  if (arch.kind == ArchKind::Mlp) {
    std::vector<Index> dims;
    dims.push_back(arch.input_size());
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(arch.classes);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      std::string tag = "fc" + std::to_string(i);
      out.add(tag + ".w", uniform_fill({dims[i], dims[i + 1]}, dims[i]));
      out.add(tag + ".b", Tensor::zeros({dims[i + 1]}));
    }
  } else {
    Index ic = arch.input_shape[0];
    for (Index b = 0; b < arch.blocks; ++b) {
      std::string tag = "conv" + std::to_string(b);
      out.add(tag + ".w", uniform_fill({arch.channels, ic, 3, 3}, ic * 9));
      out.add(tag + ".b", Tensor::zeros({arch.channels}));
      ic = arch.channels;
    }
    auto [h, w] = pooled_dims(arch);
    Index feat = arch.channels * h * w;
    out.add("head.w", uniform_fill({feat, arch.classes}, feat));
    out.add("head.b", Tensor::zeros({arch.classes}));
  }
  return out;
}

Var forward(const Architecture& arch, const std::vector<Var>& params, const Var& x_in) {
  Index n = x_in.value().dim(0);
  if (arch.kind == ArchKind::Mlp) {
    Var x = x_in.value().rank() == 2 ? x_in : reshape(x_in, {n, arch.input_size()});
    size_t layers = params.size() / 2;
    for (size_t i = 0; i < layers; ++i) {
      x = bias_add(matmul(x, params[2 * i]), params[2 * i + 1]);
      if (i + 1 < layers) x = act(arch.activation, x);
    }
    return x;
  }

  Var x = x_in.value().rank() == 4
              ? x_in
              : reshape(x_in, {n, arch.input_shape[0], arch.input_shape[1], arch.input_shape[2]});
  Index ic = arch.input_shape[0], h = arch.input_shape[1], w = arch.input_shape[2];
  for (Index b = 0; b < arch.blocks; ++b) {
    const Var& W = params[size_t(2 * b)];
    const Var& bias = params[size_t(2 * b + 1)];
    Var cols = im2col(x, 3, 3, 1, 1);
    Var wmat = transpose(reshape(W, {arch.channels, ic * 9}));
    Var z = bias_add(matmul(cols, wmat), bias);
    Var z4 = permute(reshape(z, {n, h, w, arch.channels}), {0, 3, 1, 2});
    x = avgpool(act(arch.activation, z4), 2);
    ic = arch.channels;
    h /= 2;
    w /= 2;
  }
  Index feat = arch.channels * h * w;
  Var flat = reshape(x, {n, feat});
  return bias_add(matmul(flat, params[params.size() - 2]), params[params.size() - 1]);
}

Var ce_per_instance(const Var& logits, const std::vector<int32_t>& labels) {
  if (logits.value().rank() != 2)
    throw ShapeError("cross-entropy: logits must be [n,classes]");
  Index classes = logits.value().dim(1);
  Var shift = Var::constant(rowmax(logits.value()));
  Var shifted = sub(logits, broadcast_col(shift, classes));
  Var lse = add(log(sum_cols(exp(shifted))), shift);
  return sub(lse, gather_labels(logits, labels));
}

Var loss(const Architecture& arch, const std::vector<Var>& params, const Var& x,
         const std::vector<int32_t>& labels, Reduction reduction) {
  if (labels.empty()) throw ShapeError("loss: empty batch");
  Var ce = ce_per_instance(forward(arch, params, x), labels);
  Var total = sum(ce);
  return reduction == Reduction::Mean ? scale(total, 1.0 / double(labels.size())) : total;
}

double loss_value(const Architecture& arch, const ParamSet& params,
                  const LabeledDataset& data) {
  std::vector<Var> vars;
  for (size_t i = 0; i < params.count(); ++i) vars.push_back(Var::constant(params.tensor(i)));
  return loss(arch, vars, Var::constant(data.X), data.y).value().scalar_value();
}

std::vector<Index> batch_rows(Index data_count, Index batch, uint64_t seed,
                              uint64_t global_iter) {
  std::vector<Index> rows;
  if (batch <= 0 || batch >= data_count) {
    rows.resize(size_t(data_count));
    for (Index i = 0; i < data_count; ++i) rows[size_t(i)] = i;
    return rows;
  }
  CounterRng rng(seed, "batch", global_iter);
  rows.resize(size_t(batch));
  for (Index i = 0; i < batch; ++i) rows[size_t(i)] = Index(rng.uniform_index(uint64_t(data_count)));
  return rows;
}

TrainResult alg(const LabeledDataset& data, const Architecture& arch, const ParamSet& params0,
                const TrainConfig& cfg,
                const std::function<void(Index, const ParamSet&, double)>& after_step) {
  if (data.count() == 0) throw ShapeError("alg: empty dataset");
  TrainResult res;
  res.params = params0;
  std::vector<Tensor> velocity;

  for (Index it = 0; it < cfg.iters; ++it) {
    uint64_t giter = cfg.iter0 + uint64_t(it);
    LabeledDataset batch = data.subset(batch_rows(data.count(), cfg.batch, cfg.seed, giter));

    double loss_val = 0.0;
    std::vector<Var> grads;
    std::vector<Var> leaves = res.params.leaves();
    try {
      Var L = loss(arch, leaves, Var::constant(batch.X), batch.y, Reduction::Mean);
      loss_val = L.value().scalar_value();
      grads = grad(L, leaves);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(Index(giter), e.what());
    }

    std::vector<Tensor> next;
    next.reserve(grads.size());
    for (size_t i = 0; i < grads.size(); ++i) {
      Tensor step = grads[i].value();
      if (cfg.momentum != 0.0) {
        if (velocity.size() <= i) velocity.push_back(Tensor::zeros(step.shape()));
        velocity[i] = add(scale(velocity[i], cfg.momentum), step);
        step = velocity[i];
      }
      next.push_back(sub(res.params.tensor(i), scale(step, cfg.lr)));
    }
    res.params = res.params.with_values(next);

    if (cfg.log_losses) res.losses.push_back(loss_val);
    if (after_step) after_step(it, res.params, loss_val);
  }
  return res;
}

double accuracy(const Architecture& arch, const ParamSet& params, const LabeledDataset& data) {
  if (data.count() == 0) throw ShapeError("accuracy: empty dataset");
  std::vector<Var> vars;
  for (size_t i = 0; i < params.count(); ++i) vars.push_back(Var::constant(params.tensor(i)));
  Tensor logits = forward(arch, vars, Var::constant(data.X)).value();
  std::vector<Index> pred = argmax_rows(logits);
  Index hit = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == Index(data.y[i])) ++hit;
  return double(hit) / double(pred.size());
}

Tensor per_instance_losses(const Architecture& arch, const ParamSet& params,
                           const LabeledDataset& data) {
  std::vector<Var> vars;
  for (size_t i = 0; i < params.count(); ++i) vars.push_back(Var::constant(params.tensor(i)));
  return ce_per_instance(forward(arch, vars, Var::constant(data.X)), data.y).value();
}

ParamSet loss_gradient(const Architecture& arch, const ParamSet& params,
                       const LabeledDataset& data, Reduction reduction) {
  std::vector<Var> leaves = params.leaves();
  Var L = loss(arch, leaves, Var::constant(data.X), data.y, reduction);
  std::vector<Var> grads = grad(L, leaves);
  std::vector<Tensor> values;
  values.reserve(grads.size());
  for (const Var& g : grads) values.push_back(g.value());
  return params.with_values(values);
}

}  // namespace sqd
