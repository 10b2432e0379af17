#include "sqd/matchcore.hpp"

#include <unordered_map>

#include "sqd/store.hpp"

namespace sqd {

void SyntheticDataset::validate() const {
  if (!instances.defined() || instances.rank() < 2)
    throw ShapeError("synthetic: instances must be rank >= 2");
  if (classes < 2 || ipc < 1) throw ShapeError("synthetic: needs classes >= 2, ipc >= 1");
  if (count() != ipc * classes)
    throw ShapeError("synthetic: " + std::to_string(count()) + " rows, expected ipc*classes = " +
                     std::to_string(ipc * classes));
  if (Index(labels.size()) != count() || Index(subset_of.size()) != count() ||
      Index(frozen.size()) != count())
    throw ShapeError("synthetic: per-row metadata size mismatch");
  std::vector<Index> per_class(size_t(classes), 0);
  for (int32_t c : labels) {
    if (c < 0 || Index(c) >= classes) throw ShapeError("synthetic: label out of range");
    ++per_class[size_t(c)];
  }
  for (Index c = 0; c < classes; ++c)
    if (per_class[size_t(c)] != ipc)
      throw ShapeError("synthetic: class " + std::to_string(c) + " has " +
                       std::to_string(per_class[size_t(c)]) + " rows, expected " +
                       std::to_string(ipc));
  if (K < 1) throw ShapeError("synthetic: K must be >= 1");
  for (Index s : subset_of)
    if (s < 0 || s >= K) throw ShapeError("synthetic: subset id out of range");
}

std::vector<Index> SyntheticDataset::rows_in_subset(Index k) const {
  std::vector<Index> out;
  for (Index i = 0; i < count(); ++i)
    if (subset_of[size_t(i)] == k) out.push_back(i);
  return out;
}

std::vector<Index> SyntheticDataset::rows_in_subsets_upto(Index k) const {
  std::vector<Index> out;
  for (Index i = 0; i < count(); ++i)
    if (subset_of[size_t(i)] <= k) out.push_back(i);
  return out;
}

LabeledDataset SyntheticDataset::view(const std::vector<Index>& rows) const {
  LabeledDataset out;
  out.X = gather_rows(instances, rows);
  out.y.reserve(rows.size());
  for (Index r : rows) out.y.push_back(labels.at(size_t(r)));
  out.classes = classes;
  return out;
}

LabeledDataset SyntheticDataset::as_dataset() const {
  LabeledDataset out;
  out.X = instances;
  out.y = labels;
  out.classes = classes;
  return out;
}

SyntheticDataset init_synthetic(const LabeledDataset& train, Index ipc, uint64_t seed) {
  if (ipc < 1) throw ConfigError("distill.ipc", "needs ipc >= 1");
  train.validate();
  std::vector<Index> picked;
  for (int32_t c = 0; c < int32_t(train.classes); ++c) {
    std::vector<Index> rows = train.rows_of_class(c);
    if (Index(rows.size()) < ipc)
      throw ConfigError("distill.ipc", "class " + std::to_string(c) + " has only " +
                                           std::to_string(rows.size()) + " instances for ipc " +
                                           std::to_string(ipc));
    CounterRng rng(seed, "init-synthetic", uint64_t(c));
    for (Index i = 0; i < ipc; ++i) {
      size_t j = size_t(i) + size_t(rng.uniform_index(rows.size() - size_t(i)));
      std::swap(rows[size_t(i)], rows[j]);
      picked.push_back(rows[size_t(i)]);
    }
  }

  SyntheticDataset S;
  S.instances = gather_rows(train.X, picked);
  S.labels.reserve(picked.size());
  for (int32_t c = 0; c < int32_t(train.classes); ++c)
    for (Index i = 0; i < ipc; ++i) S.labels.push_back(c);
  S.classes = train.classes;
  S.ipc = ipc;
  S.K = 1;
  S.subset_of.assign(size_t(S.count()), 0);
  S.frozen.assign(size_t(S.count()), false);
  S.validate();
  return S;
}

namespace {

template <class T>
T cosine_distance_impl(const T& X, const T& Y) {
  T num = sum_rows(mul(X, Y));
  T nx = sqrt(sum_rows(mul(X, X)));
  T ny = sqrt(sum_rows(mul(Y, Y)));
  T cos = div(num, add_const(mul(nx, ny), 1e-12));
  return sum(add_const(neg(cos), 1.0));
}

template <class T>
T grad_matrix_impl(const T& g, const Shape& s) {
  if (s.size() == 2) return g;
  if (s.size() == 1) return reshape(g, {s[0], 1});
  if (s.size() == 4) return transpose(reshape(g, {s[0], s[1] * s[2] * s[3]}));
  throw ShapeError("grad_matrix: unsupported shape " + shape_str(s));
}

}  // namespace

double cosine_distance(const Tensor& X, const Tensor& Y) {
  if (!X.same_shape(Y) || X.rank() != 2)
    throw ShapeError("cosine_distance: needs matching rank-2 shapes, got " +
                     shape_str(X.shape()) + " vs " + shape_str(Y.shape()));
  return cosine_distance_impl(X, Y).scalar_value();
}

Var cosine_distance(const Var& X, const Var& Y) {
  if (!X.value().same_shape(Y.value()) || X.value().rank() != 2)
    throw ShapeError("cosine_distance: needs matching rank-2 shapes, got " +
                     shape_str(X.value().shape()) + " vs " + shape_str(Y.value().shape()));
  return cosine_distance_impl(X, Y);
}

Tensor grad_matrix(const Tensor& g) { return grad_matrix_impl(g, g.shape()); }
Var grad_matrix(const Var& g) { return grad_matrix_impl(g, g.value().shape()); }

Var matching_loss(const Architecture& arch, const Var& instances,
                  const std::vector<int32_t>& labels, const ParamSet& theta,
                  const ParamSet& g_target) {
  if (labels.empty()) throw ShapeError("matching_loss: empty synthetic view");
  if (!theta.same_layout(g_target))
    throw ShapeError("matching_loss: theta and target layouts differ");

  // Sum-reduced synthetic loss, so the per-instance gradient contributions
  // add unweighted; the metric's scale invariance keeps it comparable with
  // the mean-reduced target.
  std::vector<Var> theta_vars = theta.leaves();
  Var L = loss(arch, theta_vars, instances, labels, Reduction::Sum);
  std::vector<Var> gS = grad(L, theta_vars, true);

  Var total = Var::constant(Tensor::scalar(0.0));
  for (size_t i = 0; i < gS.size(); ++i) {
    Var target = Var::constant(grad_matrix(g_target.tensor(i)));
    total = add(total, cosine_distance(grad_matrix(gS[i]), target));
  }
  return total;
}

namespace {

Tensor zero_frozen_rows(const Tensor& g, const std::vector<bool>& frozen) {
  Index rows = g.dim(0), stride = g.size() / rows;
  std::vector<double> out = g.storage();
  for (Index r = 0; r < rows; ++r)
    if (frozen[size_t(r)])
      std::fill(out.begin() + r * stride, out.begin() + (r + 1) * stride, 0.0);
  return Tensor::wrap(g.shape(), std::move(out));
}

struct MatchEval {
  double loss = 0.0;
  Tensor grad_instances;
};

MatchEval eval_matching(const Architecture& arch, const Tensor& instances,
                        const std::vector<int32_t>& labels, const std::vector<bool>& frozen,
                        const ParamSet& theta, const ParamSet& g_target) {
  if (frozen.size() != size_t(instances.dim(0)))
    throw ShapeError("synthetic_grad: frozen mask size mismatch");
  Var x = Var::leaf(instances);
  Var L = matching_loss(arch, x, labels, theta, g_target);
  Tensor g = grad(L, {x})[0].value();
  return {L.value().scalar_value(), zero_frozen_rows(g, frozen)};
}

}  // namespace

Tensor synthetic_grad(const Architecture& arch, const Tensor& instances,
                      const std::vector<int32_t>& labels, const std::vector<bool>& frozen,
                      const ParamSet& theta, const ParamSet& g_target) {
  return eval_matching(arch, instances, labels, frozen, theta, g_target).grad_instances;
}

double backbone_step(const Architecture& arch, SyntheticDataset& S,
                     const std::vector<Index>& view_rows,
                     const std::vector<Index>& update_rows, MatchState& state,
                     const TrajectoryPool& pool, const LabeledDataset& train, Index m,
                     const BackboneConfig& cfg) {
  for (Index r : update_rows)
    if (S.frozen.at(size_t(r)))
      throw ShapeError("backbone_step: update row " + std::to_string(r) + " is frozen");

  ParamSet g_target;
  if (cfg.mode == MatchMode::TeacherPath) {
    const TeacherTrajectory& tr = pool.trajectories.at(state.traj_id);
    state.theta = tr.checkpoints.at(size_t(m));
    g_target = teacher_gradient(
        tr, m, train,
        BatchSpec{cfg.target_batch, seed_derive(state.stream_seed, "target"),
                  uint64_t(state.iteration)});
  } else {
    TrainConfig inner;
    inner.lr = cfg.inner_lr;
    inner.batch = cfg.inner_batch;
    inner.iters = cfg.inner_steps;
    inner.seed = seed_derive(state.stream_seed, "inner");
    inner.iter0 = uint64_t(state.iteration) * uint64_t(cfg.inner_steps);
    state.theta = alg(S.view(view_rows), arch, state.theta, inner).params;
    LabeledDataset tb = train.subset(batch_rows(
        train.count(), cfg.target_batch, seed_derive(state.stream_seed, "target"),
        uint64_t(state.iteration)));
    g_target = loss_gradient(arch, state.theta, tb, Reduction::Mean);
  }

  LabeledDataset view = S.view(view_rows);
  std::vector<bool> frozen_view;
  frozen_view.reserve(view_rows.size());
  for (Index r : view_rows) frozen_view.push_back(S.frozen[size_t(r)]);
  MatchEval eval = eval_matching(arch, view.X, view.y, frozen_view, state.theta, g_target);

  std::unordered_map<Index, size_t> view_pos;
  for (size_t i = 0; i < view_rows.size(); ++i) view_pos[view_rows[i]] = i;

  Index stride = S.instances.size() / S.count();
  Shape upd_shape = view.X.shape();
  upd_shape[0] = Index(update_rows.size());
  std::vector<double> gu(size_t(Index(update_rows.size()) * stride));
  for (size_t i = 0; i < update_rows.size(); ++i) {
    auto it = view_pos.find(update_rows[i]);
    if (it == view_pos.end())
      throw ShapeError("backbone_step: update row outside the view");
    const double* src = eval.grad_instances.data() + Index(it->second) * stride;
    std::copy(src, src + stride, gu.begin() + Index(i) * stride);
  }
  Tensor g_upd = Tensor::wrap(upd_shape, std::move(gu));

  if (!state.velocity.defined()) state.velocity = Tensor::zeros(upd_shape);
  state.velocity = add(scale(state.velocity, cfg.pixel_momentum), g_upd);

  std::vector<double> next = S.instances.storage();
  for (size_t i = 0; i < update_rows.size(); ++i) {
    const double* v = state.velocity.data() + Index(i) * stride;
    double* dst = next.data() + update_rows[i] * stride;
    for (Index j = 0; j < stride; ++j) dst[j] -= cfg.pixel_lr * v[j];
  }
  S.instances = Tensor::wrap(S.instances.shape(), std::move(next));

  ++state.iteration;
  return eval.loss;
}

void save_synthetic(const std::string& path, const SyntheticDataset& S,
                    const nlohmann::json& extra_manifest) {
  S.validate();
  nlohmann::json manifest = extra_manifest;
  manifest["classes"] = S.classes;
  manifest["ipc"] = S.ipc;
  manifest["K"] = S.K;
  manifest["labels"] = S.labels;
  manifest["subset_of"] = S.subset_of;
  std::vector<int> fr(S.frozen.begin(), S.frozen.end());
  manifest["frozen"] = fr;
  save_store(path, StoreKind::Synthetic, S.instances, manifest);
}

SyntheticDataset load_synthetic(const std::string& path) {
  StoreData store = load_store(path, StoreKind::Synthetic);
  nlohmann::json manifest = load_manifest(path);
  SyntheticDataset S;
  S.instances = store.payload;
  try {
    S.classes = manifest.at("classes").get<Index>();
    S.ipc = manifest.at("ipc").get<Index>();
    S.K = manifest.at("K").get<Index>();
    S.labels = manifest.at("labels").get<std::vector<int32_t>>();
    S.subset_of = manifest.at("subset_of").get<std::vector<Index>>();
    std::vector<int> fr = manifest.at("frozen").get<std::vector<int>>();
    S.frozen.assign(fr.begin(), fr.end());
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path + ".json: " + e.what());
  }
  S.validate();
  return S;
}

}  // namespace sqd
