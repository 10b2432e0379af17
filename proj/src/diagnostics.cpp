#include "sqd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sqd/store.hpp"

namespace sqd {

namespace {

Shape with_batch(const Shape& s) {
  Shape out{1};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

Tensor mixed_jacobian(const ParamSet& theta, const Tensor& instance,
                      const std::function<Var(const std::vector<Var>&, const Var&)>& loss_fn) {
  if (!instance.defined() || instance.size() < 1)
    throw ShapeError("mixed_jacobian: undefined or empty instance");
  Index d = instance.size();
  Index P = theta.total_size();
  Var x = Var::leaf(instance);
  std::vector<Var> tv = theta.leaves();
  Var L = loss_fn(tv, x);
  if (L.value().rank() != 0) throw ShapeError("mixed_jacobian: loss must be rank-0");

  // Assembled from whichever side needs fewer second passes: d columns or
  // P rows.
  std::vector<double> J(size_t(P * d), 0.0);
  if (d <= P) {
    Var u = reshape(grad(L, {x}, true)[0], {d});
    for (Index j = 0; j < d; ++j) {
      std::vector<Var> col = grad(take(u, j), tv);
      Index p = 0;
      for (const Var& c : col) {
        const Tensor& t = c.value();
        for (Index e = 0; e < t.size(); ++e) J[size_t((p + e) * d + j)] = t.data()[e];
        p += t.size();
      }
    }
  } else {
    std::vector<Var> gt = grad(L, tv, true);
    Index p = 0;
    for (const Var& layer : gt) {
      Var flat = reshape(layer, {layer.value().size()});
      for (Index e = 0; e < flat.value().size(); ++e, ++p) {
        Tensor row = grad(take(flat, e), {x})[0].value();
        std::copy(row.data(), row.data() + d, J.begin() + p * d);
      }
    }
  }
  return Tensor::wrap({P, d}, std::move(J));
}

Tensor amplification_jacobian(const Architecture& arch, const Tensor& instance, int32_t label,
                              const ParamSet& theta) {
  arch.validate();
  if (instance.shape() != arch.input_shape)
    throw ShapeError("amplification: instance shape " + shape_str(instance.shape()) +
                     " does not match architecture input " + shape_str(arch.input_shape));
  if (!init_params(arch, InitSpec{0}).same_layout(theta))
    throw ShapeError("amplification: parameter layout does not match the architecture");
  auto loss_fn = [&](const std::vector<Var>& tv, const Var& x) {
    return loss(arch, tv, reshape(x, with_batch(instance.shape())), {label}, Reduction::Sum);
  };
  return mixed_jacobian(theta, instance, loss_fn);
}

double amplification_norm(const Architecture& arch, const Tensor& instance, int32_t label,
                          const ParamSet& theta) {
  Tensor J = amplification_jacobian(arch, instance, label, theta);
  double total = 0.0;
  for (Index i = 0; i < J.size(); ++i) total += std::abs(J.data()[i]);
  return total;
}

double amplification_norm_avg(const Architecture& arch, const Tensor& instance, int32_t label,
                              uint64_t seed, Index draws) {
  if (draws < 1) throw ConfigError("diagnose.draws", "needs draws >= 1");
  double total = 0.0;
  for (Index i = 0; i < draws; ++i) {
    ParamSet theta = init_params(arch, InitSpec{seed_derive(seed, "amp-theta", uint64_t(i))});
    total += amplification_norm(arch, instance, label, theta);
  }
  return total / double(draws);
}

namespace {

// Per-row norms under a shared set of parameter draws, so rows compare
// against identical networks.
std::vector<double> amp_norms(const SyntheticDataset& S, const Architecture& arch, uint64_t seed,
                              Index draws) {
  if (draws < 1) throw ConfigError("diagnose.draws", "needs draws >= 1");
  std::vector<ParamSet> thetas;
  for (Index i = 0; i < draws; ++i)
    thetas.push_back(init_params(arch, InitSpec{seed_derive(seed, "amp-theta", uint64_t(i))}));
  Shape inst_shape(S.instances.shape().begin() + 1, S.instances.shape().end());
  std::vector<double> norms(size_t(S.count()), 0.0);
  for (Index r = 0; r < S.count(); ++r) {
    Tensor inst = reshape(gather_rows(S.instances, {r}), inst_shape);
    double total = 0.0;
    for (const ParamSet& th : thetas)
      total += amplification_norm(arch, inst, S.labels[size_t(r)], th);
    norms[size_t(r)] = total / double(draws);
  }
  return norms;
}

std::vector<Index> order_by_norm_desc(const std::vector<double>& norms) {
  std::vector<Index> order(norms.size());
  std::iota(order.begin(), order.end(), Index(0));
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (norms[size_t(a)] != norms[size_t(b)]) return norms[size_t(a)] > norms[size_t(b)];
    return a < b;
  });
  return order;
}

}  // namespace

AmpSplit split_by_amplification(const SyntheticDataset& S, const Architecture& arch,
                                uint64_t seed, Index draws) {
  S.validate();
  if (S.count() < 2) throw ShapeError("split_by_amplification: needs at least 2 instances");
  AmpSplit out;
  out.norms = amp_norms(S, arch, seed, draws);
  std::vector<Index> order = order_by_norm_desc(out.norms);
  size_t h = order.size() / 2;
  out.plus.assign(order.begin(), order.begin() + h);
  out.minus.assign(order.end() - h, order.end());  // odd count drops the median row
  return out;
}

CouplingReport coupling_experiment(const SyntheticDataset& S, const Architecture& arch,
                                   const LabeledDataset& train, const LabeledDataset& test,
                                   const EvalConfig& eval_cfg,
                                   const std::vector<double>& fractions, uint64_t seed,
                                   Index draws) {
  S.validate();
  train.validate();
  test.validate();
  if (fractions.empty()) throw ConfigError("diagnose.fractions", "needs at least one split");
  if (eval_cfg.seeds < 1 || eval_cfg.iterations < 1)
    throw ConfigError("eval", "seeds and iterations must be >= 1");

  CouplingReport report;
  report.norms = amp_norms(S, arch, seed, draws);
  std::vector<Index> order = order_by_norm_desc(report.norms);
  Index n = S.count();

  auto train_acc = [&](const std::vector<Index>& rows, uint64_t init_seed, uint64_t batch_seed) {
    TrainConfig tc;
    tc.lr = eval_cfg.lr;
    tc.momentum = eval_cfg.momentum;
    tc.batch = eval_cfg.batch;
    tc.iters = eval_cfg.iterations;
    tc.seed = batch_seed;
    ParamSet theta = alg(S.view(rows), arch, init_params(arch, InitSpec{init_seed}), tc).params;
    return accuracy(arch, theta, test) * 100.0;
  };

  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    double p = fractions[fi];
    if (!(p > 0.0) || p > 0.5)
      throw ConfigError("diagnose.fractions", "split fractions must lie in (0, 0.5]");
    Index m = std::max<Index>(1, Index(std::floor(p * double(n))));
    std::vector<Index> plus(order.begin(), order.begin() + m);
    std::vector<Index> minus(order.end() - m, order.end());

    CouplingSplit split;
    split.fraction = p;
    double np = 0.0, nm = 0.0;
    for (Index r : plus) np += report.norms[size_t(r)];
    for (Index r : minus) nm += report.norms[size_t(r)];
    split.norm_diff = (np - nm) / double(m);

    // Paired inits: seed s trains one net on each side from the same draw.
    for (Index s = 0; s < eval_cfg.seeds; ++s) {
      uint64_t tag = uint64_t(fi) * 1024 + uint64_t(s);
      uint64_t init_seed = seed_derive(seed, "couple-init", tag);
      uint64_t batch_seed = seed_derive(seed, "couple-batch", tag);
      split.acc_plus.push_back(train_acc(plus, init_seed, batch_seed));
      split.acc_minus.push_back(train_acc(minus, init_seed, batch_seed));
    }
    double dm = 0.0;
    for (Index s = 0; s < eval_cfg.seeds; ++s)
      dm += split.acc_plus[size_t(s)] - split.acc_minus[size_t(s)];
    split.disc_mean = dm / double(eval_cfg.seeds);
    double dv = 0.0;
    for (Index s = 0; s < eval_cfg.seeds; ++s) {
      double d = split.acc_plus[size_t(s)] - split.acc_minus[size_t(s)] - split.disc_mean;
      dv += d * d;
    }
    split.disc_std = std::sqrt(dv / double(eval_cfg.seeds));

    ParamSet theta_e = init_params(arch, InitSpec{seed_derive(seed, "couple-eps", uint64_t(fi))});
    Tensor gm = loss_gradient(arch, theta_e, train).flatten();
    Tensor gp = loss_gradient(arch, theta_e, S.view(plus)).flatten();
    double e2 = 0.0;
    for (Index i = 0; i < gm.size(); ++i) {
      double d = gm.data()[i] - gp.data()[i];
      e2 += d * d;
    }
    split.eps_norm = std::sqrt(e2);

    report.splits.push_back(std::move(split));
  }

  std::vector<double> nd, dm;
  for (const CouplingSplit& sp : report.splits) {
    nd.push_back(sp.norm_diff);
    dm.push_back(sp.disc_mean);
  }
  report.spearman = report.splits.size() > 1 ? spearman_rho(nd, dm) : 0.0;
  return report;
}

Tensor track_instance_losses(const SyntheticDataset& S, const LabeledDataset& track,
                             const Architecture& arch, Index epochs, uint64_t seed, double lr) {
  S.validate();
  track.validate();
  if (epochs < 1) throw ConfigError("diagnose.epochs", "needs epochs >= 1");

  Index n = track.count();
  std::vector<double> out(size_t(n * epochs), 0.0);
  auto record = [&](const ParamSet& theta, Index col) {
    Tensor losses = per_instance_losses(arch, theta, track);
    for (Index r = 0; r < n; ++r) out[size_t(r * epochs + col)] = losses.data()[r];
  };

  ParamSet theta = init_params(arch, InitSpec{seed_derive(seed, "track-init")});
  record(theta, 0);

  Index total = 20 * (epochs - 1);
  if (total > 0) {
    std::vector<Index> budget = stage_budgets(S, total);
    Index done = 0;
    uint64_t giter = 0;
    for (Index k = 0; k < S.K; ++k) {
      if (budget[size_t(k)] == 0) continue;
      TrainConfig tc;
      tc.lr = lr;
      tc.batch = 0;
      tc.iters = budget[size_t(k)];
      tc.seed = seed_derive(seed, "track-batch");
      tc.iter0 = giter;
      LabeledDataset stage = S.view(S.rows_in_subset(k));
      theta = alg(stage, arch, theta, tc,
                  [&](Index, const ParamSet& p, double) {
                    ++done;
                    if (done % 20 == 0) record(p, done / 20);
                  })
                  .params;
      giter += uint64_t(budget[size_t(k)]);
    }
  }
  return Tensor::wrap({n, epochs}, std::move(out));
}

EasyHardClusters cluster_easy_hard(const Tensor& matrix) {
  if (!matrix.defined() || matrix.rank() != 2)
    throw ShapeError("cluster_easy_hard: needs a rank-2 loss matrix");
  Index n = matrix.dim(0), e = matrix.dim(1);
  if (n < 2) throw ShapeError("cluster_easy_hard: needs >= 2 rows");
  const double* M = matrix.data();

  EasyHardClusters out;
  bool identical = true;
  for (Index r = 1; r < n && identical; ++r)
    for (Index j = 0; j < e; ++j)
      if (M[r * e + j] != M[j]) {
        identical = false;
        break;
      }
  if (identical) {
    out.degenerate = true;
    out.easy.resize(size_t(n));
    std::iota(out.easy.begin(), out.easy.end(), Index(0));
    out.easy_fraction = 1.0;
    return out;
  }

  auto row_mean = [&](Index r) {
    double s = 0.0;
    for (Index j = 0; j < e; ++j) s += M[r * e + j];
    return s / double(e);
  };
  auto row_dist2 = [&](Index r, const std::vector<double>& c) {
    double s = 0.0;
    for (Index j = 0; j < e; ++j) {
      double d = M[r * e + j] - c[size_t(j)];
      s += d * d;
    }
    return s;
  };

  Index lo = 0, hi = 0;
  for (Index r = 1; r < n; ++r) {
    if (row_mean(r) < row_mean(lo)) lo = r;
    if (row_mean(r) > row_mean(hi)) hi = r;
  }
  std::vector<double> c0(M + lo * e, M + (lo + 1) * e);
  if (lo == hi) {
    // Every mean equal but rows differ: seed the second centroid with the
    // row farthest from the first.
    double best = -1.0;
    for (Index r = 0; r < n; ++r) {
      double d = row_dist2(r, c0);
      if (d > best) {
        best = d;
        hi = r;
      }
    }
  }
  std::vector<double> c1(M + hi * e, M + (hi + 1) * e);

  std::vector<int> assign(size_t(n), -1);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (Index r = 0; r < n; ++r) {
      int a = row_dist2(r, c0) <= row_dist2(r, c1) ? 0 : 1;
      if (a != assign[size_t(r)]) {
        assign[size_t(r)] = a;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> s0(size_t(e), 0.0), s1(size_t(e), 0.0);
    Index n0 = 0, n1 = 0;
    for (Index r = 0; r < n; ++r) {
      std::vector<double>& s = assign[size_t(r)] == 0 ? s0 : s1;
      (assign[size_t(r)] == 0 ? n0 : n1) += 1;
      for (Index j = 0; j < e; ++j) s[size_t(j)] += M[r * e + j];
    }
    if (n0 == 0 || n1 == 0) break;
    for (Index j = 0; j < e; ++j) {
      c0[size_t(j)] = s0[size_t(j)] / double(n0);
      c1[size_t(j)] = s1[size_t(j)] / double(n1);
    }
  }

  std::vector<Index> g0, g1;
  for (Index r = 0; r < n; ++r) (assign[size_t(r)] == 0 ? g0 : g1).push_back(r);
  if (g0.empty() || g1.empty()) {
    out.degenerate = true;
    out.easy = g0.empty() ? g1 : g0;
    out.easy_fraction = 1.0;
    return out;
  }

  auto group_mean = [&](const std::vector<Index>& g) {
    double s = 0.0;
    for (Index r : g)
      for (Index j = 0; j < e; ++j) s += M[r * e + j];
    return s / double(Index(g.size()) * e);
  };
  bool zero_is_easy = group_mean(g0) <= group_mean(g1);
  out.easy = zero_is_easy ? g0 : g1;
  out.hard = zero_is_easy ? g1 : g0;
  out.easy_fraction = double(out.easy.size()) / double(n);
  out.hard_fraction = double(out.hard.size()) / double(n);

  auto centroid = [&](const std::vector<Index>& g) {
    std::vector<double> c(size_t(e), 0.0);
    for (Index r : g)
      for (Index j = 0; j < e; ++j) c[size_t(j)] += M[r * e + j];
    for (double& v : c) v /= double(g.size());
    return c;
  };
  std::vector<double> ce = centroid(out.easy), ch = centroid(out.hard);
  for (Index r : out.easy) out.within_var += row_dist2(r, ce);
  for (Index r : out.hard) out.within_var += row_dist2(r, ch);
  return out;
}

GroupCurves loss_drop_summary(const Tensor& matrix, const std::vector<Index>& easy,
                              const std::vector<Index>& hard) {
  if (!matrix.defined() || matrix.rank() != 2)
    throw ShapeError("loss_drop_summary: needs a rank-2 loss matrix");
  Index n = matrix.dim(0), e = matrix.dim(1);
  std::vector<bool> seen(size_t(n), false);
  auto mark = [&](const std::vector<Index>& g) {
    for (Index r : g) {
      if (r < 0 || r >= n || seen[size_t(r)])
        throw ShapeError("loss_drop_summary: groups must partition the rows");
      seen[size_t(r)] = true;
    }
  };
  mark(easy);
  mark(hard);
  for (bool b : seen)
    if (!b) throw ShapeError("loss_drop_summary: groups must partition the rows");

  auto curve = [&](const std::vector<Index>& g) {
    std::vector<double> c(size_t(e), 0.0);
    if (g.empty()) return c;
    for (Index r : g)
      for (Index j = 0; j < e; ++j) c[size_t(j)] += matrix.data()[r * e + j];
    for (double& v : c) v /= double(g.size());
    return c;
  };
  return {curve(easy), curve(hard)};
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double r = 0.5 * double(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ShapeError("spearman_rho: needs two equal-length series with >= 2 points");
  std::vector<double> ra = ranks_of(a), rb = ranks_of(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(ra.size());
  mb /= double(rb.size());
  double cab = 0.0, caa = 0.0, cbb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    double da = ra[i] - ma, db = rb[i] - mb;
    cab += da * db;
    caa += da * da;
    cbb += db * db;
  }
  if (caa == 0.0 || cbb == 0.0) return 0.0;
  return cab / std::sqrt(caa * cbb);
}

void export_loss_matrix_csv(const std::string& path, const Tensor& matrix) {
  if (!matrix.defined() || matrix.rank() != 2)
    throw ShapeError("export_loss_matrix_csv: needs a rank-2 matrix");
  std::vector<std::vector<double>> rows;
  for (Index r = 0; r < matrix.dim(0); ++r)
    for (Index j = 0; j < matrix.dim(1); ++j)
      rows.push_back({double(r), double(j), matrix.data()[r * matrix.dim(1) + j]});
  write_csv(path, {"instance_id", "epoch", "loss"}, rows);
}

void export_group_curves_csv(const std::string& path, const GroupCurves& curves) {
  if (curves.easy_mean.size() != curves.hard_mean.size())
    throw ShapeError("export_group_curves_csv: curve lengths differ");
  std::vector<std::vector<double>> rows;
  for (size_t j = 0; j < curves.easy_mean.size(); ++j)
    rows.push_back({double(j), curves.easy_mean[j], curves.hard_mean[j]});
  write_csv(path, {"epoch", "easy_mean", "hard_mean"}, rows);
}

void export_coupling_csv(const std::string& path, const CouplingReport& report) {
  std::vector<std::vector<double>> rows;
  for (size_t i = 0; i < report.splits.size(); ++i) {
    const CouplingSplit& sp = report.splits[i];
    rows.push_back({double(i), sp.norm_diff, sp.disc_mean, sp.disc_std});
  }
  write_csv(path, {"split_id", "norm_diff", "discrepancy_mean", "discrepancy_std"}, rows);
}

}  // namespace sqd
