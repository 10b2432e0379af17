#include "sqd/seqmatch.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace sqd {

void SeqSchedule::validate() const {
  if (K < 1) throw ConfigError("seqmatch.K", "needs K >= 1");
  if (Index(segments.size()) != K) throw ShapeError("schedule: segment count != K");
  Index expect_lo = 0;
  for (Index k = 0; k < K; ++k) {
    auto [lo, hi] = segments[size_t(k)];
    if (lo != expect_lo) throw ShapeError("schedule: segments not contiguous");
    if (lo >= hi) throw ShapeError("schedule: empty segment at stage " + std::to_string(k + 1));
    if (hi > M) throw ShapeError("schedule: segment beyond trajectory end");
    expect_lo = hi;
  }
  if (iters_per_restart < 1 || restarts < 1)
    throw ConfigError("seqmatch", "iterations and restarts must be >= 1");
}

SeqSchedule build_schedule(Index M, Index K, Index iters_per_restart, Index restarts) {
  if (K < 1) throw ConfigError("seqmatch.K", "needs K >= 1");
  if (M < K)
    throw ConfigError("teacher.steps",
                      "M = " + std::to_string(M) + " below K = " + std::to_string(K));
  SeqSchedule s;
  s.K = K;
  s.M = M;
  s.n = Index(std::floor(double(M) / double(K) + 0.5));
  s.iters_per_restart = iters_per_restart;
  s.restarts = restarts;
  for (Index k = 1; k <= K; ++k) {
    Index lo = (k - 1) * s.n;
    Index hi = k == K ? std::min(k * s.n, M) : k * s.n;
    if (lo >= hi)
      throw ConfigError("seqmatch.K",
                        "rounding leaves stage " + std::to_string(k) + " without a segment; "
                        "reduce K or increase M");
    s.segments.emplace_back(lo, hi);
  }
  s.validate();
  return s;
}

void partition(SyntheticDataset& S, Index K, uint64_t /*seed*/) {
  S.validate();
  if (K < 1) throw ConfigError("seqmatch.K", "needs K >= 1");
  if (K > S.count()) throw ConfigError("seqmatch.K", "K exceeds |S|");
  if (K > S.ipc)
    throw ConfigError("seqmatch.K",
                      "K = " + std::to_string(K) + " exceeds ipc = " + std::to_string(S.ipc) +
                          "; every subset needs an instance per class");
  S.K = K;
  Index base = S.ipc / K, rem = S.ipc % K;
  for (Index c = 0; c < S.classes; ++c) {
    std::vector<Index> rows = S.as_dataset().rows_of_class(int32_t(c));
    size_t off = 0;
    for (Index k = 0; k < K; ++k) {
      Index take = base + (k < rem ? 1 : 0);
      for (Index i = 0; i < take; ++i) S.subset_of[size_t(rows[off++])] = k;
    }
  }
  S.frozen.assign(size_t(S.count()), false);
  S.validate();
}

void StagePool::push(ParamSet p) {
  items_.push_back(std::move(p));
  if (items_.size() > capacity_) items_.erase(items_.begin());
}

const ParamSet& StagePool::sample(CounterRng& rng) const {
  if (items_.empty()) throw ShapeError("stage pool: empty before a stage >= 2");
  return items_[size_t(rng.uniform_index(items_.size()))];
}

SyntheticDataset seqmatch_distill(const DatasetSplit& data, const Architecture& arch,
                                  const TrajectoryPool& pool, SyntheticDataset S,
                                  const SeqSchedule& schedule, const DistillOptions& opts) {
  schedule.validate();
  S.validate();
  if (S.K != schedule.K)
    throw ShapeError("distill: synthetic set has K = " + std::to_string(S.K) +
                     ", schedule has K = " + std::to_string(schedule.K));
  if (opts.backbone.mode == MatchMode::TeacherPath) {
    pool.validate();
    if (pool.steps() < schedule.segments.back().second)
      throw ShapeError("distill: trajectories stop at step " + std::to_string(pool.steps()) +
                       ", schedule needs " + std::to_string(schedule.segments.back().second));
  }

  StagePool stage_pool(4);
  for (Index k0 = 0; k0 < schedule.K; ++k0) {
    auto [lo, hi] = schedule.segments[size_t(k0)];
    Index seg_len = hi - lo;
    for (Index i = 0; i < S.count(); ++i) S.frozen[size_t(i)] = S.subset_of[size_t(i)] < k0;
    std::vector<Index> view_rows = S.rows_in_subsets_upto(k0);
    std::vector<Index> update_rows = S.rows_in_subset(k0);

    uint64_t stage_seed = seed_derive(opts.seed, "stage", uint64_t(k0));
    StagePool next_pool(4);
    MatchState state;
    for (Index r = 0; r < schedule.restarts; ++r) {
      uint64_t rseed = seed_derive(stage_seed, "restart", uint64_t(r));
      state.stream_seed = rseed;
      state.iteration = 0;
      if (k0 == 0) {
        state.theta = init_params(arch, InitSpec{seed_derive(rseed, "theta0")});
      } else {
        CounterRng load_rng(rseed, "load");
        state.theta = stage_pool.sample(load_rng);
      }

      CounterRng traj_rng(rseed, "traj");
      for (Index i = 0; i < schedule.iters_per_restart; ++i) {
        Index m = 0;
        if (opts.backbone.mode == MatchMode::TeacherPath) {
          Index pos = i % seg_len;
          if (pos == 0) state.traj_id = sample_segment(pool, lo, hi, traj_rng).traj;
          m = lo + pos;
        }
        double mloss = backbone_step(arch, S, view_rows, update_rows, state, pool, data.train,
                                     m, opts.backbone);
        if (opts.progress && (i % opts.progress_every == 0 || i + 1 == schedule.iters_per_restart)) {
          nlohmann::json line = {{"stage", k0 + 1},
                                 {"restart", r},
                                 {"iteration", i},
                                 {"matching_loss", mloss}};
          *opts.progress << line.dump() << "\n";
        }
      }
      next_pool.push(state.theta);
    }
    stage_pool = std::move(next_pool);
    if (opts.progress) {
      nlohmann::json line = {{"stage", k0 + 1}, {"event", "stage_end"}};
      *opts.progress << line.dump() << "\n";
    }
    if (opts.after_stage) opts.after_stage(k0, S);
  }

  S.frozen.assign(size_t(S.count()), false);
  return S;
}

SyntheticDataset backbone_distill(const DatasetSplit& data, const Architecture& arch,
                                  const TrajectoryPool& pool, SyntheticDataset S, Index M,
                                  Index iters_per_restart, Index restarts,
                                  const DistillOptions& opts) {
  S.validate();
  if (S.K != 1) throw ShapeError("backbone_distill: needs an unpartitioned set (K = 1)");
  if (M < 1) throw ConfigError("teacher.steps", "needs M >= 1");
  if (iters_per_restart < 1 || restarts < 1)
    throw ConfigError("distill", "iterations and restarts must be >= 1");
  if (opts.backbone.mode == MatchMode::TeacherPath) {
    pool.validate();
    if (pool.steps() < M)
      throw ShapeError("backbone_distill: trajectories stop at step " +
                       std::to_string(pool.steps()) + ", need " + std::to_string(M));
  }

  std::vector<Index> rows = S.rows_in_subset(0);
  uint64_t stage_seed = seed_derive(opts.seed, "stage", 0);
  MatchState state;
  for (Index r = 0; r < restarts; ++r) {
    uint64_t rseed = seed_derive(stage_seed, "restart", uint64_t(r));
    state.stream_seed = rseed;
    state.iteration = 0;
    state.theta = init_params(arch, InitSpec{seed_derive(rseed, "theta0")});
    CounterRng traj_rng(rseed, "traj");
    for (Index i = 0; i < iters_per_restart; ++i) {
      Index m = 0;
      if (opts.backbone.mode == MatchMode::TeacherPath) {
        Index pos = i % M;
        if (pos == 0) state.traj_id = sample_segment(pool, 0, M, traj_rng).traj;
        m = pos;
      }
      double mloss = backbone_step(arch, S, rows, rows, state, pool, data.train, m,
                                   opts.backbone);
      if (opts.progress && (i % opts.progress_every == 0 || i + 1 == iters_per_restart)) {
        nlohmann::json line = {
            {"stage", 1}, {"restart", r}, {"iteration", i}, {"matching_loss", mloss}};
        *opts.progress << line.dump() << "\n";
      }
    }
  }
  if (opts.progress) {
    nlohmann::json line = {{"stage", 1}, {"event", "stage_end"}};
    *opts.progress << line.dump() << "\n";
  }
  if (opts.after_stage) opts.after_stage(0, S);
  return S;
}

std::vector<Index> stage_budgets(const SyntheticDataset& S, Index total_iters) {
  if (total_iters < S.K) throw ConfigError("eval.iterations", "budget below stage count");
  std::vector<Index> budget(size_t(S.K), 0);
  Index assigned = 0;
  for (Index k = 0; k < S.K; ++k) {
    Index nk = Index(S.rows_in_subset(k).size());
    budget[size_t(k)] = total_iters * nk / S.count();
    assigned += budget[size_t(k)];
  }
  for (Index k = 0; assigned < total_iters; k = (k + 1) % S.K, ++assigned)
    ++budget[size_t(k)];
  return budget;
}

EvalResult eval_staged(const SyntheticDataset& S, const Architecture& arch,
                       const LabeledDataset& test, const EvalConfig& cfg) {
  S.validate();
  if (cfg.seeds < 1 || cfg.iterations < 1)
    throw ConfigError("eval", "seeds and iterations must be >= 1");
  std::vector<Index> budget = stage_budgets(S, cfg.iterations);

  EvalResult res;
  for (Index s = 0; s < cfg.seeds; ++s) {
    ParamSet theta = init_params(arch, InitSpec{seed_derive(cfg.seed, "eval-init", uint64_t(s))});
    uint64_t giter = 0;
    for (Index k = 0; k < S.K; ++k) {
      if (budget[size_t(k)] == 0) continue;
      TrainConfig tc;
      tc.lr = cfg.lr;
      tc.momentum = cfg.momentum;
      tc.batch = cfg.batch;
      tc.iters = budget[size_t(k)];
      tc.seed = seed_derive(cfg.seed, "eval-batch", uint64_t(s));
      tc.iter0 = giter;
      theta = alg(S.view(S.rows_in_subset(k)), arch, theta, tc).params;
      giter += uint64_t(budget[size_t(k)]);
    }
    res.per_seed.push_back(accuracy(arch, theta, test) * 100.0);
  }

  double sum = 0.0;
  for (double a : res.per_seed) sum += a;
  res.mean = sum / double(res.per_seed.size());
  double var = 0.0;
  for (double a : res.per_seed) var += (a - res.mean) * (a - res.mean);
  res.stddev = std::sqrt(var / double(res.per_seed.size()));
  return res;
}

std::string EvalResult::format() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << mean << " ± " << stddev;
  return os.str();
}

}  // namespace sqd
