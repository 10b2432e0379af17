#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "sqd/matchcore.hpp"

namespace sqd {

/// Stage plan: K ordered subsets, each matched against one trajectory
/// segment of length n = nint(M/K), with the final segment clamped to M.
struct SeqSchedule {
  Index K = 1;
  Index M = 0;
  Index n = 0;
  std::vector<std::pair<Index, Index>> segments;  // [lo, hi) per stage
  Index iters_per_restart = 0;                    // N
  Index restarts = 1;                             // R

  void validate() const;
};

SeqSchedule build_schedule(Index M, Index K, Index iters_per_restart, Index restarts);

/// Tags each row with its stage: per-class contiguous runs, earlier subsets
/// absorbing the remainder when K does not divide ipc. The seed is accepted
/// for interface stability but the rule is deterministic.
void partition(SyntheticDataset& S, Index K, uint64_t seed);

/// Stage-final network weights from the previous stage's restarts; stage
/// k >= 2 draws its starting weights here instead of a fresh init.
class StagePool {
 public:
  explicit StagePool(size_t capacity = 4) : capacity_(capacity) {}
  void push(ParamSet p);
  const ParamSet& sample(CounterRng& rng) const;
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

 private:
  size_t capacity_;
  std::vector<ParamSet> items_;
};

struct DistillOptions {
  BackboneConfig backbone;
  uint64_t seed = 0;
  std::ostream* progress = nullptr;     // JSON lines
  Index progress_every = 10;
  // Called after each stage with the 0-based stage id, e.g. to hash frozen rows.
  std::function<void(Index, const SyntheticDataset&)> after_stage;
};

/// Algorithm: for each stage k, repeat R restarts of N backbone steps, the
/// network starting from a fresh draw (k = 1) or the previous stage's pool
/// (k >= 2); stage-final weights feed the next stage; finished subsets
/// freeze. Returns the optimized synthetic set.
SyntheticDataset seqmatch_distill(const DatasetSplit& data, const Architecture& arch,
                                  const TrajectoryPool& pool, SyntheticDataset S,
                                  const SeqSchedule& schedule, const DistillOptions& opts);

/// Plain distillation: R restarts of N backbone steps over the whole
/// unpartitioned set (S.K must be 1), fresh network per restart, teacher-path
/// steps cycling through [0, M). Consumes the same derived seed stream as the
/// one-stage schedule, so seqmatch with K = 1 reproduces it bitwise.
SyntheticDataset backbone_distill(const DatasetSplit& data, const Architecture& arch,
                                  const TrajectoryPool& pool, SyntheticDataset S, Index M,
                                  Index iters_per_restart, Index restarts,
                                  const DistillOptions& opts);

struct EvalConfig {
  Index seeds = 5;
  Index iterations = 1000;
  double lr = 0.05;
  double momentum = 0.0;
  Index batch = 0;       // 0 = full synthetic set per step
  uint64_t seed = 0;
};

struct EvalResult {
  double mean = 0.0;    // percent
  double stddev = 0.0;  // percent
  std::vector<double> per_seed;

  std::string format() const;  // "74.4 ± 0.5"
};

/// Evaluation protocol: per seed, train a fresh network on S_1..S_K in stage
/// order, splitting the iteration budget proportionally to subset sizes
/// (earlier stages take the remainder), then report test accuracy over seeds.
EvalResult eval_staged(const SyntheticDataset& S, const Architecture& arch,
                       const LabeledDataset& test, const EvalConfig& cfg);

// The per-stage iteration budget split used by eval_staged.
std::vector<Index> stage_budgets(const SyntheticDataset& S, Index total_iters);

}  // namespace sqd
