#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqd/data.hpp"
#include "sqd/models.hpp"
#include "sqd/rng.hpp"

namespace sqd {

/// Checkpoints theta_0..theta_M from one training run on the real dataset;
/// the replayable stand-in for the gradient sequence g_1..g_M.
struct TeacherTrajectory {
  Architecture arch;
  uint64_t seed = 0;           // init and batch-order root
  Index stride = 1;            // iterations between recorded checkpoints
  std::vector<ParamSet> checkpoints;
  std::vector<double> train_losses;  // full-train mean loss per checkpoint
  double final_test_accuracy = 0.0;
  TrainConfig replay_cfg;      // lr/momentum/batch used, for bitwise replay

  Index steps() const { return Index(checkpoints.size()) - 1; }  // M
  void validate() const;
};

struct TrajectoryPool {
  std::vector<TeacherTrajectory> trajectories;
  void validate() const;  // nonempty, matching arch and M
  Index steps() const { return trajectories.at(0).steps(); }
};

/// Trains from a fresh fan-in init (derived from cfg.seed) and records a
/// checkpoint every `stride` iterations, M of them after theta_0.
/// cfg.iters of 0 means exactly M*stride; anything smaller is an error.
TeacherTrajectory train_teacher(const DatasetSplit& split, const Architecture& arch,
                                const TrainConfig& cfg, Index M, Index stride);

struct BatchSpec {
  Index size = 0;       // 0 = full dataset
  uint64_t seed = 0;
  uint64_t counter = 0; // draw index into the batch stream
};

/// Mean-loss gradient on a real-data batch at checkpoint m (0 <= m < M).
ParamSet teacher_gradient(const TeacherTrajectory& traj, Index m, const LabeledDataset& train,
                          const BatchSpec& spec);

struct SegmentView {
  size_t traj = 0;
  Index lo = 0;
  Index hi = 0;  // matching steps half-open in [lo, hi)
};

// Uniform trajectory draw; the view never touches checkpoints outside [lo, hi].
SegmentView sample_segment(const TrajectoryPool& pool, Index lo, Index hi, CounterRng& rng);

void save_trajectory(const std::string& path, const TeacherTrajectory& traj);
TeacherTrajectory load_trajectory(const std::string& path);

}  // namespace sqd
