#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqd/models.hpp"
#include "sqd/teacher.hpp"

namespace sqd {

/// Learnable instances with fixed class-balanced labels, laid out class-major
/// (ipc rows per class). `subset_of` assigns stage ids 0..K-1; `frozen` marks
/// rows no optimizer step may touch.
struct SyntheticDataset {
  Tensor instances;               // [ipc*classes, instance dims]
  std::vector<int32_t> labels;
  Index classes = 0;
  Index ipc = 0;
  Index K = 1;
  std::vector<Index> subset_of;
  std::vector<bool> frozen;

  Index count() const { return instances.defined() ? instances.dim(0) : 0; }
  void validate() const;
  std::vector<Index> rows_in_subset(Index k) const;       // 0-based subset id
  std::vector<Index> rows_in_subsets_upto(Index k) const; // ids 0..k inclusive
  LabeledDataset view(const std::vector<Index>& rows) const;
  LabeledDataset as_dataset() const;
};

/// Instances sampled per class from the real train split (without
/// replacement), labels class-major, one subset, nothing frozen.
SyntheticDataset init_synthetic(const LabeledDataset& train, Index ipc, uint64_t seed);

/// Column-wise cosine distance: sum over columns of 1 - <X_i,Y_i>/(|X_i||Y_i|),
/// with 1e-12 added to each norm product so dead columns stay finite.
double cosine_distance(const Tensor& X, const Tensor& Y);
Var cosine_distance(const Var& X, const Var& Y);

// A parameter gradient reshaped for the column-wise metric: matrices stay
// as-is (columns per output unit), conv kernels become [ic*kh*kw, oc],
// vectors become a single column.
Tensor grad_matrix(const Tensor& g);
Var grad_matrix(const Var& g);

/// Sum over parameters of cosine_distance between the gradient of the
/// sum-reduced loss on `instances` at `theta` and the target gradient.
/// Differentiable with respect to `instances` (second order inside).
Var matching_loss(const Architecture& arch, const Var& instances,
                  const std::vector<int32_t>& labels, const ParamSet& theta,
                  const ParamSet& g_target);

/// d matching_loss / d instances, with frozen rows exactly zero.
Tensor synthetic_grad(const Architecture& arch, const Tensor& instances,
                      const std::vector<int32_t>& labels, const std::vector<bool>& frozen,
                      const ParamSet& theta, const ParamSet& g_target);

enum class MatchMode { TeacherPath, StudentPath };

struct BackboneConfig {
  MatchMode mode = MatchMode::StudentPath;
  double pixel_lr = 0.1;
  double pixel_momentum = 0.5;
  Index target_batch = 256;   // real-data batch for the matched gradient
  Index inner_steps = 1;      // student-path: alg iterations per matching step
  Index inner_batch = 0;      // student-path alg batch (0 = full union)
  double inner_lr = 0.01;     // student-path alg step size
};

/// Working state for one stage: the network the matching loss is evaluated
/// at, the pixel-momentum buffer over the stage's rows, and counters that key
/// every stochastic draw.
struct MatchState {
  ParamSet theta;
  size_t traj_id = 0;       // teacher-path: trajectory currently replayed
  Index iteration = 0;      // matching steps taken within the stage
  uint64_t stream_seed = 0; // fan-out root for this stage's draws
  Tensor velocity;          // [update rows, instance dims]
};

/// One backbone update of the rows in `update_rows` (must all belong to one
/// subset). Teacher-path: theta := checkpoint m of the current trajectory and
/// the target is the teacher gradient there. Student-path: theta advances by
/// `alg` on the union view and the target is a fresh real-batch gradient.
/// Returns the matching-loss value before the pixel step.
double backbone_step(const Architecture& arch, SyntheticDataset& S,
                     const std::vector<Index>& view_rows,
                     const std::vector<Index>& update_rows, MatchState& state,
                     const TrajectoryPool& pool, const LabeledDataset& train, Index m,
                     const BackboneConfig& cfg);

void save_synthetic(const std::string& path, const SyntheticDataset& S,
                    const nlohmann::json& extra_manifest);
SyntheticDataset load_synthetic(const std::string& path);

}  // namespace sqd
