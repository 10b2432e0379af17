#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sqd/matchcore.hpp"
#include "sqd/seqmatch.hpp"

namespace sqd {

/// Jacobian of the parameter gradient of a scalar loss with respect to the
/// input, [P, d]. `loss_fn` sees the parameter leaves (theta order) and an
/// input leaf shaped like `instance`. Built from min(d, P) second-order
/// passes, one per input coordinate or per parameter coordinate.
Tensor mixed_jacobian(const ParamSet& theta, const Tensor& instance,
                      const std::function<Var(const std::vector<Var>&, const Var&)>& loss_fn);

// The Jacobian above for the classifier's per-instance loss.
Tensor amplification_jacobian(const Architecture& arch, const Tensor& instance, int32_t label,
                              const ParamSet& theta);

// Entrywise l1 norm of the Jacobian above.
double amplification_norm(const Architecture& arch, const Tensor& instance, int32_t label,
                          const ParamSet& theta);

// Averaged over `draws` fresh initializations derived from `seed`.
double amplification_norm_avg(const Architecture& arch, const Tensor& instance, int32_t label,
                              uint64_t seed, Index draws = 4);

struct AmpSplit {
  std::vector<Index> plus;    // top half by norm, descending
  std::vector<Index> minus;   // bottom half by norm, descending
  std::vector<double> norms;  // per synthetic row
};

/// Halves S by amplification norm (ties broken by row index, the median row
/// dropped when |S| is odd).
AmpSplit split_by_amplification(const SyntheticDataset& S, const Architecture& arch,
                                uint64_t seed, Index draws = 4);

struct CouplingSplit {
  double fraction = 0.0;   // quantile p: top-p vs bottom-p rows
  double norm_diff = 0.0;  // mean norm(S+) - mean norm(S-)
  double disc_mean = 0.0;  // mean over seeds of acc(S+) - acc(S-), percent
  double disc_std = 0.0;
  double eps_norm = 0.0;   // |g_target - grad L_{S+}|_2 at a fresh init
  std::vector<double> acc_plus;
  std::vector<double> acc_minus;
};

struct CouplingReport {
  std::vector<CouplingSplit> splits;
  double spearman = 0.0;      // rank correlation of norm_diff vs disc_mean
  std::vector<double> norms;  // per-row amplification norms used for sorting
};

/// For each quantile fraction, trains networks on the high-norm and low-norm
/// row sets separately (eval_cfg.seeds each) and relates the accuracy gap to
/// the norm gap. `train` supplies the real-gradient target for the epsilon
/// residual; accuracies are measured on `test`.
CouplingReport coupling_experiment(const SyntheticDataset& S, const Architecture& arch,
                                   const LabeledDataset& train, const LabeledDataset& test,
                                   const EvalConfig& eval_cfg,
                                   const std::vector<double>& fractions, uint64_t seed,
                                   Index draws = 4);

/// Loss of every `track` instance along synthetic training: column 0 is the
/// untrained network, each later column follows 20 more iterations (stage
/// order respected when S is partitioned). Shape [instances, epochs].
Tensor track_instance_losses(const SyntheticDataset& S, const LabeledDataset& track,
                             const Architecture& arch, Index epochs, uint64_t seed,
                             double lr = 0.05);

struct EasyHardClusters {
  std::vector<Index> easy;
  std::vector<Index> hard;
  double easy_fraction = 0.0;
  double hard_fraction = 0.0;
  bool degenerate = false;   // all rows identical: everything lands in easy
  double within_var = 0.0;   // sum of squared distances to own centroid
};

/// Two-means Lloyd over loss-trajectory rows. Deterministic: centroids start
/// at the extreme-mean rows; the lower-mean cluster is labeled easy.
EasyHardClusters cluster_easy_hard(const Tensor& matrix);

struct GroupCurves {
  std::vector<double> easy_mean;
  std::vector<double> hard_mean;  // zeros when the hard group is empty
};

GroupCurves loss_drop_summary(const Tensor& matrix, const std::vector<Index>& easy,
                              const std::vector<Index>& hard);

// Rank correlation with average ranks on ties.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// CSV schemas: (instance_id, epoch, loss); (epoch, easy_mean, hard_mean);
// (split_id, norm_diff, discrepancy_mean, discrepancy_std).
void export_loss_matrix_csv(const std::string& path, const Tensor& matrix);
void export_group_curves_csv(const std::string& path, const GroupCurves& curves);
void export_coupling_csv(const std::string& path, const CouplingReport& report);

}  // namespace sqd
