#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sqd/config.hpp"
#include "sqd/diagnostics.hpp"

namespace sqd {

/// Artifact layout inside one run directory.
struct RunPaths {
  std::string root;

  explicit RunPaths(std::string r) : root(std::move(r)) {}
  std::string config() const { return root + "/config.json"; }
  std::string manifest(const std::string& command) const {
    return root + "/run-" + command + ".json";
  }
  std::string data_summary() const { return root + "/data.json"; }
  std::string glyphs_train_images() const { return root + "/glyphs-train-images.idx"; }
  std::string glyphs_train_labels() const { return root + "/glyphs-train-labels.idx"; }
  std::string glyphs_test_images() const { return root + "/glyphs-test-images.idx"; }
  std::string glyphs_test_labels() const { return root + "/glyphs-test-labels.idx"; }
  std::string trajectory(Index i) const {
    return root + "/teacher_" + std::to_string(i) + ".sqds";
  }
  std::string synthetic() const { return root + "/synthetic.sqds"; }
  std::string progress_log() const { return root + "/distill_progress.jsonl"; }
  std::string eval_report() const { return root + "/eval.json"; }
  std::string loss_matrix_store() const { return root + "/loss_matrix.sqds"; }
  std::string loss_matrix_csv() const { return root + "/loss_matrix.csv"; }
  std::string curves_csv() const { return root + "/group_curves.csv"; }
  std::string coupling_csv() const { return root + "/coupling.csv"; }
  std::string diagnostics_report() const { return root + "/diagnostics.json"; }
};

/// Materializes the configured dataset: blobs regenerate deterministically
/// from the seed; image corpora load from IDX files, downsample when asked,
/// and standardize with train-split statistics.
DatasetSplit load_data(const RunConfig& cfg);

// The config's architecture bound to the dataset's instance shape and
// class count.
Architecture bind_arch(const RunConfig& cfg, const DatasetSplit& data);

// Runs n tasks over at most `jobs` threads; task indices are stable so
// results cannot depend on scheduling.
void parallel_for(Index jobs, Index n, const std::function<void(Index)>& fn);

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_train_teacher(const RunConfig& cfg, Index jobs, std::ostream& log);
void cmd_distill(const RunConfig& cfg, std::ostream& log);
EvalResult cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log);
void cmd_diagnose(const RunConfig& cfg, std::ostream& log);

}  // namespace sqd
