#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqd/matchcore.hpp"
#include "sqd/seqmatch.hpp"

namespace sqd {

enum class DataKind { Blobs, Glyphs, Idx };

struct DataConfig {
  DataKind kind = DataKind::Blobs;
  Index classes = 3;        // blobs
  Index dim = 16;           // blobs
  double spread = 0.3;      // blobs
  Index per_class = 1000;   // blobs and glyphs (train side)
  Index side = 28;          // glyphs raster size
  bool downsample = true;   // halve image resolution after loading
  std::string train_images; // idx paths
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

struct TeacherConfig {
  Index steps = 40;    // checkpoints recorded after the initial weights
  Index stride = 1;    // iterations per checkpoint
  Index pool = 8;      // independently seeded trajectories
  double lr = 0.01;
  double momentum = 0.0;
  Index batch = 64;
};

struct DistillConfig {
  Index ipc = 10;
  BackboneConfig backbone;
  Index iterations = 300;      // matching steps per restart
  Index restarts = 4;
  bool static_backbone = false;  // skip staging, optimize the whole set at once
  bool snapshot_eval = false;    // log a staged-eval accuracy line after each stage
};

struct SeqmatchConfig {
  Index K = 2;
  // Optional replacement segment bounds, one [lo, hi) pair per stage.
  std::vector<std::pair<Index, Index>> segments;
};

struct DiagnoseConfig {
  Index epochs = 15;
  std::vector<double> fractions = {0.1, 0.2, 0.3, 0.4, 0.5};
  Index draws = 4;
};

// Subset counts worth sweeping at small ipc.
inline constexpr Index kKGrid[] = {2, 3, 4, 5, 6};

/// One run's fully-resolved knobs. The architecture's input shape and class
/// count stay unbound until a dataset is loaded.
struct RunConfig {
  uint64_t seed = 1;
  std::string out = "runs/out";
  DataConfig data;
  Architecture arch;
  TeacherConfig teacher;
  DistillConfig distill;
  SeqmatchConfig seqmatch;
  EvalConfig eval;
  DiagnoseConfig diagnose;

  void validate() const;
  nlohmann::json to_json() const;
};

// Strict: unknown keys, type mismatches, and out-of-range values all raise
// ConfigError with the offending field path.
RunConfig config_from_json(const nlohmann::json& j);

/// Loads the file (empty path = all defaults), applies `key.path=value`
/// overrides, honors the SQD_OUT_ROOT prefix for relative output
/// directories, validates.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides);

// Stable content hash of the resolved config, for run manifests.
std::string config_hash(const RunConfig& cfg);

const char* data_kind_name(DataKind k);
const char* match_mode_name(MatchMode m);

}  // namespace sqd
