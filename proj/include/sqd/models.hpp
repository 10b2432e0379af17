#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sqd/autodiff.hpp"
#include "sqd/data.hpp"
#include "sqd/params.hpp"

namespace sqd {

enum class ArchKind { Mlp, ConvNetMini };
enum class Activation { Tanh, Relu, Softplus };

struct Architecture {
  ArchKind kind = ArchKind::Mlp;
  Shape input_shape;             // Mlp: [d]; ConvNetMini: [c,h,w]
  Index classes = 0;
  std::vector<Index> hidden;     // Mlp hidden widths
  Index channels = 8;            // ConvNetMini conv width
  Index blocks = 3;              // ConvNetMini conv-tanh-pool blocks
  Activation activation = Activation::Tanh;

  Index input_size() const { return shape_size(input_shape); }
  void validate() const;
  std::string describe() const;
};

struct InitSpec {
  uint64_t seed = 0;
};

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.0;
  Index batch = 64;          // <= 0 or >= |data| means full batch
  Index iters = 0;
  uint64_t seed = 0;         // batch-order stream
  uint64_t iter0 = 0;        // global iteration offset for the batch stream
  bool log_losses = false;
};

struct TrainResult {
  ParamSet params;
  std::vector<double> losses;  // per iteration, only when log_losses
};

enum class Reduction { Mean, Sum };

/// Fan-in-scaled uniform init, bound sqrt(6/fan_in); biases zero.
/// Deterministic per (arch, seed).
ParamSet init_params(const Architecture& arch, const InitSpec& init);

/// Logits [n, classes]. Parameters in init_params order. Rank > 2 input is
/// flattened for the MLP.
Var forward(const Architecture& arch, const std::vector<Var>& params, const Var& x);

// Softmax cross-entropy per instance, [n]. Exact under a detached row-max
// shift, so gradients of any order are unaffected.
Var ce_per_instance(const Var& logits, const std::vector<int32_t>& labels);

Var loss(const Architecture& arch, const std::vector<Var>& params, const Var& x,
         const std::vector<int32_t>& labels, Reduction reduction = Reduction::Mean);

// Mean loss over a batch, for Tensor-level callers.
double loss_value(const Architecture& arch, const ParamSet& params, const LabeledDataset& data);

/// Plain SGD on the mean loss. Batches are drawn per iteration from a
/// counter stream keyed by (seed, iter0 + iteration), so runs replay exactly
/// and a budget split across calls consumes the identical stream.
/// Non-finite values abort with the iteration index.
TrainResult alg(const LabeledDataset& data, const Architecture& arch, const ParamSet& params0,
                const TrainConfig& cfg,
                const std::function<void(Index, const ParamSet&, double)>& after_step = {});

// Batch row indices for one iteration of the stream above (exposed so tests
// and trajectory replays agree on the draw).
std::vector<Index> batch_rows(Index data_count, Index batch, uint64_t seed, uint64_t global_iter);

double accuracy(const Architecture& arch, const ParamSet& params, const LabeledDataset& data);

Tensor per_instance_losses(const Architecture& arch, const ParamSet& params,
                           const LabeledDataset& data);

// Per-parameter gradient of the loss over `data` (reduction as given).
ParamSet loss_gradient(const Architecture& arch, const ParamSet& params,
                       const LabeledDataset& data, Reduction reduction = Reduction::Mean);

}  // namespace sqd
