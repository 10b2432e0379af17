#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqd/tensor.hpp"

namespace sqd {

/// Per-feature standardization. `apply` then `invert` is the identity; a zero
/// standard deviation is stored as 1 so constant features pass through.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool identity() const { return mean.empty(); }
  Tensor apply(const Tensor& X) const;
  Tensor invert(const Tensor& X) const;
};

Normalization fit_normalization(const Tensor& X);

struct LabeledDataset {
  Tensor X;                  // [count, d] or [count, c, h, w]
  std::vector<int32_t> y;
  Index classes = 0;
  Normalization norm;        // statistics already applied to X

  Index count() const { return X.defined() ? X.dim(0) : 0; }
  Shape instance_shape() const;
  Index instance_size() const;
  // Throws unless labels match instances, stay in range, and every class
  // appears at least once.
  void validate() const;
  LabeledDataset subset(const std::vector<Index>& rows) const;
  std::vector<Index> rows_of_class(int32_t c) const;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Gaussian blobs: class means drawn on the unit sphere, instances mean +
/// N(0, spread^2), stratified 80/20 train/test split.
DatasetSplit gen_blobs(Index classes, Index dim, Index per_class, double spread,
                       uint64_t seed);

// Stratified split preserving per-class proportions within one instance.
DatasetSplit stratified_split(const LabeledDataset& all, double train_fraction,
                              uint64_t seed);

// --- IDX (big-endian image/label pair) ---

/// Decodes an IDX image/label pair. Pixels come out in [0,1] as [n,1,h,w];
/// header magics, dimensions, and payload sizes are validated strictly.
LabeledDataset parse_idx(const std::vector<uint8_t>& image_bytes,
                         const std::vector<uint8_t>& label_bytes);

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<uint8_t>& pixels, Index count, Index rows, Index cols,
               const std::vector<uint8_t>& labels);

/// Procedural digit corpus in MNIST's file format: seven-segment glyphs with
/// per-instance shift, stroke-intensity jitter, and pixel noise. Stands in
/// where the real handwritten corpus is not on disk.
void gen_glyphs(const std::string& images_path, const std::string& labels_path,
                Index per_class, Index side, uint64_t seed);

// Halves spatial resolution of [n,c,h,w] instances by 2x2 mean pooling.
LabeledDataset downsample2x(const LabeledDataset& d);

}  // namespace sqd
