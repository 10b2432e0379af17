#include "sqd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sqd/rng.hpp"

namespace sqd {

namespace {

void check_feature_count(const char* op, const Normalization& n, const Tensor& X) {
  Index d = X.size() / X.dim(0);
  if (Index(n.mean.size()) != d || Index(n.stddev.size()) != d)
    throw ShapeError(std::string(op) + ": normalization has " + std::to_string(n.mean.size()) +
                     " features, data has " + std::to_string(d));
}

}  // namespace

Tensor Normalization::apply(const Tensor& X) const {
  if (identity()) return X;
  check_feature_count("normalize", *this, X);
  Index n = X.dim(0), d = X.size() / n;
  std::vector<double> out(size_t(X.size()));
  const double* p = X.data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      out[size_t(i * d + j)] = (p[i * d + j] - mean[size_t(j)]) / stddev[size_t(j)];
  return Tensor::from_data(X.shape(), std::move(out));
}

Tensor Normalization::invert(const Tensor& X) const {
  if (identity()) return X;
  check_feature_count("denormalize", *this, X);
  Index n = X.dim(0), d = X.size() / n;
  std::vector<double> out(size_t(X.size()));
  const double* p = X.data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      out[size_t(i * d + j)] = p[i * d + j] * stddev[size_t(j)] + mean[size_t(j)];
  return Tensor::from_data(X.shape(), std::move(out));
}

Normalization fit_normalization(const Tensor& X) {
  Index n = X.dim(0), d = X.size() / n;
  Normalization out;
  out.mean.assign(size_t(d), 0.0);
  out.stddev.assign(size_t(d), 0.0);
  const double* p = X.data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) out.mean[size_t(j)] += p[i * d + j];
  for (double& m : out.mean) m /= double(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) {
      double c = p[i * d + j] - out.mean[size_t(j)];
      out.stddev[size_t(j)] += c * c;
    }
  for (double& s : out.stddev) {
    s = std::sqrt(s / double(n));
    if (s == 0.0) s = 1.0;
  }
  return out;
}

Shape LabeledDataset::instance_shape() const {
  Shape s = X.shape();
  s.erase(s.begin());
  return s;
}

Index LabeledDataset::instance_size() const { return count() == 0 ? 0 : X.size() / count(); }

void LabeledDataset::validate() const {
  if (!X.defined() || X.rank() < 2) throw ShapeError("dataset: instances must be rank >= 2");
  if (count() != Index(y.size()))
    throw ShapeError("dataset: " + std::to_string(count()) + " instances vs " +
                     std::to_string(y.size()) + " labels");
  if (classes < 2) throw ShapeError("dataset: needs >= 2 classes");
  std::vector<Index> per_class(size_t(classes), 0);
  for (int32_t c : y) {
    if (c < 0 || Index(c) >= classes)
      throw ShapeError("dataset: label " + std::to_string(c) + " outside [0," +
                       std::to_string(classes) + ")");
    ++per_class[size_t(c)];
  }
  for (Index c = 0; c < classes; ++c)
    if (per_class[size_t(c)] == 0)
      throw ShapeError("dataset: class " + std::to_string(c) + " has no instances");
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& rows) const {
  LabeledDataset out;
  out.X = gather_rows(X, rows);
  out.y.reserve(rows.size());
  for (Index r : rows) out.y.push_back(y.at(size_t(r)));
  out.classes = classes;
  out.norm = norm;
  return out;
}

std::vector<Index> LabeledDataset::rows_of_class(int32_t c) const {
  std::vector<Index> out;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] == c) out.push_back(Index(i));
  return out;
}

DatasetSplit stratified_split(const LabeledDataset& all, double train_fraction,
                              uint64_t seed) {
  CounterRng rng(seed, "split");
  std::vector<Index> train_rows, test_rows;
  for (int32_t c = 0; c < int32_t(all.classes); ++c) {
    std::vector<Index> rows = all.rows_of_class(c);
    for (size_t i = rows.size(); i > 1; --i)
      std::swap(rows[i - 1], rows[rng.uniform_index(i)]);
    size_t n_train = size_t(std::llround(train_fraction * double(rows.size())));
    train_rows.insert(train_rows.end(), rows.begin(), rows.begin() + Index(n_train));
    test_rows.insert(test_rows.end(), rows.begin() + Index(n_train), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {all.subset(train_rows), all.subset(test_rows)};
}

DatasetSplit gen_blobs(Index classes, Index dim, Index per_class, double spread,
                       uint64_t seed) {
  if (classes < 2) throw ConfigError("data.classes", "needs >= 2");
  if (dim < 2) throw ConfigError("data.dim", "needs >= 2");
  if (per_class < 2) throw ConfigError("data.per_class", "needs >= 2");
  if (spread < 0.0) throw ConfigError("data.spread", "must be >= 0");

  CounterRng mean_rng(seed, "blob-means");
  std::vector<std::vector<double>> means(static_cast<size_t>(classes));
  for (auto& m : means) {
    m.resize(size_t(dim));
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : m) {
        v = mean_rng.normal();
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    double inv = 1.0 / std::sqrt(norm2);
    for (double& v : m) v *= inv;
  }

  CounterRng noise_rng(seed, "blob-noise");
  std::vector<double> px;
  px.reserve(size_t(classes * per_class * dim));
  std::vector<int32_t> labels;
  labels.reserve(size_t(classes * per_class));
  for (Index c = 0; c < classes; ++c)
    for (Index i = 0; i < per_class; ++i) {
      for (Index j = 0; j < dim; ++j)
        px.push_back(means[size_t(c)][size_t(j)] + spread * noise_rng.normal());
      labels.push_back(int32_t(c));
    }

  LabeledDataset all;
  all.X = Tensor::from_data({classes * per_class, dim}, std::move(px));
  all.y = std::move(labels);
  all.classes = classes;
  all.validate();
  DatasetSplit split = stratified_split(all, 0.8, seed_derive(seed, "blob-split"));
  split.train.validate();
  split.test.validate();
  return split;
}

// --- IDX ---

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_u32_be(const std::vector<uint8_t>& b, size_t off, const char* what) {
  if (off + 4 > b.size()) throw StoreError(std::string("idx: truncated ") + what);
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) |
         (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

void push_u32_be(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw StoreError("short write to " + path);
}

}  // namespace

LabeledDataset parse_idx(const std::vector<uint8_t>& image_bytes,
                         const std::vector<uint8_t>& label_bytes) {
  uint32_t im = read_u32_be(image_bytes, 0, "image header");
  if (im != kImageMagic)
    throw StoreError("idx: bad magic in image file (got 0x" + std::to_string(im) + ")");
  uint32_t count = read_u32_be(image_bytes, 4, "image header");
  uint32_t rows = read_u32_be(image_bytes, 8, "image header");
  uint32_t cols = read_u32_be(image_bytes, 12, "image header");
  size_t need = 16 + size_t(count) * rows * cols;
  if (image_bytes.size() != need)
    throw StoreError("idx: image payload is " + std::to_string(image_bytes.size()) +
                     " bytes, expected " + std::to_string(need));

  uint32_t lm = read_u32_be(label_bytes, 0, "label header");
  if (lm != kLabelMagic) throw StoreError("idx: bad magic in label file");
  uint32_t lcount = read_u32_be(label_bytes, 4, "label header");
  if (lcount != count)
    throw StoreError("idx: " + std::to_string(count) + " images vs " +
                     std::to_string(lcount) + " labels");
  if (label_bytes.size() != 8 + size_t(lcount))
    throw StoreError("idx: truncated label payload");

  std::vector<double> px(size_t(count) * rows * cols);
  for (size_t i = 0; i < px.size(); ++i) px[i] = double(image_bytes[16 + i]) / 255.0;
  LabeledDataset out;
  out.X = Tensor::from_data({Index(count), 1, Index(rows), Index(cols)}, std::move(px));
  out.y.resize(count);
  int32_t top = 0;
  for (uint32_t i = 0; i < count; ++i) {
    out.y[i] = int32_t(label_bytes[8 + i]);
    top = std::max(top, out.y[i]);
  }
  out.classes = Index(top) + 1;
  out.validate();
  return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(read_file(images_path), read_file(labels_path));
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<uint8_t>& pixels, Index count, Index rows, Index cols,
               const std::vector<uint8_t>& labels) {
  if (Index(pixels.size()) != count * rows * cols)
    throw ShapeError("write_idx: pixel count mismatch");
  if (Index(labels.size()) != count) throw ShapeError("write_idx: label count mismatch");
  std::vector<uint8_t> ib;
  ib.reserve(16 + pixels.size());
  push_u32_be(ib, kImageMagic);
  push_u32_be(ib, uint32_t(count));
  push_u32_be(ib, uint32_t(rows));
  push_u32_be(ib, uint32_t(cols));
  ib.insert(ib.end(), pixels.begin(), pixels.end());
  write_file(images_path, ib);

  std::vector<uint8_t> lb;
  lb.reserve(8 + labels.size());
  push_u32_be(lb, kLabelMagic);
  push_u32_be(lb, uint32_t(count));
  lb.insert(lb.end(), labels.begin(), labels.end());
  write_file(labels_path, lb);
}

// --- glyph corpus ---

namespace {

// Seven-segment bars on a unit square: {x0, y0, x1, y1} per segment, in the
// order top, top-right, bottom-right, bottom, bottom-left, top-left, middle.
constexpr double kSegs[7][4] = {
    {0.15, 0.05, 0.85, 0.05}, {0.85, 0.05, 0.85, 0.50}, {0.85, 0.50, 0.85, 0.95},
    {0.15, 0.95, 0.85, 0.95}, {0.15, 0.50, 0.15, 0.95}, {0.15, 0.05, 0.15, 0.50},
    {0.15, 0.50, 0.85, 0.50}};

constexpr uint8_t kDigitSegs[10] = {
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
    0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111};

double point_segment_dist(double px, double py, const double* s) {
  double vx = s[2] - s[0], vy = s[3] - s[1];
  double wx = px - s[0], wy = py - s[1];
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = px - (s[0] + t * vx), dy = py - (s[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

void gen_glyphs(const std::string& images_path, const std::string& labels_path,
                Index per_class, Index side, uint64_t seed) {
  if (per_class < 1) throw ConfigError("data.per_class", "needs >= 1");
  if (side < 8) throw ConfigError("data.side", "glyph canvas needs side >= 8");
  CounterRng rng(seed, "glyphs");
  Index count = 10 * per_class;
  std::vector<uint8_t> pixels(size_t(count * side * side), 0);
  std::vector<uint8_t> labels(static_cast<size_t>(count));

  double stroke = double(side) / 9.0;
  double inset = double(side) * 0.2;
  double span = double(side) - 2.0 * inset;

  Index idx = 0;
  for (int digit = 0; digit < 10; ++digit)
    for (Index rep = 0; rep < per_class; ++rep, ++idx) {
      labels[size_t(idx)] = uint8_t(digit);
      double shift_x = rng.uniform(-3.0, 3.0) * double(side) / 28.0;
      double shift_y = rng.uniform(-3.0, 3.0) * double(side) / 28.0;
      double amp = rng.uniform(0.7, 1.0);
      uint8_t segs = kDigitSegs[digit];
      uint8_t* img = pixels.data() + idx * side * side;
      for (Index yy = 0; yy < side; ++yy)
        for (Index xx = 0; xx < side; ++xx) {
          double ux = (double(xx) - shift_x - inset) / span;
          double uy = (double(yy) - shift_y - inset) / span;
          double best = 1e9;
          for (int s = 0; s < 7; ++s)
            if (segs & (1 << s)) best = std::min(best, point_segment_dist(ux, uy, kSegs[s]));
          double v = amp * std::clamp(1.5 - best * span / stroke, 0.0, 1.0);
          v += 0.1 * rng.normal();
          img[yy * side + xx] = uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    }
  write_idx(images_path, labels_path, pixels, count, side, side, labels);
}

LabeledDataset downsample2x(const LabeledDataset& d) {
  if (d.X.rank() != 4) throw ShapeError("downsample2x: needs [n,c,h,w] instances");
  LabeledDataset out = d;
  out.X = avgpool(d.X, 2);
  return out;
}

}  // namespace sqd
