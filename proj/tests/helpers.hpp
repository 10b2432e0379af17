#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sqd/rng.hpp"
#include "sqd/tensor.hpp"

namespace sqd::test {

// Fresh scratch directory under the system temp root, wiped on entry so
// reruns start clean.
inline std::string scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sqd-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

inline Tensor random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed);
  std::vector<double> v(size_t(shape_size(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::wrap(std::move(shape), std::move(v));
}

inline Tensor random_normal_tensor(Shape shape, uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(size_t(shape_size(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor::wrap(std::move(shape), std::move(v));
}

// Absolute near zero, relative for large values; mirrors the gradient
// checker's convention so thresholds read the same everywhere.
inline double rel_err(double a, double b) {
  double scale = std::abs(a) + std::abs(b);
  return std::abs(a - b) / (scale > 1.0 ? scale : 1.0);
}

}  // namespace sqd::test
