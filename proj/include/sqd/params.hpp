#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sqd/autodiff.hpp"
#include "sqd/tensor.hpp"

namespace sqd {

/// Ordered (name, tensor) pairs holding one model's parameters. Order is fixed
/// by the architecture, so two sets of the same layout compare element-wise
/// and flatten into interchangeable [P] vectors.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor t);

  size_t count() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::string& name(size_t i) const { return items_.at(i).first; }
  const Tensor& tensor(size_t i) const { return items_.at(i).second; }
  const Tensor& at(std::string_view name) const;
  Index total_size() const;

  Tensor flatten() const;
  // Rebuild a set with this layout from a flat [P] vector.
  ParamSet unflatten(const Tensor& flat) const;

  bool same_layout(const ParamSet& o) const;
  bool equals(const ParamSet& o) const;

  // this + c * other, layer by layer.
  ParamSet add_scaled(const ParamSet& other, double c) const;
  ParamSet scaled(double c) const;

  // Differentiable leaves in layer order.
  std::vector<Var> leaves() const;
  // Reassemble from per-layer tensors (e.g. gradient values).
  ParamSet with_values(const std::vector<Tensor>& values) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace sqd
