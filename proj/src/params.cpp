#include "sqd/params.hpp"

#include <algorithm>

namespace sqd {

void ParamSet::add(std::string name, Tensor t) {
  for (const auto& [n, unused] : items_)
    if (n == name) throw ShapeError("ParamSet: duplicate layer '" + name + "'");
  items_.emplace_back(std::move(name), std::move(t));
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ShapeError("ParamSet: no layer '" + std::string(name) + "'");
}

Index ParamSet::total_size() const {
  Index p = 0;
  for (const auto& [n, t] : items_) p += t.size();
  return p;
}

Tensor ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size_t(total_size()));
  for (const auto& [n, t] : items_)
    flat.insert(flat.end(), t.storage().begin(), t.storage().end());
  return Tensor::wrap({Index(flat.size())}, std::move(flat));
}

ParamSet ParamSet::unflatten(const Tensor& flat) const {
  if (flat.rank() != 1 || flat.size() != total_size())
    throw ShapeError("unflatten: expected [" + std::to_string(total_size()) + "], got " +
                     shape_str(flat.shape()));
  ParamSet out;
  Index off = 0;
  for (const auto& [n, t] : items_) {
    std::vector<double> chunk(flat.data() + off, flat.data() + off + t.size());
    out.add(n, Tensor::wrap(t.shape(), std::move(chunk)));
    off += t.size();
  }
  return out;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (items_.size() != o.items_.size()) return false;
  for (size_t i = 0; i < items_.size(); ++i)
    if (items_[i].first != o.items_[i].first ||
        !items_[i].second.same_shape(o.items_[i].second))
      return false;
  return true;
}

bool ParamSet::equals(const ParamSet& o) const {
  if (!same_layout(o)) return false;
  for (size_t i = 0; i < items_.size(); ++i)
    if (!items_[i].second.equals(o.items_[i].second)) return false;
  return true;
}

ParamSet ParamSet::add_scaled(const ParamSet& other, double c) const {
  if (!same_layout(other)) throw ShapeError("add_scaled: layout mismatch");
  ParamSet out;
  for (size_t i = 0; i < items_.size(); ++i)
    out.add(items_[i].first, sqd::add(items_[i].second, scale(other.items_[i].second, c)));
  return out;
}

ParamSet ParamSet::scaled(double c) const {
  ParamSet out;
  for (const auto& [n, t] : items_) out.add(n, scale(t, c));
  return out;
}

std::vector<Var> ParamSet::leaves() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(Var::leaf(t));
  return out;
}

ParamSet ParamSet::with_values(const std::vector<Tensor>& values) const {
  if (values.size() != items_.size()) throw ShapeError("with_values: count mismatch");
  ParamSet out;
  for (size_t i = 0; i < items_.size(); ++i) {
    if (!values[i].same_shape(items_[i].second))
      throw ShapeError("with_values: shape mismatch at '" + items_[i].first + "'");
    out.add(items_[i].first, values[i]);
  }
  return out;
}

}  // namespace sqd
