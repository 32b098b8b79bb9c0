#include "fedlm/params.hpp"

#include <cmath>

namespace fedlm {

void ParameterSet::add(std::string name, Tensor value, bool freezable) {
  if (contains(name)) throw UsageError("duplicate parameter name " + name);
  params_.emplace(std::move(name), Parameter{std::move(value), freezable, true});
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("unknown parameter " + name);
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("unknown parameter " + name);
  return it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterSet::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

void ParameterSet::set_all_trainable(bool trainable) {
  for (auto& [name, p] : params_) p.trainable = trainable;
}

TensorMap ParameterSet::values() const {
  TensorMap out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value);
  return out;
}

bool operator==(const Parameter& a, const Parameter& b) {
  return a.value == b.value && a.freezable == b.freezable &&
         a.trainable == b.trainable;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  return params_ == other.params_;
}

double global_norm(const TensorMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values) sq += v * v;
  return std::sqrt(sq);
}

TensorMap clip_global_norm(TensorMap grads, double clipnorm) {
  if (clipnorm < 0.0) throw ConfigError("clipnorm must be >= 0");
  if (clipnorm == 0.0) return grads;
  const double norm = global_norm(grads);
  if (norm > clipnorm) {
    const double s = clipnorm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.values) v *= s;
  }
  return grads;
}

}  // namespace fedlm
