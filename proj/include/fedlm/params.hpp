#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedlm/tensor.hpp"

namespace fedlm {

// Name -> tensor, used for gradients, deltas and optimizer moments.
using TensorMap = std::map<std::string, Tensor>;

struct Parameter {
  Tensor value;
  bool freezable = false;  // eligible for partial-variable freezing
  bool trainable = true;   // updated in the current unit of work
};

/// Named model tensors, iterated in lexicographic name order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Parameter>;

  void add(std::string name, Tensor value, bool freezable);

  bool contains(const std::string& name) const {
    return params_.count(name) != 0;
  }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::vector<std::string> names() const;
  std::size_t total_count() const;
  std::size_t trainable_count() const;

  void set_all_trainable(bool trainable);
  TensorMap values() const;

  bool operator==(const ParameterSet& other) const;

 private:
  Map params_;
};

bool operator==(const Parameter& a, const Parameter& b);

double global_norm(const TensorMap& grads);

// Rescales all gradients by clipnorm/||g|| when the global l2 norm exceeds
// clipnorm. clipnorm == 0 disables clipping; negative is a ConfigError.
TensorMap clip_global_norm(TensorMap grads, double clipnorm);

}  // namespace fedlm
