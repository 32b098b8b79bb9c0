#pragma once

#include <set>
#include <string>

#include "fedlm/params.hpp"
#include "fedlm/tensor.hpp"

namespace fedlm {

struct PvtConfig {
  double fraction = 1.0;  // target trainable share of all parameters, (0,1]

  void validate() const;
  bool operator==(const PvtConfig&) const = default;
};

struct PvtMask {
  std::set<std::string> trainable;
  std::size_t trainable_count = 0;

  bool operator==(const PvtMask&) const = default;
};

// Non-freezable tensors are always trainable and count toward the target
// T = fraction * total. Freezable tensors are visited in shuffled order and
// kept while the running count stays <= T. Of the tensors skipped, the
// smallest is then kept with probability (T - count) / size, which makes the
// expected trainable count exactly T whenever T is reachable.
PvtMask select_mask(const ParameterSet& params, const PvtConfig& cfg, Prng rng);

// Sets trainable flags from the mask. Names absent from the model raise
// IndexError; a non-freezable tensor missing from the mask raises UsageError.
void apply_mask(ParameterSet& params, const PvtMask& mask);

PvtMask full_mask(const ParameterSet& params);

}  // namespace fedlm
