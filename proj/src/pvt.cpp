#include "fedlm/pvt.hpp"

#include <vector>

namespace fedlm {

void PvtConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("pvt_fraction: must be in (0, 1], got " +
                      std::to_string(fraction));
  }
}

PvtMask full_mask(const ParameterSet& params) {
  PvtMask m;
  for (const auto& [name, p] : params) {
    m.trainable.insert(name);
    m.trainable_count += p.value.size();
  }
  return m;
}

PvtMask select_mask(const ParameterSet& params, const PvtConfig& cfg,
                    Prng rng) {
  cfg.validate();
  PvtMask m;
  std::vector<const std::string*> order;
  for (const auto& [name, p] : params) {
    if (p.freezable) {
      order.push_back(&name);
    } else {
      m.trainable.insert(name);
      m.trainable_count += p.value.size();
    }
  }
  const double target = cfg.fraction * static_cast<double>(params.total_count());
  rng.shuffle(order);

  const std::string* smallest = nullptr;
  for (const std::string* name : order) {
    const std::size_t n = params.at(*name).value.size();
    if (static_cast<double>(m.trainable_count + n) <= target) {
      m.trainable.insert(*name);
      m.trainable_count += n;
    } else if (!smallest || n < params.at(*smallest).value.size()) {
      smallest = name;
    }
  }
  if (smallest) {
    const double n = static_cast<double>(params.at(*smallest).value.size());
    const double room = target - static_cast<double>(m.trainable_count);
    if (room > 0.0 && rng.uniform() < room / n) {
      m.trainable.insert(*smallest);
      m.trainable_count += params.at(*smallest).value.size();
    }
  }
  return m;
}

void apply_mask(ParameterSet& params, const PvtMask& mask) {
  for (const auto& name : mask.trainable) {
    if (!params.contains(name)) {
      throw IndexError("mask names unknown tensor " + name);
    }
  }
  for (auto& [name, p] : params) {
    const bool on = mask.trainable.count(name) != 0;
    if (!on && !p.freezable) {
      throw UsageError("mask freezes non-freezable tensor " + name);
    }
    p.trainable = on;
  }
}

}  // namespace fedlm
