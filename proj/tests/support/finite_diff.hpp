#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "fedlm/params.hpp"

namespace fedlm::testing {

// Central differences, one coordinate at a time.
inline TensorMap finite_diff(const std::function<double(const TensorMap&)>& loss,
                             TensorMap params, double step) {
  if (!(step > 0.0)) throw ConfigError("finite_diff step must be > 0");
  TensorMap out;
  for (auto& [name, t] : params) {
    Tensor g(t.shape, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t[i] = keep + step;
      const double up = loss(params);
      t[i] = keep - step;
      const double down = loss(params);
      t[i] = keep;
      g[i] = (up - down) / (2.0 * step);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

// max |g - h| / max(1, |g|, |h|) over all coordinates.
inline double max_rel_error(const TensorMap& a, const TensorMap& b) {
  double worst = 0.0;
  for (const auto& [name, g] : a) {
    const Tensor& h = b.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = std::abs(g[i] - h[i]) /
                       std::max({1.0, std::abs(g[i]), std::abs(h[i])});
      worst = std::max(worst, d);
    }
  }
  return worst;
}

}  // namespace fedlm::testing
