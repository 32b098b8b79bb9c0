#include <doctest.h>

#include <cmath>

#include "fedlm/model.hpp"
#include "fedlm/pvt.hpp"

using namespace fedlm;

namespace {

ParameterSet shapes_only(const char* preset) {
  ParameterSet p;
  for (const auto& s : parameter_specs(model_preset(preset))) p.add(s.name, Tensor(s.shape), s.freezable);
  return p;
}

struct Stats {
  double mean_fraction;
  double sd_fraction;
};

Stats draw_stats(const ParameterSet& p, double rho, int draws) {
  double sum = 0, sq = 0;
  const double total = static_cast<double>(p.total_count());
  for (int i = 0; i < draws; ++i) {
    const auto m = select_mask(p, {rho}, Prng(1).derive("round", i, "client", 0));
    const double f = static_cast<double>(m.trainable_count) / total;
    sum += f;
    sq += f * f;
  }
  const double mean = sum / draws;
  return {mean, std::sqrt(std::max(sq / draws - mean * mean, 0.0))};
}

}  // namespace

TEST_CASE("rho = 1 trains everything") {
  const ParameterSet p = shapes_only("desk_transformer");
  const PvtMask m = select_mask(p, {1.0}, Prng(3));
  CHECK(m == full_mask(p));
  CHECK(m.trainable_count == p.total_count());
}

TEST_CASE("large transformer at 40% trains about 8.4M") {
  const ParameterSet p = shapes_only("large_transformer");
  for (int i = 0; i < 100; ++i) {
    const auto m = select_mask(p, {0.4}, Prng(i));
    CHECK(m.trainable_count >= 8'000'000);
    CHECK(m.trainable_count <= 8'800'000);
  }
}

TEST_CASE("mask is a pure function of the stream") {
  const ParameterSet p = shapes_only("large_transformer");
  const Prng root(17);
  for (int i = 0; i < 100; ++i) {
    CHECK(select_mask(p, {0.4}, root.derive("round", 5u, "client", 9u)) ==
          select_mask(p, {0.4}, root.derive("round", 5u, "client", 9u)));
  }
  CHECK_FALSE(select_mask(p, {0.4}, root.derive("round", 5u, "client", 9u)) ==
              select_mask(p, {0.4}, root.derive("round", 6u, "client", 9u)));
}

TEST_CASE("mask invariants") {
  const ParameterSet p = shapes_only("small_transformer");
  const auto m = select_mask(p, {0.3}, Prng(2));
  std::size_t count = 0;
  for (const auto& [name, param] : p) {
    if (!param.freezable) CHECK(m.trainable.count(name) == 1);
    if (m.trainable.count(name)) count += param.value.size();
  }
  CHECK(count == m.trainable_count);
  CHECK_THROWS_AS(select_mask(p, {0.0}, Prng(1)), ConfigError);
  CHECK_THROWS_AS(select_mask(p, {1.2}, Prng(1)), ConfigError);
}

TEST_CASE("expected trainable fraction tracks rho") {
  const ParameterSet tr = shapes_only("large_transformer");
  const ParameterSet lstm = shapes_only("large_lstm");
  for (double rho : {0.2, 0.4, 0.7}) {
    const Stats t = draw_stats(tr, rho, 1000);
    const Stats l = draw_stats(lstm, rho, 1000);
    INFO("rho " << rho << " transformer " << t.mean_fraction << " lstm " << l.mean_fraction);
    CHECK(std::abs(t.mean_fraction - rho) <= 0.05);
    CHECK(std::abs(l.mean_fraction - rho) <= 0.15);
    CHECK(l.sd_fraction > t.sd_fraction);
  }
  // Large LSTM at 40% trains about 7.5M on average.
  const Stats l = draw_stats(lstm, 0.4, 1000);
  CHECK(l.mean_fraction * lstm.total_count() == doctest::Approx(7.5e6).epsilon(0.05));
}

TEST_CASE("apply_mask") {
  ParameterSet p = shapes_only("desk_lstm");
  const auto m = select_mask(p, {0.5}, Prng(4));
  apply_mask(p, m);
  CHECK(p.trainable_count() == m.trainable_count);
  for (const auto& [name, param] : p) CHECK(param.trainable == (m.trainable.count(name) == 1));

  PvtMask unknown = m;
  unknown.trainable.insert("ghost");
  CHECK_THROWS_AS(apply_mask(p, unknown), IndexError);
  PvtMask drops_bias = full_mask(p);
  drops_bias.trainable.erase("lstm_0/bias");
  CHECK_THROWS_AS(apply_mask(p, drops_bias), UsageError);

  apply_mask(p, full_mask(p));
  CHECK(p.trainable_count() == p.total_count());
}
