#include "fedlm/optim.hpp"

#include <cmath>

namespace fedlm {

namespace {

Parameter& matching_param(ParameterSet& params, const std::string& name,
                          const Tensor& g) {
  if (!params.contains(name)) throw IndexError("gradient for unknown tensor " + name);
  Parameter& p = params.at(name);
  if (p.value.shape != g.shape) {
    throw DimensionError("gradient shape " + shape_string(g.shape) + " for " +
                         name + " of shape " + shape_string(p.value.shape));
  }
  return p;
}

Tensor& accumulator_for(AdagradState& s, const std::string& name,
                        const Tensor& like) {
  auto it = s.accumulator.find(name);
  if (it == s.accumulator.end()) {
    it = s.accumulator
             .emplace(name, Tensor(like.shape, s.config.initial_accumulator))
             .first;
  }
  return it->second;
}

}  // namespace

void sgd_step(ParameterSet& params, const TensorMap& grads,
              const SgdConfig& cfg) {
  for (const auto& [name, g] : grads) {
    Parameter& p = matching_param(params, name, g);
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < g.size(); ++i) p.value[i] -= cfg.lr * g[i];
  }
}

void adam_step(ParameterSet& params, const TensorMap& grad, AdamState& state) {
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grad) {
    Parameter& p = matching_param(params, name, g);
    auto& m = state.m.try_emplace(name, Tensor(g.shape, 0.0)).first->second;
    auto& v = state.v.try_emplace(name, Tensor(g.shape, 0.0)).first->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    require_finite(m, "adam first moment");
    require_finite(v, "adam second moment");
  }
}

void adagrad_accumulate(AdagradState& state, const TensorMap& grad) {
  for (const auto& [name, g] : grad) {
    Tensor& a = accumulator_for(state, name, g);
    if (a.shape != g.shape) throw DimensionError("adagrad shape mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] * g[i];
  }
}

void adagrad_apply_frozen(ParameterSet& params, const TensorMap& grad,
                          const AdagradState& state) {
  const AdagradConfig& c = state.config;
  for (const auto& [name, g] : grad) {
    Parameter& p = matching_param(params, name, g);
    if (!p.trainable) continue;
    auto it = state.accumulator.find(name);
    const Tensor* acc = it == state.accumulator.end() ? nullptr : &it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double a = acc ? (*acc)[i] : c.initial_accumulator;
      p.value[i] -= c.lr * g[i] / (std::sqrt(a) + c.eps);
    }
  }
}

void adagrad_step(ParameterSet& params, const TensorMap& grad,
                  AdagradState& state) {
  for (const auto& [name, g] : grad) matching_param(params, name, g);
  adagrad_accumulate(state, grad);
  adagrad_apply_frozen(params, grad, state);
}

ServerState make_server_state(ParameterSet model, ServerOptimizerConfig opt) {
  ServerState s;
  s.model = std::move(model);
  s.model.set_all_trainable(true);
  s.optimizer = opt;
  s.adam.config = opt.adam;
  s.adam.config.lr = opt.lr;
  return s;
}

void server_apply(ServerState& state, const TensorMap& mean_delta) {
  TensorMap pseudo_grad;
  for (const auto& [name, d] : mean_delta) {
    if (!state.model.contains(name)) {
      throw IndexError("aggregated delta for unknown tensor " + name);
    }
    Tensor g = d;
    for (double& v : g.values) v = -v;
    pseudo_grad.emplace(name, std::move(g));
  }
  switch (state.optimizer.kind) {
    case ServerOptimizerKind::sgd:
      sgd_step(state.model, pseudo_grad, SgdConfig{state.optimizer.lr});
      break;
    case ServerOptimizerKind::adam:
      adam_step(state.model, pseudo_grad, state.adam);
      break;
  }
}

void write_tensor_map(io::ByteWriter& w, const TensorMap& m) {
  w.u32(static_cast<std::uint32_t>(m.size()));
  for (const auto& [name, t] : m) {
    if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name);
    if (t.rank() > 0xff) throw UsageError("tensor rank too large: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.f64(v);
  }
}

TensorMap read_tensor_map(io::ByteReader& r) {
  TensorMap m;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name = r.str(len);
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) r.fail("tensor " + name + " exceeds input");
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    if (!m.emplace(name, Tensor(shape, std::move(values))).second) {
      r.fail("duplicate tensor " + name);
    }
  }
  return m;
}

namespace {

void expect_magic(io::ByteReader& r, std::string_view magic) {
  if (r.remaining() < magic.size() || r.str(magic.size()) != magic) {
    throw DecodeError("bad magic, expected " + std::string(magic) +
                      " at offset 0");
  }
}

}  // namespace

io::Bytes encode_adam_state(const AdamState& s) {
  io::ByteWriter w;
  w.raw("FADAM1");
  w.f64(s.config.lr);
  w.f64(s.config.beta1);
  w.f64(s.config.beta2);
  w.f64(s.config.eps);
  w.u64(static_cast<std::uint64_t>(s.step));
  write_tensor_map(w, s.m);
  write_tensor_map(w, s.v);
  return std::move(w).bytes();
}

AdamState decode_adam_state(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  expect_magic(r, "FADAM1");
  AdamState s;
  s.config.lr = r.f64();
  s.config.beta1 = r.f64();
  s.config.beta2 = r.f64();
  s.config.eps = r.f64();
  s.step = static_cast<std::int64_t>(r.u64());
  s.m = read_tensor_map(r);
  s.v = read_tensor_map(r);
  if (!r.done()) r.fail("trailing bytes");
  return s;
}

io::Bytes encode_adagrad_state(const AdagradState& s) {
  io::ByteWriter w;
  w.raw("FADAG1");
  w.f64(s.config.lr);
  w.f64(s.config.eps);
  w.f64(s.config.initial_accumulator);
  write_tensor_map(w, s.accumulator);
  return std::move(w).bytes();
}

AdagradState decode_adagrad_state(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  expect_magic(r, "FADAG1");
  AdagradState s;
  s.config.lr = r.f64();
  s.config.eps = r.f64();
  s.config.initial_accumulator = r.f64();
  s.accumulator = read_tensor_map(r);
  if (!r.done()) r.fail("trailing bytes");
  return s;
}

}  // namespace fedlm
