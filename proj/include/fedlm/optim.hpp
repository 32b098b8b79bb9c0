#pragma once

#include <cstdint>
#include <optional>

#include "fedlm/io.hpp"
#include "fedlm/params.hpp"

namespace fedlm {

struct SgdConfig {
  double lr = 0.1;

  bool operator==(const SgdConfig&) const = default;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  TensorMap m;
  TensorMap v;

  bool operator==(const AdamState&) const = default;
};

struct AdagradConfig {
  double lr = 0.1;
  double eps = 1e-3;
  // Value a missing accumulator entry starts from.
  double initial_accumulator = 0.1;

  bool operator==(const AdagradConfig&) const = default;
};

struct AdagradState {
  AdagradConfig config;
  TensorMap accumulator;

  bool operator==(const AdagradState&) const = default;
};

// w <- w - lr * g for every trainable tensor named in grads. Gradients for
// frozen tensors are ignored; unknown names or shape mismatches throw.
void sgd_step(ParameterSet& params, const TensorMap& grads,
              const SgdConfig& cfg);

// Bias-corrected Adam over the tensors named in grad; moments of tensors not
// named are left untouched. The step counter advances once per call.
void adam_step(ParameterSet& params, const TensorMap& grad, AdamState& state);

// A <- A + g^2, then w <- w - lr * g / (sqrt(A) + eps).
void adagrad_step(ParameterSet& params, const TensorMap& grad,
                  AdagradState& state);
// The same update using the accumulator as-is, without advancing it.
void adagrad_apply_frozen(ParameterSet& params, const TensorMap& grad,
                          const AdagradState& state);
// A <- A + g^2 only.
void adagrad_accumulate(AdagradState& state, const TensorMap& grad);

enum class ServerOptimizerKind { sgd, adam };

struct ServerOptimizerConfig {
  ServerOptimizerKind kind = ServerOptimizerKind::adam;
  double lr = 0.001;
  AdamConfig adam;  // lr is taken from `lr`
};

struct ServerState {
  ParameterSet model;
  ServerOptimizerConfig optimizer;
  AdamState adam;
  std::optional<AdagradState> mime;
  std::int64_t round = 0;
};

ServerState make_server_state(ParameterSet model, ServerOptimizerConfig opt);

// Feeds the pseudo-gradient -mean_delta to the server optimizer. Tensors not
// present in mean_delta are unchanged.
void server_apply(ServerState& state, const TensorMap& mean_delta);

io::Bytes encode_adam_state(const AdamState& s);
AdamState decode_adam_state(std::span<const std::uint8_t> bytes);
io::Bytes encode_adagrad_state(const AdagradState& s);
AdagradState decode_adagrad_state(std::span<const std::uint8_t> bytes);

// Shared by checkpoint and optimizer-state files.
void write_tensor_map(io::ByteWriter& w, const TensorMap& m);
TensorMap read_tensor_map(io::ByteReader& r);

}  // namespace fedlm
