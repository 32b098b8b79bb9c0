#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlm/data.hpp"
#include "fedlm/params.hpp"
#include "fedlm/tensor.hpp"

namespace fedlm {

enum class Arch { cifg_lstm, transformer };

struct ModelConfig {
  Arch arch = Arch::cifg_lstm;
  std::size_t vocab_size = 128;
  std::size_t embed_dim = 16;
  // LSTM cell width, or the Transformer MLP width.
  std::size_t layer_size = 32;
  std::size_t num_layers = 1;
  std::size_t num_heads = 2;
  std::size_t max_seq_len = 30;
  // Published parameter count for the named presets, 0 for custom shapes.
  double nominal_params = 0.0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// small_lstm, large_lstm, small_transformer, large_transformer (the published
// architectures, 4K vocabulary) and desk_lstm, desk_transformer.
ModelConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();
std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view s);

struct ParamSpec {
  std::string name;
  Shape shape;
  bool freezable;
  enum class Init { weight, embedding, zero, one } init;
  std::size_t fan_in;
};

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

// Weights uniform in +-1/sqrt(fan_in), biases zero, layer-norm gains one.
ParameterSet init_params(const ModelConfig& cfg, Prng rng);

struct FreezableInfo {
  std::string name;
  std::size_t count;
};
std::vector<FreezableInfo> list_freezable(const ParameterSet& params);

// tokens is [batch * seq] batch-major; result is [batch, seq, vocab].
Tensor forward_logits(const ModelConfig& cfg, const ParameterSet& params,
                      std::span<const int> tokens, std::size_t batch,
                      std::size_t seq);

struct LossAndGrads {
  double loss = 0.0;  // mean nats per counted target
  std::size_t targets = 0;
  TensorMap grads;    // trainable tensors only
};

LossAndGrads loss_and_grads(const ModelConfig& cfg, const ParameterSet& params,
                            const Batch& batch);
// Loss only; no gradients recorded.
double batch_loss(const ModelConfig& cfg, const ParameterSet& params,
                  const Batch& batch);

struct EvalResult {
  double total_nats = 0.0;
  std::size_t targets = 0;
  double perplexity() const;
};

EvalResult evaluate(const ModelConfig& cfg, const ParameterSet& params,
                    std::span<const Sequence> seqs, std::size_t seq_len,
                    std::size_t batch_size = 64);
double evaluate_perplexity(const ModelConfig& cfg, const ParameterSet& params,
                           std::span<const Sequence> seqs, std::size_t seq_len);

// Checkpoint file: "FEDLM1", u32 tensor count, then per tensor u16 name
// length, name, u8 rank, u32 dims, little-endian f64 values.
std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params);
TensorMap decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet& params);
TensorMap load_checkpoint(const std::filesystem::path& path);
// Overwrites values in `params`; names and shapes must match exactly.
void assign_checkpoint(ParameterSet& params, const TensorMap& values);

}  // namespace fedlm
