#include "fedlm/model.hpp"

#include <cmath>
#include <map>

#include "fedlm/autodiff.hpp"

namespace fedlm {

namespace {

constexpr double kLayerNormEps = 1e-6;

ModelConfig preset(Arch arch, std::size_t vocab, std::size_t embed,
                   std::size_t layer, std::size_t layers, std::size_t heads,
                   double nominal) {
  ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab;
  c.embed_dim = embed;
  c.layer_size = layer;
  c.num_layers = layers;
  c.num_heads = heads;
  c.max_seq_len = 30;
  c.nominal_params = nominal;
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < Vocab::kNumSpecial + 1) throw ConfigError("vocab_size too small");
  if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
  if (layer_size == 0) throw ConfigError("layer_size must be >= 1");
  if (num_layers == 0) throw ConfigError("num_layers must be >= 1");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be >= 1");
  if (arch == Arch::transformer) {
    if (num_heads == 0 || embed_dim % num_heads != 0) {
      throw ConfigError("num_heads must divide embed_dim");
    }
  }
}

ModelConfig model_preset(std::string_view name) {
  // Embedding size / layer size / layers over a 4K vocabulary; the last
  // argument is the nominal size used for cost projections.
  if (name == "small_lstm") return preset(Arch::cifg_lstm, 4000, 256, 2048, 1, 1, 4.7e6);
  if (name == "large_lstm") return preset(Arch::cifg_lstm, 4000, 1024, 2048, 1, 1, 18.8e6);
  if (name == "small_transformer") return preset(Arch::transformer, 4000, 128, 2048, 6, 4, 4.1e6);
  if (name == "large_transformer") return preset(Arch::transformer, 4000, 512, 2048, 6, 8, 21.0e6);
  if (name == "desk_lstm") return preset(Arch::cifg_lstm, 128, 16, 32, 1, 1, 0.0);
  if (name == "desk_transformer") return preset(Arch::transformer, 128, 16, 32, 2, 2, 0.0);
  throw ConfigError("unknown model preset " + std::string(name));
}

std::vector<std::string> model_preset_names() {
  return {"desk_lstm", "desk_transformer", "small_lstm", "large_lstm",
          "small_transformer", "large_transformer"};
}

std::string_view arch_name(Arch a) {
  return a == Arch::cifg_lstm ? "cifg_lstm" : "transformer";
}

Arch parse_arch(std::string_view s) {
  if (s == "cifg_lstm" || s == "lstm") return Arch::cifg_lstm;
  if (s == "transformer") return Arch::transformer;
  throw ConfigError("unknown arch " + std::string(s));
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  using I = ParamSpec::Init;
  const std::size_t e = cfg.embed_dim;
  const std::size_t m = cfg.layer_size;
  std::vector<ParamSpec> specs;
  specs.push_back({"embedding", {cfg.vocab_size, e}, true, I::embedding, e});
  if (cfg.arch == Arch::cifg_lstm) {
    // CIFG cell with a projection back to the embedding width, so the output
    // layer can share the embedding matrix. Gate columns: forget|output|cell.
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "lstm_" + std::to_string(l) + "/";
      specs.push_back({p + "kernel", {2 * e, 3 * m}, true, I::weight, 2 * e});
      specs.push_back({p + "bias", {3 * m}, false, I::zero, 0});
      specs.push_back({p + "projection", {m, e}, true, I::weight, m});
    }
    return specs;
  }
  specs.push_back({"position_embedding", {cfg.max_seq_len, e}, false, I::embedding, e});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "block_" + std::to_string(l) + "/";
    specs.push_back({p + "ln_1/gain", {e}, true, I::one, 0});
    specs.push_back({p + "ln_1/bias", {e}, false, I::zero, 0});
    for (const char* w : {"query", "key", "value", "output"}) {
      specs.push_back({p + "attention/" + w, {e, e}, true, I::weight, e});
      specs.push_back({p + "attention/" + w + "_bias", {e}, false, I::zero, 0});
    }
    specs.push_back({p + "ln_2/gain", {e}, true, I::one, 0});
    specs.push_back({p + "ln_2/bias", {e}, false, I::zero, 0});
    specs.push_back({p + "mlp/dense_1", {e, m}, true, I::weight, e});
    specs.push_back({p + "mlp/dense_1_bias", {m}, false, I::zero, 0});
    specs.push_back({p + "mlp/dense_2", {m, e}, true, I::weight, m});
    specs.push_back({p + "mlp/dense_2_bias", {e}, false, I::zero, 0});
  }
  specs.push_back({"final_ln/gain", {e}, false, I::one, 0});
  specs.push_back({"final_ln/bias", {e}, false, I::zero, 0});
  return specs;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : parameter_specs(cfg)) n += shape_size(s.shape);
  return n;
}

ParameterSet init_params(const ModelConfig& cfg, Prng rng) {
  ParameterSet params;
  for (const auto& s : parameter_specs(cfg)) {
    Tensor t(s.shape, 0.0);
    switch (s.init) {
      case ParamSpec::Init::weight:
      case ParamSpec::Init::embedding: {
        Prng r = rng.derive(s.name);
        const double a = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
        for (double& v : t.values) v = r.uniform(-a, a);
        break;
      }
      case ParamSpec::Init::one:
        for (double& v : t.values) v = 1.0;
        break;
      case ParamSpec::Init::zero:
        break;
    }
    params.add(s.name, std::move(t), s.freezable);
  }
  return params;
}

std::vector<FreezableInfo> list_freezable(const ParameterSet& params) {
  std::vector<FreezableInfo> out;
  for (const auto& [name, p] : params)
    if (p.freezable) out.push_back({name, p.value.size()});
  return out;
}

namespace {

class Leaves {
 public:
  Leaves(ad::Tape& tape, const ParameterSet& params, bool want_grads) {
    for (const auto& [name, p] : params) {
      vars_.emplace(name, tape.leaf(p.value, want_grads && p.trainable));
    }
  }
  ad::Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw IndexError("model is missing parameter " + name);
    return it->second;
  }
  const std::map<std::string, ad::Var>& all() const { return vars_; }

 private:
  std::map<std::string, ad::Var> vars_;
};

struct Logits {
  ad::Var var;
  bool time_major;  // rows ordered t*batch + b instead of b*seq + t
};

Logits lstm_logits(ad::Tape& tape, const ModelConfig& cfg, const Leaves& w,
                   std::span<const int> tokens, std::size_t batch,
                   std::size_t seq) {
  const std::size_t e = cfg.embed_dim;
  const std::size_t m = cfg.layer_size;
  std::vector<int> ids(batch * seq);
  for (std::size_t t = 0; t < seq; ++t)
    for (std::size_t b = 0; b < batch; ++b) ids[t * batch + b] = tokens[b * seq + t];
  ad::Var layer_in = ad::gather_rows(w["embedding"], ids);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "lstm_" + std::to_string(l) + "/";
    const ad::Var kernel = w[p + "kernel"];
    const ad::Var bias = w[p + "bias"];
    const ad::Var proj = w[p + "projection"];
    ad::Var h = tape.constant(Tensor({batch, e}, 0.0));
    ad::Var c = tape.constant(Tensor({batch, m}, 0.0));
    std::vector<ad::Var> outs;
    outs.reserve(seq);
    for (std::size_t t = 0; t < seq; ++t) {
      ad::Var x = ad::slice_rows(layer_in, t * batch, batch);
      ad::Var z = ad::add_row(ad::matmul(ad::concat_cols(x, h), kernel), bias);
      ad::Var f = ad::sigmoid(ad::slice_cols(z, 0, m));
      ad::Var o = ad::sigmoid(ad::slice_cols(z, m, m));
      ad::Var g = ad::tanh(ad::slice_cols(z, 2 * m, m));
      c = ad::add(ad::mul(f, c), ad::mul(ad::one_minus(f), g));
      h = ad::matmul(ad::mul(o, ad::tanh(c)), proj);
      outs.push_back(h);
    }
    layer_in = ad::concat_rows(outs);
  }
  return {ad::matmul_bt(layer_in, w["embedding"]), true};
}

Logits transformer_logits(ad::Tape& tape, const ModelConfig& cfg,
                          const Leaves& w, std::span<const int> tokens,
                          std::size_t batch, std::size_t seq) {
  (void)tape;
  if (seq > cfg.max_seq_len) {
    throw DimensionError("sequence of " + std::to_string(seq) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  std::vector<int> positions(batch * seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) positions[b * seq + t] = static_cast<int>(t);
  ad::Var x = ad::add(ad::gather_rows(w["embedding"], tokens),
                      ad::gather_rows(w["position_embedding"], positions));
  auto dense = [&](ad::Var in, const std::string& weight, const std::string& bias) {
    return ad::add_row(ad::matmul(in, w[weight]), w[bias]);
  };
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "block_" + std::to_string(l) + "/";
    ad::Var h = ad::layer_norm(x, w[p + "ln_1/gain"], w[p + "ln_1/bias"], kLayerNormEps);
    const std::string a = p + "attention/";
    ad::Var q = dense(h, a + "query", a + "query_bias");
    ad::Var k = dense(h, a + "key", a + "key_bias");
    ad::Var v = dense(h, a + "value", a + "value_bias");
    ad::Var att = ad::causal_attention(q, k, v, batch, seq, cfg.num_heads);
    x = ad::add(x, dense(att, a + "output", a + "output_bias"));
    h = ad::layer_norm(x, w[p + "ln_2/gain"], w[p + "ln_2/bias"], kLayerNormEps);
    ad::Var mlp = ad::gelu(dense(h, p + "mlp/dense_1", p + "mlp/dense_1_bias"));
    x = ad::add(x, dense(mlp, p + "mlp/dense_2", p + "mlp/dense_2_bias"));
  }
  x = ad::layer_norm(x, w["final_ln/gain"], w["final_ln/bias"], kLayerNormEps);
  return {ad::matmul_bt(x, w["embedding"]), false};
}

Logits build_logits(ad::Tape& tape, const ModelConfig& cfg, const Leaves& w,
                    std::span<const int> tokens, std::size_t batch,
                    std::size_t seq) {
  if (tokens.size() != batch * seq) {
    throw DimensionError("token buffer does not match batch x seq");
  }
  if (batch == 0 || seq == 0) throw UsageError("empty batch");
  return cfg.arch == Arch::cifg_lstm
             ? lstm_logits(tape, cfg, w, tokens, batch, seq)
             : transformer_logits(tape, cfg, w, tokens, batch, seq);
}

// Targets and mask in the row order of the logits.
void ordered_targets(const Batch& b, bool time_major, std::vector<int>& targets,
                     std::vector<std::uint8_t>& mask) {
  if (!time_major) {
    targets = b.targets;
    mask = b.mask;
    return;
  }
  targets.resize(b.targets.size());
  mask.resize(b.mask.size());
  for (std::size_t r = 0; r < b.batch_size; ++r) {
    for (std::size_t t = 0; t < b.seq_len; ++t) {
      targets[t * b.batch_size + r] = b.targets[r * b.seq_len + t];
      mask[t * b.batch_size + r] = b.mask[r * b.seq_len + t];
    }
  }
}

}  // namespace

Tensor forward_logits(const ModelConfig& cfg, const ParameterSet& params,
                      std::span<const int> tokens, std::size_t batch,
                      std::size_t seq) {
  ad::Tape tape;
  Leaves w(tape, params, false);
  Logits lg = build_logits(tape, cfg, w, tokens, batch, seq);
  const Tensor& v = lg.var.value();
  const std::size_t vocab = cfg.vocab_size;
  Tensor out({batch, seq, vocab});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq; ++t) {
      const std::size_t src = lg.time_major ? t * batch + b : b * seq + t;
      std::copy_n(v.values.begin() + src * vocab, vocab,
                  out.values.begin() + (b * seq + t) * vocab);
    }
  }
  return out;
}

LossAndGrads loss_and_grads(const ModelConfig& cfg, const ParameterSet& params,
                            const Batch& batch) {
  if (batch.target_count() == 0) throw UsageError("batch has no targets");
  ad::Tape tape;
  Leaves w(tape, params, true);
  Logits lg = build_logits(tape, cfg, w, batch.inputs, batch.batch_size, batch.seq_len);
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  ordered_targets(batch, lg.time_major, targets, mask);
  ad::Var loss = ad::cross_entropy(lg.var, targets, mask);
  tape.backward(loss);
  LossAndGrads out;
  out.loss = loss.value()[0];
  out.targets = batch.target_count();
  for (const auto& [name, var] : w.all()) {
    if (params.at(name).trainable) out.grads.emplace(name, tape.grad(var));
  }
  return out;
}

double batch_loss(const ModelConfig& cfg, const ParameterSet& params,
                  const Batch& batch) {
  if (batch.target_count() == 0) throw UsageError("batch has no targets");
  ad::Tape tape;
  Leaves w(tape, params, false);
  Logits lg = build_logits(tape, cfg, w, batch.inputs, batch.batch_size, batch.seq_len);
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  ordered_targets(batch, lg.time_major, targets, mask);
  return ad::cross_entropy_sum(lg.var.value(), targets, mask) /
         static_cast<double>(batch.target_count());
}

double EvalResult::perplexity() const {
  if (targets == 0) throw UsageError("perplexity over an empty dataset");
  return std::exp(total_nats / static_cast<double>(targets));
}

EvalResult evaluate(const ModelConfig& cfg, const ParameterSet& params,
                    std::span<const Sequence> seqs, std::size_t seq_len,
                    std::size_t batch_size) {
  EvalResult r;
  for (const Batch& b : make_eval_batches(seqs, batch_size, seq_len)) {
    if (b.target_count() == 0) continue;
    ad::Tape tape;
    Leaves w(tape, params, false);
    Logits lg = build_logits(tape, cfg, w, b.inputs, b.batch_size, b.seq_len);
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
    ordered_targets(b, lg.time_major, targets, mask);
    r.total_nats += ad::cross_entropy_sum(lg.var.value(), targets, mask);
    r.targets += b.target_count();
  }
  return r;
}

double evaluate_perplexity(const ModelConfig& cfg, const ParameterSet& params,
                           std::span<const Sequence> seqs, std::size_t seq_len) {
  if (seqs.empty()) throw UsageError("perplexity over an empty dataset");
  return evaluate(cfg, params, seqs, seq_len).perplexity();
}

}  // namespace fedlm
