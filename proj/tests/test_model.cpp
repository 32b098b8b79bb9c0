#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fedlm/model.hpp"
#include "fedlm/optim.hpp"
#include "support/finite_diff.hpp"

using namespace fedlm;

namespace {

ModelConfig tiny(Arch arch, std::size_t vocab, std::size_t e, std::size_t m,
                 std::size_t layers, std::size_t heads) {
  ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab;
  c.embed_dim = e;
  c.layer_size = m;
  c.num_layers = layers;
  c.num_heads = heads;
  c.max_seq_len = 8;
  return c;
}

Batch random_batch(std::size_t vocab, std::size_t rows, std::size_t len, Prng rng) {
  std::vector<Sequence> seqs;
  for (std::size_t r = 0; r < rows; ++r) {
    Sequence s{Vocab::kBos};
    const std::size_t n = 1 + rng.below(len);
    for (std::size_t i = 0; i < n; ++i)
      s.push_back(static_cast<int>(Vocab::kNumSpecial + rng.below(vocab - Vocab::kNumSpecial)));
    s.push_back(Vocab::kEos);
    seqs.push_back(s);
  }
  std::vector<const Sequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return make_batch(ptrs, len);
}

ParameterSet zeroed(ParameterSet p) {
  for (auto& [name, param] : p)
    for (double& v : param.value.values) v = 0.0;
  return p;
}

double grad_check(const ModelConfig& cfg, std::uint64_t seed) {
  Prng rng(seed);
  ParameterSet params = init_params(cfg, rng.derive("init"));
  // Move gains and biases off their trivial initial values.
  Prng jitter = rng.derive("jitter");
  for (auto& [name, p] : params)
    for (double& v : p.value.values) v += 0.1 * jitter.normal();
  const Batch batch = random_batch(cfg.vocab_size, 3, 6, rng.derive("batch"));
  const TensorMap analytic = loss_and_grads(cfg, params, batch).grads;
  auto f = [&](const TensorMap& m) {
    ParameterSet q = params;
    for (const auto& [n, t] : m) q.at(n).value = t;
    return batch_loss(cfg, q, batch);
  };
  return testing::max_rel_error(analytic, testing::finite_diff(f, params.values(), 1e-5));
}

}  // namespace

TEST_CASE("preset parameter counts are within 2% of the nominal sizes") {
  struct Row {
    const char* name;
    double nominal;
  };
  for (const Row& r : {Row{"small_lstm", 4.7e6}, Row{"large_lstm", 18.8e6},
                       Row{"small_transformer", 4.1e6}, Row{"large_transformer", 21.0e6}}) {
    const double n = static_cast<double>(parameter_count(model_preset(r.name)));
    INFO(r.name << " has " << n);
    CHECK(std::abs(n - r.nominal) / r.nominal < 0.02);
  }
  // CIFG with projection, tied output: V*E + 2E*3H + 3H + H*E.
  CHECK(parameter_count(model_preset("large_lstm")) ==
        4000 * 1024 + 2 * 1024 * 3 * 2048 + 3 * 2048 + 2048 * 1024);
}

TEST_CASE("init is deterministic and fan-in scaled") {
  const ModelConfig cfg = model_preset("desk_transformer");
  CHECK(init_params(cfg, Prng(3)) == init_params(cfg, Prng(3)));
  CHECK_FALSE(init_params(cfg, Prng(3)) == init_params(cfg, Prng(4)));
  const ParameterSet p = init_params(cfg, Prng(3));
  for (const auto& [name, param] : p) {
    if (name.find("bias") != std::string::npos) {
      for (double v : param.value.values) CHECK(v == 0.0);
    }
  }
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : p.at("block_0/attention/query").value.values) CHECK(std::abs(v) <= bound);
}

TEST_CASE("freezable classification") {
  const ParameterSet lstm = init_params(model_preset("desk_lstm"), Prng(1));
  std::vector<std::string> names;
  std::size_t freezable_total = 0;
  for (const auto& f : list_freezable(lstm)) {
    names.push_back(f.name);
    freezable_total += f.count;
  }
  CHECK(names == std::vector<std::string>{"embedding", "lstm_0/kernel", "lstm_0/projection"});
  CHECK(freezable_total + lstm.at("lstm_0/bias").value.size() == lstm.total_count());

  const ParameterSet tr = init_params(model_preset("large_transformer"), Prng(1));
  std::size_t count = 0;
  for (const auto& f : list_freezable(tr)) {
    ++count;
    CHECK(f.name.find("bias") == std::string::npos);
  }
  // embedding + 6 blocks x (4 attention + 2 mlp + 2 gains)
  CHECK(count == 1 + 6 * 8);

  ParameterSet biases;
  biases.add("b1", Tensor({3}), false);
  biases.add("b2", Tensor({2}), false);
  CHECK(list_freezable(biases).empty());
}

TEST_CASE("zero weights give zero logits and loss ln V") {
  for (const char* preset : {"desk_lstm", "desk_transformer"}) {
    const ModelConfig cfg = model_preset(preset);
    const ParameterSet p = zeroed(init_params(cfg, Prng(1)));
    const std::vector<int> tokens{2, 5, 9, 4, 2, 7, 7, 3};
    const Tensor logits = forward_logits(cfg, p, tokens, 2, 4);
    CHECK(logits.shape == Shape{2, 4, cfg.vocab_size});
    for (double v : logits.values) CHECK(v == 0.0);
    const Batch b = random_batch(cfg.vocab_size, 4, 10, Prng(2));
    CHECK(loss_and_grads(cfg, p, b).loss ==
          doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-14));
  }
  ModelConfig v256 = model_preset("desk_lstm");
  v256.vocab_size = 256;
  const std::vector<Sequence> data{{2, 10, 11, 3}, {2, 40, 3}};
  CHECK(evaluate_perplexity(v256, zeroed(init_params(v256, Prng(1))), data, 30) ==
        doctest::Approx(256.0).epsilon(1e-12));
}

TEST_CASE("logits are causal") {
  for (const char* preset : {"desk_lstm", "desk_transformer"}) {
    const ModelConfig cfg = model_preset(preset);
    const ParameterSet p = init_params(cfg, Prng(5));
    std::vector<int> a{2, 17, 30, 41, 52, 63};
    std::vector<int> b = a;
    b[4] = 99;
    b[5] = 7;
    const Tensor la = forward_logits(cfg, p, a, 1, 6);
    const Tensor lb = forward_logits(cfg, p, b, 1, 6);
    const std::size_t v = cfg.vocab_size;
    for (std::size_t i = 0; i < 4 * v; ++i) CHECK(la[i] == lb[i]);
    bool later_differs = false;
    for (std::size_t i = 4 * v; i < 6 * v; ++i) later_differs |= la[i] != lb[i];
    CHECK(later_differs);
  }
}

TEST_CASE("token out of range is an error") {
  const ModelConfig cfg = model_preset("desk_lstm");
  const ParameterSet p = init_params(cfg, Prng(1));
  const std::vector<int> tokens{2, 500};
  CHECK_THROWS_AS(forward_logits(cfg, p, tokens, 1, 2), IndexError);
}

TEST_CASE("frozen tensors have no gradient") {
  const ModelConfig cfg = model_preset("desk_transformer");
  ParameterSet p = init_params(cfg, Prng(1));
  p.at("embedding").trainable = false;
  p.at("block_1/mlp/dense_1").trainable = false;
  const auto lg = loss_and_grads(cfg, p, random_batch(cfg.vocab_size, 2, 5, Prng(3)));
  CHECK(lg.grads.count("embedding") == 0);
  CHECK(lg.grads.count("block_1/mlp/dense_1") == 0);
  CHECK(lg.grads.size() == p.size() - 2);
}

TEST_CASE("empty batch or dataset is an error") {
  const ModelConfig cfg = model_preset("desk_lstm");
  const ParameterSet p = init_params(cfg, Prng(1));
  Batch empty;
  CHECK_THROWS(loss_and_grads(cfg, p, empty));
  CHECK_THROWS_AS(evaluate_perplexity(cfg, p, {}, 30), UsageError);
  EvalResult perfect{0.0, 10};
  CHECK(perfect.perplexity() == 1.0);
}

TEST_CASE("gradients match finite differences") {
  CHECK(grad_check(tiny(Arch::cifg_lstm, 11, 3, 4, 1, 1), 1) < 1e-4);
  CHECK(grad_check(tiny(Arch::cifg_lstm, 9, 2, 3, 2, 1), 2) < 1e-4);
  CHECK(grad_check(tiny(Arch::cifg_lstm, 13, 4, 2, 1, 1), 3) < 1e-4);
  CHECK(grad_check(tiny(Arch::transformer, 11, 4, 6, 1, 2), 4) < 1e-4);
  CHECK(grad_check(tiny(Arch::transformer, 9, 6, 5, 2, 3), 5) < 1e-4);
  CHECK(grad_check(tiny(Arch::transformer, 12, 4, 4, 2, 1), 6) < 1e-4);
}

TEST_CASE("centralized adam descends on a memorization task") {
  const ModelConfig cfg = model_preset("desk_transformer");
  ParameterSet p = init_params(cfg, Prng(8));
  const Batch b = random_batch(cfg.vocab_size, 4, 12, Prng(9));
  AdamState s;
  s.config.lr = 0.01;
  const double first = loss_and_grads(cfg, p, b).loss;
  for (int i = 0; i < 50; ++i) adam_step(p, loss_and_grads(cfg, p, b).grads, s);
  CHECK(loss_and_grads(cfg, p, b).loss < 0.5 * first);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const ModelConfig cfg = model_preset("desk_transformer");
  const ParameterSet p = init_params(cfg, Prng(12));
  const auto bytes = encode_checkpoint(p);
  CHECK(bytes.size() > 6);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "FEDLM1");
  const TensorMap m = decode_checkpoint(bytes);
  CHECK(m == p.values());
  CHECK(encode_checkpoint([&] {
          ParameterSet q = init_params(cfg, Prng(99));
          assign_checkpoint(q, m);
          return q;
        }()) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "fedlm_test_model.ckpt";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path) == m);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), DecodeError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(bad), DecodeError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), DecodeError);

  ParameterSet other = init_params(model_preset("desk_lstm"), Prng(1));
  CHECK_THROWS_AS(assign_checkpoint(other, m), ConfigError);
}
