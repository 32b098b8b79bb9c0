#include "fedlm/fedcore.hpp"

#include <algorithm>
#include <numeric>

namespace fedlm {

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::mimelite: return "mimelite";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view s) {
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "fedprox") return Algorithm::fedprox;
  if (s == "mimelite") return Algorithm::mimelite;
  throw ConfigError("algorithm: unknown value " + std::string(s));
}

void FederatedConfig::validate() const {
  if (clients_per_round == 0) throw ConfigError("clients_per_round: must be >= 1");
  if (rounds < 0) throw ConfigError("rounds: must be >= 0");
  if (!(client_lr > 0.0)) throw ConfigError("client_lr: must be > 0");
  if (!(server.lr > 0.0)) throw ConfigError("server_lr: must be > 0");
  if (!(server.adam.beta1 >= 0.0 && server.adam.beta1 < 1.0)) {
    throw ConfigError("adam_beta1: must be in [0, 1)");
  }
  if (!(server.adam.beta2 >= 0.0 && server.adam.beta2 < 1.0)) {
    throw ConfigError("adam_beta2: must be in [0, 1)");
  }
  if (!(server.adam.eps > 0.0)) throw ConfigError("adam_eps: must be > 0");
  if (!(clipnorm >= 0.0)) throw ConfigError("clipnorm: must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size: must be >= 1");
  if (max_examples == 0) throw ConfigError("max_examples: must be >= 1");
  if (seq_len == 0) throw ConfigError("seq_len: must be >= 1");
  if (!(prox_mu >= 0.0)) throw ConfigError("prox_mu: must be >= 0");
  if (prox_mu != 0.0 && algorithm != Algorithm::fedprox) {
    throw ConfigError("prox_mu: only used by algorithm fedprox");
  }
  if (!(mime.lr > 0.0)) throw ConfigError("mime_lr: must be > 0");
  if (!(mime.eps > 0.0)) throw ConfigError("mime_eps: must be > 0");
  if (!(mime.initial_accumulator >= 0.0)) {
    throw ConfigError("mime_initial_accumulator: must be >= 0");
  }
  validate_quant(download, Direction::download, "download");
  validate_quant(upload, Direction::upload, "upload");
  if (pvt) pvt->validate();
  if (eval_period < 1) throw ConfigError("eval_period: must be >= 1");
}

std::vector<std::size_t> sample_clients(std::size_t population,
                                        std::size_t count, Prng rng) {
  if (count > population) {
    throw ConfigError("clients_per_round " + std::to_string(count) +
                      " exceeds population " + std::to_string(population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(population - i)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

void add_scaled(Tensor& acc, const Tensor& t, double w) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * t[i];
}

TensorMap weighted_mean(const std::vector<const TensorMap*>& maps,
                        const std::vector<double>& weights) {
  TensorMap sum;
  std::map<std::string, double> total;
  for (std::size_t c = 0; c < maps.size(); ++c) {
    for (const auto& [name, t] : *maps[c]) {
      auto [it, fresh] = sum.try_emplace(name, Tensor(t.shape));
      if (!fresh && it->second.shape != t.shape) {
        throw DimensionError("clients disagree on the shape of " + name);
      }
      add_scaled(it->second, t, weights[c]);
      total[name] += weights[c];
    }
  }
  for (auto& [name, t] : sum) {
    const double w = total[name];
    for (double& v : t.values) v /= w;
  }
  return sum;
}

std::vector<const ClientUpdate*> sorted_weighted(
    const std::vector<ClientUpdate>& updates) {
  std::vector<const ClientUpdate*> order;
  for (const auto& u : updates)
    if (u.weight > 0.0) order.push_back(&u);
  if (order.empty()) throw Error("round produced no weighted client update");
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) {
    return a->client_id < b->client_id;
  });
  return order;
}

}  // namespace

TensorMap aggregate(std::vector<ClientUpdate> updates) {
  auto order = sorted_weighted(updates);
  std::vector<const TensorMap*> maps;
  std::vector<double> weights;
  for (const auto* u : order) {
    maps.push_back(&u->delta);
    weights.push_back(u->weight);
  }
  return weighted_mean(maps, weights);
}

TensorMap aggregate_mime_grads(const std::vector<ClientUpdate>& updates) {
  auto order = sorted_weighted(updates);
  std::vector<const TensorMap*> maps;
  std::vector<double> weights;
  for (const auto* u : order) {
    maps.push_back(&u->mime_grad);
    weights.push_back(u->weight);
  }
  return weighted_mean(maps, weights);
}

ClientUpdate client_local_train(const ModelConfig& model,
                                const ParameterSet& received,
                                const ClientDataset& ds,
                                const FederatedConfig& cfg,
                                const AdagradState* mime, Prng rng) {
  ClientUpdate up;
  up.client_id = ds.client_id;
  up.trainable_params = received.trainable_count();
  if (ds.sequences.empty()) return up;
  if (cfg.algorithm == Algorithm::mimelite && !mime) {
    throw UsageError("mimelite client needs the server accumulator");
  }

  const auto batches = make_batches(ds, cfg.batch_size, cfg.seq_len,
                                    cfg.max_examples, rng.derive("batches"));
  ParameterSet params = received;

  if (cfg.algorithm == Algorithm::mimelite) {
    // Gradient statistics at the received model over the whole local pass.
    double tokens = 0.0;
    for (const auto& b : batches) {
      auto lg = loss_and_grads(model, received, b);
      const double n = static_cast<double>(lg.targets);
      for (auto& [name, g] : lg.grads) {
        auto [it, fresh] = up.mime_grad.try_emplace(name, Tensor(g.shape));
        add_scaled(it->second, g, n);
      }
      tokens += n;
    }
    for (auto& [name, g] : up.mime_grad)
      for (double& v : g.values) v /= tokens;
  }

  const SgdConfig sgd{cfg.client_lr};
  AdagradState local_mime;
  if (mime) {
    local_mime = *mime;
    local_mime.config.lr = cfg.client_lr;
  }
  for (const auto& b : batches) {
    auto lg = loss_and_grads(model, params, b);
    if (cfg.algorithm == Algorithm::fedprox && cfg.prox_mu != 0.0) {
      for (auto& [name, g] : lg.grads) {
        const Tensor& w = params.at(name).value;
        const Tensor& w0 = received.at(name).value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.prox_mu * (w[i] - w0[i]);
      }
    }
    TensorMap grads = clip_global_norm(std::move(lg.grads), cfg.clipnorm);
    if (cfg.algorithm == Algorithm::mimelite) {
      adagrad_apply_frozen(params, grads, local_mime);
    } else {
      sgd_step(params, grads, sgd);
    }
  }

  for (const auto& [name, p] : params) {
    if (!p.trainable) continue;
    Tensor d = p.value;
    const Tensor& w0 = received.at(name).value;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= w0[i];
    up.delta.emplace(name, std::move(d));
  }
  up.weight = static_cast<double>(std::min(ds.sequences.size(), cfg.max_examples));
  return up;
}

TensorMap transmit(const TensorMap& tensors, const QuantConfig& cfg,
                   const Prng& rng, bool passthrough) {
  if (passthrough && cfg.scheme == Scheme::none) return tensors;
  const io::Bytes wire = encode_payload(compress_map(tensors, cfg, rng));
  return decompress_map(decode_payload(wire), tensors);
}

ServerState make_federated_state(ParameterSet model, const FederatedConfig& cfg) {
  ServerOptimizerConfig opt = cfg.server;
  if (cfg.algorithm == Algorithm::mimelite) {
    opt.kind = ServerOptimizerKind::sgd;
    opt.lr = 1.0;
  }
  ServerState s = make_server_state(std::move(model), opt);
  if (cfg.algorithm == Algorithm::mimelite) {
    AdagradState a;
    a.config = cfg.mime;
    for (const auto& [name, p] : s.model) {
      a.accumulator.emplace(name, Tensor(p.value.shape, cfg.mime.initial_accumulator));
    }
    s.mime = std::move(a);
  }
  return s;
}

RoundMetrics run_round(ServerState& state, const FederatedConfig& cfg,
                       const ModelConfig& model,
                       std::span<const ClientDataset> population,
                       CommLedger& ledger) {
  const std::int64_t round = state.round + 1;
  const Prng round_rng = Prng(cfg.seed).derive("round", static_cast<std::uint64_t>(round));
  const auto picked = sample_clients(population.size(), cfg.clients_per_round,
                                     round_rng.derive("sample"));
  const TensorMap global = state.model.values();
  const double total_params = static_cast<double>(state.model.total_count());

  const std::size_t n = picked.size();
  std::vector<std::optional<ClientUpdate>> results(n);
  std::vector<std::string> errors(n);
  std::vector<std::size_t> trainable(n, 0);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    const ClientDataset& ds = population[picked[i]];
    const Prng crng = round_rng.derive("client", static_cast<std::uint64_t>(picked[i]));
    try {
      ParameterSet local = state.model;
      PvtMask mask = cfg.pvt ? select_mask(local, *cfg.pvt, crng.derive("pvt"))
                             : full_mask(local);
      trainable[i] = mask.trainable_count;
      TensorMap received =
          transmit(global, cfg.download, crng.derive("download"), cfg.codec_passthrough);
      for (auto& [name, p] : local) p.value = std::move(received.at(name));
      apply_mask(local, mask);

      ClientUpdate up = client_local_train(model, local, ds, cfg,
                                           state.mime ? &*state.mime : nullptr,
                                           crng.derive("train"));
      if (up.weight > 0.0) {
        up.delta = transmit(up.delta, cfg.upload, crng.derive("upload"),
                            cfg.codec_passthrough);
      }
      results[i] = std::move(up);
    } catch (const std::exception& e) {
      errors[i] = ds.client_id + ": " + e.what();
    }
  }

  RoundMetrics m;
  m.round = round;
  m.sampled = n;
  std::vector<ClientUpdate> updates;
  std::vector<ClientCharge> charges;
  double trainable_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ClientCharge c;
    c.client_id = population[picked[i]].client_id;
    c.download_bytes = cost_bytes(total_params, cfg.download.bits_per_value(), 1.0);
    if (results[i]) {
      const double t = static_cast<double>(trainable[i]);
      c.upload_bytes = cost_bytes(t, cfg.upload.bits_per_value(), 1.0);
      c.trainable_params = t;
      trainable_sum += t;
      ++m.completed;
      updates.push_back(std::move(*results[i]));
    } else {
      m.failures.push_back(errors[i]);
    }
    charges.push_back(std::move(c));
  }
  if (m.completed > 0) m.mean_trainable_params = trainable_sum / static_cast<double>(m.completed);

  const TensorMap mean_delta = aggregate(updates);
  TensorMap mime_grad;
  if (state.mime) mime_grad = aggregate_mime_grads(updates);
  server_apply(state, mean_delta);
  if (state.mime) adagrad_accumulate(*state.mime, mime_grad);
  ledger.record_round(round, charges);
  state.round = round;
  return m;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + io::format_double(r.test_perplexity) + "," +
           format_number(r.cum_download_bytes) + "," + format_number(r.cum_upload_bytes) +
           "," + format_number(r.trainable_params) + "\n";
  }
  return out;
}

std::vector<Sequence> pooled_sequences(std::span<const ClientDataset> clients) {
  std::vector<Sequence> all;
  for (const auto& c : clients)
    all.insert(all.end(), c.sequences.begin(), c.sequences.end());
  return all;
}

ExperimentResult run_experiment(const FederatedConfig& cfg,
                                const ModelConfig& model,
                                std::span<const ClientDataset> train,
                                std::span<const Sequence> test,
                                const TensorMap* warm_start,
                                const RoundObserver& observer) {
  cfg.validate();
  model.validate();
  if (cfg.clients_per_round > train.size()) {
    throw ConfigError("clients_per_round: " + std::to_string(cfg.clients_per_round) +
                      " exceeds the " + std::to_string(train.size()) + " clients");
  }
  ParameterSet init = init_params(model, Prng(cfg.seed).derive("init"));
  if (warm_start) assign_checkpoint(init, *warm_start);

  ExperimentResult res{{}, {}, make_federated_state(std::move(init), cfg)};
  auto eval_row = [&](double trainable) {
    MetricsRow r;
    r.round = res.state.round;
    r.test_perplexity = evaluate_perplexity(model, res.state.model, test, cfg.seq_len);
    r.cum_download_bytes = res.ledger.cum_download_per_client();
    r.cum_upload_bytes = res.ledger.cum_upload_per_client();
    r.trainable_params = trainable;
    res.rows.push_back(r);
  };
  eval_row(static_cast<double>(res.state.model.total_count()));
  for (std::int64_t r = 1; r <= cfg.rounds; ++r) {
    RoundMetrics m = run_round(res.state, cfg, model, train, res.ledger);
    if (observer) observer(m);
    if (r % cfg.eval_period == 0 || r == cfg.rounds) eval_row(m.mean_trainable_params);
  }
  return res;
}

PretrainResult centralized_pretrain(const ModelConfig& model,
                                    std::span<const ClientDataset> corpus,
                                    std::int64_t steps, const AdamConfig& adam,
                                    std::size_t batch_size, std::size_t seq_len,
                                    Prng rng) {
  if (steps < 0) throw ConfigError("pretrain_steps: must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size: must be >= 1");
  PretrainResult res{init_params(model, rng.derive("init")), {}};
  if (steps == 0) return res;
  const std::vector<Sequence> pool = pooled_sequences(corpus);
  if (pool.empty()) throw ConfigError("pretraining corpus is empty");

  AdamState state;
  state.config = adam;
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t pos = order.size();
  std::uint64_t epoch = 0;
  std::vector<const Sequence*> chunk;
  for (std::int64_t s = 0; s < steps; ++s) {
    chunk.clear();
    while (chunk.size() < batch_size) {
      if (pos == order.size()) {
        rng.derive("epoch", epoch++).shuffle(order);
        pos = 0;
        if (!chunk.empty() && order.size() < batch_size) break;
      }
      chunk.push_back(&pool[order[pos++]]);
    }
    const Batch b = make_batch(chunk, seq_len);
    auto lg = loss_and_grads(model, res.params, b);
    res.losses.push_back(lg.loss);
    adam_step(res.params, lg.grads, state);
  }
  return res;
}

}  // namespace fedlm
