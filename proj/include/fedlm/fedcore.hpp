#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlm/compress.hpp"
#include "fedlm/data.hpp"
#include "fedlm/ledger.hpp"
#include "fedlm/model.hpp"
#include "fedlm/optim.hpp"
#include "fedlm/pvt.hpp"

namespace fedlm {

enum class Algorithm { fedavg, fedprox, mimelite };

std::string_view algorithm_name(Algorithm a);
Algorithm parse_algorithm(std::string_view s);

struct FederatedConfig {
  std::size_t clients_per_round = 10;
  std::int64_t rounds = 100;
  double client_lr = 0.5;
  ServerOptimizerConfig server;  // ignored by mimelite, which averages
  double clipnorm = 0.0;
  std::size_t batch_size = 16;
  std::size_t max_examples = 1200;
  std::size_t seq_len = 30;
  Algorithm algorithm = Algorithm::fedavg;
  double prox_mu = 0.0;
  AdagradConfig mime;  // base optimizer for mimelite
  QuantConfig download;
  QuantConfig upload;
  std::optional<PvtConfig> pvt;
  std::int64_t eval_period = 10;
  std::uint64_t seed = 0;
  // Skip encode/decode entirely when a direction uses scheme none.
  bool codec_passthrough = false;

  void validate() const;
};

// C distinct indices in [0, population), uniform without replacement, sorted.
std::vector<std::size_t> sample_clients(std::size_t population, std::size_t count,
                                        Prng rng);

struct ClientUpdate {
  std::string client_id;
  TensorMap delta;    // trainable tensors only
  double weight = 0;  // examples trained
  std::size_t trainable_params = 0;
  // mimelite: token-weighted mean gradient at the received model.
  TensorMap mime_grad;
};

// One local epoch. `received` carries the mask in its trainable flags.
ClientUpdate client_local_train(const ModelConfig& model,
                                const ParameterSet& received,
                                const ClientDataset& ds,
                                const FederatedConfig& cfg,
                                const AdagradState* mime, Prng rng);

// Per tensor, example-weighted mean over the clients that trained it,
// reduced in client-id order. No weighted update is an Error.
TensorMap aggregate(std::vector<ClientUpdate> updates);
TensorMap aggregate_mime_grads(const std::vector<ClientUpdate>& updates);

// Applies the codec and decodes what the receiver would see.
TensorMap transmit(const TensorMap& tensors, const QuantConfig& cfg,
                   const Prng& rng, bool passthrough);

struct RoundMetrics {
  std::int64_t round = 0;  // index of the completed round, 1-based
  std::size_t sampled = 0;
  std::size_t completed = 0;
  double mean_trainable_params = 0.0;
  std::vector<std::string> failures;  // "client: message"
};

// The server state for `cfg`: mimelite averages with SGD lr 1 and carries an
// Adagrad accumulator.
ServerState make_federated_state(ParameterSet model, const FederatedConfig& cfg);

RoundMetrics run_round(ServerState& state, const FederatedConfig& cfg,
                       const ModelConfig& model,
                       std::span<const ClientDataset> population,
                       CommLedger& ledger);

struct MetricsRow {
  std::int64_t round = 0;
  double test_perplexity = 0.0;
  double cum_download_bytes = 0.0;  // per participating client
  double cum_upload_bytes = 0.0;
  double trainable_params = 0.0;    // mean over the round's clients

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr std::string_view kMetricsHeader =
    "round,test_perplexity,cum_download_bytes,cum_upload_bytes,trainable_params";

std::string metrics_csv(std::span<const MetricsRow> rows);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  CommLedger ledger;
  ServerState state;
};

using RoundObserver = std::function<void(const RoundMetrics&)>;

// Evaluates at round 0, every eval_period rounds and after the last round.
ExperimentResult run_experiment(const FederatedConfig& cfg,
                                const ModelConfig& model,
                                std::span<const ClientDataset> train,
                                std::span<const Sequence> test,
                                const TensorMap* warm_start = nullptr,
                                const RoundObserver& observer = {});

struct PretrainResult {
  ParameterSet params;
  std::vector<double> losses;  // one per step
};

// Minibatch Adam over the pooled sequences of `corpus`, reshuffled each epoch.
PretrainResult centralized_pretrain(const ModelConfig& model,
                                    std::span<const ClientDataset> corpus,
                                    std::int64_t steps, const AdamConfig& adam,
                                    std::size_t batch_size, std::size_t seq_len,
                                    Prng rng);

std::vector<Sequence> pooled_sequences(std::span<const ClientDataset> clients);

}  // namespace fedlm
