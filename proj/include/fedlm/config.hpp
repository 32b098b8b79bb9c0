#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedlm/data.hpp"
#include "fedlm/fedcore.hpp"
#include "fedlm/model.hpp"

namespace fedlm {

enum class DataSource { synthetic, partition };

struct ExperimentConfig {
  std::string model_preset = "desk_lstm";
  ModelConfig model = fedlm::model_preset("desk_lstm");

  DataSource data_source = DataSource::synthetic;
  std::string train_partition;  // partition source
  std::string test_partition;
  SynthConfig synth;            // synthetic source; vocab_size mirrors model
  std::uint64_t synth_seed = 1;

  FederatedConfig fed;

  std::int64_t pretrain_steps = 0;
  AdamConfig pretrain_adam{5e-5};
  std::size_t pretrain_batch_size = 16;

  std::string warm_start;  // checkpoint path, empty for a cold start
  std::string output_dir = "out";

  void validate() const;
};

// Flat JSON object. Unknown keys, type mismatches and out-of-range values
// raise ConfigError naming the key.
ExperimentConfig parse_config_text(std::string_view json_text);
ExperimentConfig parse_config(const std::filesystem::path& path);
// Every key with its resolved value, in a fixed order.
std::string config_to_json(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

struct LoadedData {
  Vocab vocab;
  std::vector<ClientDataset> train;
  std::vector<Sequence> test;
};

// Synthetic corpora are drawn from Prng(synth_seed); partition files build
// the vocabulary from the training side only.
LoadedData load_data(const ExperimentConfig& cfg);

}  // namespace fedlm
