#include "fedlm/config.hpp"

#include <json.hpp>

#include <functional>
#include <set>

#include "fedlm/io.hpp"

namespace fedlm {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

template <typename T>
T get_as(const json& v, const std::string& key, const char* type_name) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key + ": expected " + type_name + ", got " + v.dump());
  }
}

double get_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + ": expected a number, got " + v.dump());
  return v.get<double>();
}

std::uint64_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 &&
                                 !v.is_number_unsigned())) {
    throw ConfigError(key + ": expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

std::int64_t get_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer, got " + v.dump());
  return v.get<std::int64_t>();
}

bool get_bool(const json& v, const std::string& key) {
  return get_as<bool>(v, key, "true or false");
}

std::string get_string(const json& v, const std::string& key) {
  return get_as<std::string>(v, key, "a string");
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

struct Key {
  std::string name;
  Setter set;
};

void quant_keys(std::vector<Key>& keys, const std::string& dir,
                QuantConfig FederatedConfig::*member) {
  keys.push_back({dir + "_scheme", [member](auto& c, const json& v, const std::string& k) {
                    try {
                      (c.fed.*member).scheme = parse_scheme(get_string(v, k));
                    } catch (const ConfigError& e) {
                      throw ConfigError(k + ": " + e.what());
                    }
                    if ((c.fed.*member).scheme == Scheme::terngrad)
                      (c.fed.*member).bits = kTernaryBits;
                  }});
  keys.push_back({dir + "_bits", [member](auto& c, const json& v, const std::string& k) {
                    (c.fed.*member).bits = get_real(v, k);
                  }});
  keys.push_back({dir + "_zero_center", [member](auto& c, const json& v, const std::string& k) {
                    (c.fed.*member).zero_center = get_bool(v, k);
                  }});
  keys.push_back({dir + "_linf_clip", [member](auto& c, const json& v, const std::string& k) {
                    (c.fed.*member).linf_clip = get_bool(v, k);
                  }});
  keys.push_back({dir + "_clip_std", [member](auto& c, const json& v, const std::string& k) {
                    (c.fed.*member).clip_std = get_real(v, k);
                  }});
}

// Application order matters: the model preset precedes its overrides and a
// scheme precedes its bit width.
const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    auto count = [](std::size_t ExperimentConfig::*m) {
      return [m](ExperimentConfig& c, const json& v, const std::string& key) {
        c.*m = get_count(v, key);
      };
    };
    k.push_back({"model", [](auto& c, const json& v, const std::string& key) {
                   c.model_preset = get_string(v, key);
                   try {
                     c.model = model_preset(c.model_preset);
                   } catch (const Error& e) {
                     throw ConfigError(key + ": " + e.what());
                   }
                 }});
    k.push_back({"arch", [](auto& c, const json& v, const std::string& key) {
                   try {
                     c.model.arch = parse_arch(get_string(v, key));
                   } catch (const Error& e) {
                     throw ConfigError(key + ": " + e.what());
                   }
                   c.model.nominal_params = 0.0;
                 }});
    auto dim = [](std::size_t ModelConfig::*m) {
      return [m](ExperimentConfig& c, const json& v, const std::string& key) {
        c.model.*m = get_count(v, key);
        c.model.nominal_params = 0.0;
      };
    };
    k.push_back({"vocab_size", dim(&ModelConfig::vocab_size)});
    k.push_back({"embed_dim", dim(&ModelConfig::embed_dim)});
    k.push_back({"layer_size", dim(&ModelConfig::layer_size)});
    k.push_back({"num_layers", dim(&ModelConfig::num_layers)});
    k.push_back({"num_heads", dim(&ModelConfig::num_heads)});

    k.push_back({"data_source", [](auto& c, const json& v, const std::string& key) {
                   const std::string s = get_string(v, key);
                   if (s == "synthetic") c.data_source = DataSource::synthetic;
                   else if (s == "partition") c.data_source = DataSource::partition;
                   else throw ConfigError(key + ": expected synthetic or partition, got " + s);
                 }});
    k.push_back({"train_partition", [](auto& c, const json& v, const std::string& key) {
                   c.train_partition = get_string(v, key);
                 }});
    k.push_back({"test_partition", [](auto& c, const json& v, const std::string& key) {
                   c.test_partition = get_string(v, key);
                 }});
    auto synth = [](std::size_t SynthConfig::*m) {
      return [m](ExperimentConfig& c, const json& v, const std::string& key) {
        c.synth.*m = get_count(v, key);
      };
    };
    k.push_back({"synth_num_clients", synth(&SynthConfig::num_clients)});
    k.push_back({"synth_seqs_per_client", synth(&SynthConfig::seqs_per_client)});
    k.push_back({"synth_test_seqs_per_client", synth(&SynthConfig::test_seqs_per_client)});
    k.push_back({"synth_min_len", synth(&SynthConfig::min_len)});
    k.push_back({"synth_max_len", synth(&SynthConfig::max_len)});
    k.push_back({"synth_fanout", synth(&SynthConfig::fanout)});
    k.push_back({"synth_skew", [](auto& c, const json& v, const std::string& key) {
                   c.synth.skew = get_real(v, key);
                 }});
    k.push_back({"synth_world_seed", [](auto& c, const json& v, const std::string& key) {
                   c.synth.world_seed = get_count(v, key);
                 }});
    k.push_back({"synth_seed", [](auto& c, const json& v, const std::string& key) {
                   c.synth_seed = get_count(v, key);
                 }});

    k.push_back({"clients_per_round", [](auto& c, const json& v, const std::string& key) {
                   c.fed.clients_per_round = get_count(v, key);
                 }});
    k.push_back({"rounds", [](auto& c, const json& v, const std::string& key) {
                   c.fed.rounds = get_int(v, key);
                 }});
    k.push_back({"client_lr", [](auto& c, const json& v, const std::string& key) {
                   c.fed.client_lr = get_real(v, key);
                 }});
    k.push_back({"server_optimizer", [](auto& c, const json& v, const std::string& key) {
                   const std::string s = get_string(v, key);
                   if (s == "adam") c.fed.server.kind = ServerOptimizerKind::adam;
                   else if (s == "sgd") c.fed.server.kind = ServerOptimizerKind::sgd;
                   else throw ConfigError(key + ": expected adam or sgd, got " + s);
                 }});
    k.push_back({"server_lr", [](auto& c, const json& v, const std::string& key) {
                   c.fed.server.lr = get_real(v, key);
                 }});
    k.push_back({"adam_beta1", [](auto& c, const json& v, const std::string& key) {
                   c.fed.server.adam.beta1 = get_real(v, key);
                 }});
    k.push_back({"adam_beta2", [](auto& c, const json& v, const std::string& key) {
                   c.fed.server.adam.beta2 = get_real(v, key);
                 }});
    k.push_back({"adam_eps", [](auto& c, const json& v, const std::string& key) {
                   c.fed.server.adam.eps = get_real(v, key);
                 }});
    k.push_back({"clipnorm", [](auto& c, const json& v, const std::string& key) {
                   c.fed.clipnorm = get_real(v, key);
                 }});
    k.push_back({"batch_size", [](auto& c, const json& v, const std::string& key) {
                   c.fed.batch_size = get_count(v, key);
                 }});
    k.push_back({"max_examples", [](auto& c, const json& v, const std::string& key) {
                   c.fed.max_examples = get_count(v, key);
                 }});
    k.push_back({"seq_len", [](auto& c, const json& v, const std::string& key) {
                   c.fed.seq_len = get_count(v, key);
                 }});
    k.push_back({"algorithm", [](auto& c, const json& v, const std::string& key) {
                   try {
                     c.fed.algorithm = parse_algorithm(get_string(v, key));
                   } catch (const ConfigError&) {
                     throw ConfigError(key + ": expected fedavg, fedprox or mimelite, got " +
                                       v.dump());
                   }
                 }});
    k.push_back({"prox_mu", [](auto& c, const json& v, const std::string& key) {
                   c.fed.prox_mu = get_real(v, key);
                 }});
    k.push_back({"mime_eps", [](auto& c, const json& v, const std::string& key) {
                   c.fed.mime.eps = get_real(v, key);
                 }});
    k.push_back({"mime_initial_accumulator", [](auto& c, const json& v, const std::string& key) {
                   c.fed.mime.initial_accumulator = get_real(v, key);
                 }});
    quant_keys(k, "download", &FederatedConfig::download);
    quant_keys(k, "upload", &FederatedConfig::upload);
    k.push_back({"pvt_fraction", [](auto& c, const json& v, const std::string& key) {
                   const double f = get_real(v, key);
                   c.fed.pvt = PvtConfig{f};
                 }});
    k.push_back({"eval_period", [](auto& c, const json& v, const std::string& key) {
                   c.fed.eval_period = get_int(v, key);
                 }});
    k.push_back({"seed", [](auto& c, const json& v, const std::string& key) {
                   c.fed.seed = get_count(v, key);
                 }});
    k.push_back({"codec_passthrough", [](auto& c, const json& v, const std::string& key) {
                   c.fed.codec_passthrough = get_bool(v, key);
                 }});
    k.push_back({"pretrain_steps", [](auto& c, const json& v, const std::string& key) {
                   c.pretrain_steps = get_int(v, key);
                 }});
    k.push_back({"pretrain_lr", [](auto& c, const json& v, const std::string& key) {
                   c.pretrain_adam.lr = get_real(v, key);
                 }});
    k.push_back({"pretrain_batch_size", count(&ExperimentConfig::pretrain_batch_size)});
    k.push_back({"warm_start", [](auto& c, const json& v, const std::string& key) {
                   c.warm_start = get_string(v, key);
                 }});
    k.push_back({"output_dir", [](auto& c, const json& v, const std::string& key) {
                   c.output_dir = get_string(v, key);
                 }});
    return k;
  }();
  return keys;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (model.arch == Arch::transformer && model.max_seq_len < fed.seq_len) {
    throw ConfigError("seq_len: exceeds the model's positional table");
  }
  fed.validate();
  if (data_source == DataSource::partition) {
    if (train_partition.empty()) throw ConfigError("train_partition: required for partition data");
    if (test_partition.empty()) throw ConfigError("test_partition: required for partition data");
  } else {
    if (!(synth.skew >= 0.0 && synth.skew <= 1.0)) throw ConfigError("synth_skew: must be in [0, 1]");
    if (synth.num_clients == 0) throw ConfigError("synth_num_clients: must be >= 1");
    if (synth.min_len == 0 || synth.min_len > synth.max_len) {
      throw ConfigError("synth_min_len: need 1 <= synth_min_len <= synth_max_len");
    }
    if (synth.fanout == 0) throw ConfigError("synth_fanout: must be >= 1");
    if (synth.test_seqs_per_client == 0) {
      throw ConfigError("synth_test_seqs_per_client: must be >= 1");
    }
    if (fed.clients_per_round > synth.num_clients) {
      throw ConfigError("clients_per_round: exceeds synth_num_clients");
    }
  }
  if (pretrain_steps < 0) throw ConfigError("pretrain_steps: must be >= 0");
  if (!(pretrain_adam.lr > 0.0)) throw ConfigError("pretrain_lr: must be > 0");
  if (pretrain_batch_size == 0) throw ConfigError("pretrain_batch_size: must be >= 1");
}

ExperimentConfig parse_config_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> known;
  for (const auto& k : key_table()) known.insert(k.name);
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError(key + ": unknown config key");
  }
  ExperimentConfig cfg;
  for (const auto& k : key_table()) {
    if (auto it = doc.find(k.name); it != doc.end()) k.set(cfg, *it, k.name);
  }
  cfg.model.max_seq_len = std::max(cfg.model.max_seq_len, cfg.fed.seq_len);
  cfg.synth.vocab_size = cfg.model.vocab_size;
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const Error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  return parse_config_text(text);
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["model"] = c.model_preset;
  j["arch"] = std::string(arch_name(c.model.arch));
  j["vocab_size"] = c.model.vocab_size;
  j["embed_dim"] = c.model.embed_dim;
  j["layer_size"] = c.model.layer_size;
  j["num_layers"] = c.model.num_layers;
  j["num_heads"] = c.model.num_heads;
  j["data_source"] = c.data_source == DataSource::synthetic ? "synthetic" : "partition";
  j["train_partition"] = c.train_partition;
  j["test_partition"] = c.test_partition;
  j["synth_num_clients"] = c.synth.num_clients;
  j["synth_seqs_per_client"] = c.synth.seqs_per_client;
  j["synth_test_seqs_per_client"] = c.synth.test_seqs_per_client;
  j["synth_min_len"] = c.synth.min_len;
  j["synth_max_len"] = c.synth.max_len;
  j["synth_fanout"] = c.synth.fanout;
  j["synth_skew"] = c.synth.skew;
  j["synth_world_seed"] = c.synth.world_seed;
  j["synth_seed"] = c.synth_seed;
  j["clients_per_round"] = c.fed.clients_per_round;
  j["rounds"] = c.fed.rounds;
  j["client_lr"] = c.fed.client_lr;
  j["server_optimizer"] = c.fed.server.kind == ServerOptimizerKind::adam ? "adam" : "sgd";
  j["server_lr"] = c.fed.server.lr;
  j["adam_beta1"] = c.fed.server.adam.beta1;
  j["adam_beta2"] = c.fed.server.adam.beta2;
  j["adam_eps"] = c.fed.server.adam.eps;
  j["clipnorm"] = c.fed.clipnorm;
  j["batch_size"] = c.fed.batch_size;
  j["max_examples"] = c.fed.max_examples;
  j["seq_len"] = c.fed.seq_len;
  j["algorithm"] = std::string(algorithm_name(c.fed.algorithm));
  j["prox_mu"] = c.fed.prox_mu;
  j["mime_eps"] = c.fed.mime.eps;
  j["mime_initial_accumulator"] = c.fed.mime.initial_accumulator;
  for (auto [dir, q] : {std::pair{"download", &c.fed.download},
                        std::pair{"upload", &c.fed.upload}}) {
    const std::string d = dir;
    j[d + "_scheme"] = std::string(scheme_name(q->scheme));
    j[d + "_bits"] = q->bits;
    j[d + "_zero_center"] = q->zero_center;
    j[d + "_linf_clip"] = q->linf_clip;
    j[d + "_clip_std"] = q->clip_std;
  }
  j["pvt_fraction"] = c.fed.pvt ? c.fed.pvt->fraction : 1.0;
  j["eval_period"] = c.fed.eval_period;
  j["seed"] = c.fed.seed;
  j["codec_passthrough"] = c.fed.codec_passthrough;
  j["pretrain_steps"] = c.pretrain_steps;
  j["pretrain_lr"] = c.pretrain_adam.lr;
  j["pretrain_batch_size"] = c.pretrain_batch_size;
  j["warm_start"] = c.warm_start;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.data_source == DataSource::synthetic) {
    SynthConfig s = cfg.synth;
    s.vocab_size = cfg.model.vocab_size;
    SynthCorpus corpus = synth_generate(s, Prng(cfg.synth_seed));
    d.vocab = std::move(corpus.vocab);
    d.train = std::move(corpus.train);
    d.test = pooled_sequences(corpus.test);
    return d;
  }
  const auto train_raw = load_partition(cfg.train_partition);
  const auto test_raw = load_partition(cfg.test_partition);
  std::vector<std::string> lines;
  for (const auto& c : train_raw) lines.insert(lines.end(), c.lines.begin(), c.lines.end());
  d.vocab = build_vocab(lines, cfg.model.vocab_size);
  if (d.vocab.size() > cfg.model.vocab_size) {
    throw ConfigError("vocab_size: built vocabulary exceeds the model");
  }
  d.train = tokenize_partition(train_raw, d.vocab);
  d.test = pooled_sequences(tokenize_partition(test_raw, d.vocab));
  return d;
}

}  // namespace fedlm
