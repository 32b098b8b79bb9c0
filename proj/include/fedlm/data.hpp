#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlm/tensor.hpp"

namespace fedlm {

using Sequence = std::vector<int>;

/// Word vocabulary with fixed special ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecial = 4;

  Vocab();
  // Specials followed by `words` in order.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;  // kUnk when absent
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> tokenize(std::string_view text) const;
  // Joins non-special tokens with single spaces.
  std::string detokenize(std::span<const int> ids) const;
  // bos + tokens + eos
  Sequence encode(std::string_view text) const;

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

// Most frequent whitespace tokens, ties broken lexicographically, until the
// vocabulary (specials included) holds `size` entries.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t size);

struct ClientText {
  std::string client_id;
  std::vector<std::string> lines;
};

struct ClientDataset {
  std::string client_id;
  std::vector<Sequence> sequences;
};

// Reads "client_id<TAB>text" lines, grouping by client in order of first
// appearance. Malformed lines raise ParseError with the line number.
std::vector<ClientText> load_partition(const std::filesystem::path& path);
std::vector<ClientText> parse_partition(std::string_view content);
std::string format_partition(std::span<const ClientText> clients);

std::vector<ClientDataset> tokenize_partition(std::span<const ClientText> raw,
                                              const Vocab& vocab);
std::vector<ClientText> detokenize_partition(
    std::span<const ClientDataset> clients, const Vocab& vocab);

struct SynthConfig {
  std::size_t num_clients = 50;
  std::size_t seqs_per_client = 24;
  std::size_t test_seqs_per_client = 4;
  std::size_t vocab_size = 128;  // including specials
  double skew = 0.5;             // 0: IID clients, 1: fully client-specific
  std::size_t min_len = 8;       // content tokens per sequence
  std::size_t max_len = 24;
  std::size_t fanout = 4;        // likely successors per token
  // Seeds the shared bigram table; corpora that share it are related.
  std::uint64_t world_seed = 1;
};

struct SynthCorpus {
  Vocab vocab;
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> test;
};

// Each client draws sequences from a bigram model that mixes a shared table
// (from world_seed) and a client table (from rng) with weight `skew`.
SynthCorpus synth_generate(const SynthConfig& cfg, Prng rng);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> inputs;  // [batch_size * seq_len], batch-major
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;  // 1 where the target counts

  std::size_t target_count() const;
};

// Truncates every sequence to seq_len + 1 tokens (seq_len predictions) and
// pads with kPad. The batch width is the longest truncated sequence.
Batch make_batch(std::span<const Sequence* const> seqs, std::size_t seq_len);

// One shuffled epoch over at most max_examples sequences in batches of
// batch_size (the last may be partial).
std::vector<Batch> make_batches(const ClientDataset& ds, std::size_t batch_size,
                                std::size_t seq_len, std::size_t max_examples,
                                Prng rng);

// All sequences in order, no shuffling; for evaluation.
std::vector<Batch> make_eval_batches(std::span<const Sequence> seqs,
                                     std::size_t batch_size,
                                     std::size_t seq_len);

}  // namespace fedlm
