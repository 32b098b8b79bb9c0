#include "fedlm/data.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "fedlm/io.hpp"

namespace fedlm {

namespace {

const std::vector<std::string>& special_words() {
  static const std::vector<std::string> w = {"<pad>", "<unk>", "<s>", "</s>"};
  return w;
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
  words_ = special_words();
  for (const auto& w : words) words_.push_back(w);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary entry " + words_[i]);
    }
  }
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[id];
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (auto w : split_ws(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i < kNumSpecial && i != kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(i);
  }
  return out;
}

Sequence Vocab::encode(std::string_view text) const {
  Sequence s{kBos};
  for (int i : tokenize(text)) s.push_back(i);
  s.push_back(kEos);
  return s;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t size) {
  if (size < 5) throw ConfigError("vocabulary size must be >= 5");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto w : split_ws(line)) ++counts[std::string(w)];
  for (const auto& s : special_words()) counts.erase(s);
  if (counts.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), size - Vocab::kNumSpecial);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return Vocab(words);
}

std::vector<ClientText> parse_partition(std::string_view content) {
  std::vector<ClientText> clients;
  std::unordered_map<std::string, std::size_t> slot;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw ParseError("partition line " + std::to_string(line_no) +
                       ": expected client_id<TAB>text");
    }
    std::string id(line.substr(0, tab));
    auto [it, fresh] = slot.emplace(id, clients.size());
    if (fresh) clients.push_back(ClientText{id, {}});
    clients[it->second].lines.emplace_back(line.substr(tab + 1));
  }
  return clients;
}

std::vector<ClientText> load_partition(const std::filesystem::path& path) {
  return parse_partition(io::read_text(path));
}

std::string format_partition(std::span<const ClientText> clients) {
  std::string out;
  for (const auto& c : clients)
    for (const auto& l : c.lines) out += c.client_id + '\t' + l + '\n';
  return out;
}

std::vector<ClientDataset> tokenize_partition(std::span<const ClientText> raw,
                                              const Vocab& vocab) {
  std::vector<ClientDataset> out;
  out.reserve(raw.size());
  for (const auto& c : raw) {
    ClientDataset ds{c.client_id, {}};
    for (const auto& l : c.lines) ds.sequences.push_back(vocab.encode(l));
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<ClientText> detokenize_partition(
    std::span<const ClientDataset> clients, const Vocab& vocab) {
  std::vector<ClientText> out;
  for (const auto& c : clients) {
    ClientText t{c.client_id, {}};
    for (const auto& s : c.sequences) t.lines.push_back(vocab.detokenize(s));
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

// Row over content tokens: 90% of the mass on `fanout` random successors
// with exponential weights, the rest spread uniformly.
std::vector<double> peaked_row(std::size_t n, std::size_t fanout, Prng rng) {
  std::vector<double> row(n, 0.1 / static_cast<double>(n));
  std::vector<std::size_t> picks(n);
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  fanout = std::min(fanout, n);
  for (std::size_t i = 0; i < fanout; ++i) {
    std::swap(picks[i], picks[i + rng.below(n - i)]);
  }
  std::vector<double> w(fanout);
  double total = 0.0;
  for (auto& x : w) total += (x = rng.exponential());
  for (std::size_t i = 0; i < fanout; ++i) row[picks[i]] += 0.9 * w[i] / total;
  return row;
}

std::size_t sample_index(const std::vector<double>& cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
  return std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
}

}  // namespace

SynthCorpus synth_generate(const SynthConfig& cfg, Prng rng) {
  if (cfg.skew < 0.0 || cfg.skew > 1.0) throw ConfigError("synth skew must be in [0,1]");
  if (cfg.vocab_size < Vocab::kNumSpecial + 2) {
    throw ConfigError("synthetic vocabulary needs at least 2 content tokens");
  }
  if (cfg.min_len == 0 || cfg.min_len > cfg.max_len) {
    throw ConfigError("synthetic sequence lengths need 1 <= min_len <= max_len");
  }
  const std::size_t n = cfg.vocab_size - Vocab::kNumSpecial;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
  SynthCorpus corpus{Vocab(words), {}, {}};

  // Row r conditions on previous token: r = 0 is <s>, r = i + 1 is word i.
  const Prng world = Prng(cfg.world_seed).derive("synth-world");
  std::vector<std::vector<double>> shared(n + 1);
  for (std::size_t r = 0; r <= n; ++r) {
    shared[r] = peaked_row(n, cfg.fanout, world.derive("row", r));
  }

  for (std::size_t c = 0; c < cfg.num_clients; ++c) {
    const Prng crng = rng.derive("client", c);
    std::vector<std::vector<double>> cdf(n + 1);
    for (std::size_t r = 0; r <= n; ++r) {
      std::vector<double> row = shared[r];
      if (cfg.skew > 0.0) {
        auto own = peaked_row(n, cfg.fanout, crng.derive("row", r));
        for (std::size_t j = 0; j < n; ++j)
          row[j] = (1.0 - cfg.skew) * row[j] + cfg.skew * own[j];
      }
      std::partial_sum(row.begin(), row.end(), row.begin());
      cdf[r] = std::move(row);
    }
    Prng sampler = crng.derive("samples");
    auto draw = [&]() {
      const std::size_t len =
          cfg.min_len + sampler.below(cfg.max_len - cfg.min_len + 1);
      Sequence s{Vocab::kBos};
      std::size_t prev = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t w = sample_index(cdf[prev], sampler.uniform());
        s.push_back(static_cast<int>(w) + Vocab::kNumSpecial);
        prev = w + 1;
      }
      s.push_back(Vocab::kEos);
      return s;
    };
    std::string id = "client_" + std::to_string(c);
    ClientDataset train{id, {}};
    for (std::size_t i = 0; i < cfg.seqs_per_client; ++i) train.sequences.push_back(draw());
    ClientDataset test{id, {}};
    for (std::size_t i = 0; i < cfg.test_seqs_per_client; ++i) test.sequences.push_back(draw());
    corpus.train.push_back(std::move(train));
    corpus.test.push_back(std::move(test));
  }
  return corpus;
}

std::size_t Batch::target_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

Batch make_batch(std::span<const Sequence* const> seqs, std::size_t seq_len) {
  if (seqs.empty()) throw UsageError("make_batch with no sequences");
  if (seq_len == 0) throw ConfigError("sequence length must be >= 1");
  std::size_t width = 1;
  for (const Sequence* s : seqs) {
    if (s->size() > 1) width = std::max(width, std::min(s->size() - 1, seq_len));
  }
  Batch b;
  b.batch_size = seqs.size();
  b.seq_len = width;
  b.inputs.assign(b.batch_size * width, Vocab::kPad);
  b.targets.assign(b.batch_size * width, Vocab::kPad);
  b.mask.assign(b.batch_size * width, 0);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const Sequence& s = *seqs[r];
    const std::size_t n = s.size() > 1 ? std::min(s.size() - 1, width) : 0;
    for (std::size_t t = 0; t < n; ++t) {
      b.inputs[r * width + t] = s[t];
      b.targets[r * width + t] = s[t + 1];
      b.mask[r * width + t] = s[t + 1] != Vocab::kPad ? 1 : 0;
    }
  }
  return b;
}

std::vector<Batch> make_batches(const ClientDataset& ds, std::size_t batch_size,
                                std::size_t seq_len, std::size_t max_examples,
                                Prng rng) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  order.resize(std::min(order.size(), max_examples));
  std::vector<Batch> out;
  std::vector<const Sequence*> chunk;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    chunk.clear();
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j)
      chunk.push_back(&ds.sequences[order[j]]);
    out.push_back(make_batch(chunk, seq_len));
  }
  return out;
}

std::vector<Batch> make_eval_batches(std::span<const Sequence> seqs,
                                     std::size_t batch_size,
                                     std::size_t seq_len) {
  std::vector<Batch> out;
  std::vector<const Sequence*> chunk;
  for (std::size_t i = 0; i < seqs.size(); i += batch_size) {
    chunk.clear();
    for (std::size_t j = i; j < std::min(seqs.size(), i + batch_size); ++j)
      chunk.push_back(&seqs[j]);
    out.push_back(make_batch(chunk, seq_len));
  }
  return out;
}

}  // namespace fedlm
