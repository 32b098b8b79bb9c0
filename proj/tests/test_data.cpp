#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "fedlm/data.hpp"
#include "fedlm/io.hpp"

using namespace fedlm;

namespace {

// Empirical next-token distribution per previous token over a client.
std::map<int, std::map<int, double>> bigram(const ClientDataset& ds) {
  std::map<int, std::map<int, double>> counts;
  for (const auto& s : ds.sequences)
    for (std::size_t i = 1; i < s.size(); ++i) counts[s[i - 1]][s[i]] += 1;
  for (auto& [prev, row] : counts) {
    double total = 0;
    for (auto& [t, c] : row) total += c;
    for (auto& [t, c] : row) c /= total;
  }
  return counts;
}

std::vector<double> unigram(const ClientDataset& ds, std::size_t v) {
  std::vector<double> p(v, 0.0);
  double n = 0;
  for (const auto& s : ds.sequences)
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      p[s[i]] += 1;
      n += 1;
    }
  for (double& x : p) x /= n;
  return p;
}

}  // namespace

TEST_CASE("build_vocab orders by count then lexicographically") {
  const std::vector<std::string> corpus{"a a b"};
  const Vocab v = build_vocab(corpus, 6);
  CHECK(v.size() == 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK(v.id("<pad>") == Vocab::kPad);

  const std::vector<std::string> ties{"d c b", "c d a"};
  const Vocab t = build_vocab(ties, 6);
  CHECK(t.id("c") == 4);  // c and d both twice; c sorts first
  CHECK(t.id("d") == 5);
  CHECK(t.id("a") == Vocab::kUnk);
  CHECK(build_vocab(ties, 6) == t);

  CHECK_THROWS_AS(build_vocab(ties, 4), ConfigError);
  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 8), ConfigError);
  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{"   "}, 8), ConfigError);
}

TEST_CASE("tokenize and detokenize") {
  const std::vector<std::string> corpus{"the cat sat on the mat"};
  const Vocab v = build_vocab(corpus, 20);
  const std::string text = "the mat sat";
  CHECK(v.detokenize(v.tokenize(text)) == text);
  for (int id : v.tokenize("zebra yak")) CHECK(id == Vocab::kUnk);
  const Sequence s = v.encode("cat on");
  CHECK(s.front() == Vocab::kBos);
  CHECK(s.back() == Vocab::kEos);
  CHECK(v.detokenize(s) == "cat on");
}

TEST_CASE("partition parsing") {
  CHECK(parse_partition("").empty());
  const auto one = parse_partition("u1\thello world\nu1\tagain\n");
  REQUIRE(one.size() == 1);
  CHECK(one[0].lines.size() == 2);

  const auto three = parse_partition("b\tx\na\ty\nc\tz\nb\tw\nb\tv\n");
  REQUIRE(three.size() == 3);
  CHECK(three[0].client_id == "b");
  CHECK(three[0].lines.size() == 3);
  CHECK(three[1].client_id == "a");
  CHECK(three[2].lines.size() == 1);

  try {
    parse_partition("a\tok\nno tab here\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  const auto path = std::filesystem::temp_directory_path() / "fedlm_part.tsv";
  io::write_text(path, format_partition(three));
  CHECK(load_partition(path).size() == 3);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.num_clients = 6;
  cfg.seqs_per_client = 10;
  const SynthCorpus a = synth_generate(cfg, Prng(3));
  const SynthCorpus b = synth_generate(cfg, Prng(3));
  CHECK(a.vocab == b.vocab);
  REQUIRE(a.train.size() == 6);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(a.train[c].sequences == b.train[c].sequences);
    CHECK(a.test[c].sequences == b.test[c].sequences);
    CHECK(a.train[c].sequences.size() == 10);
    for (const auto& s : a.train[c].sequences) {
      CHECK(s.size() >= cfg.min_len + 2);
      CHECK(s.size() <= cfg.max_len + 2);
      for (int id : s) CHECK(static_cast<std::size_t>(id) < cfg.vocab_size);
    }
  }
  CHECK_THROWS_AS(synth_generate(SynthConfig{.skew = 1.5}, Prng(1)), ConfigError);
}

TEST_CASE("synthetic skew controls client heterogeneity") {
  SynthConfig cfg;
  cfg.num_clients = 2;
  cfg.seqs_per_client = 3000;
  cfg.vocab_size = 24;
  cfg.skew = 0.0;
  const SynthCorpus iid = synth_generate(cfg, Prng(7));
  const auto p0 = unigram(iid.train[0], cfg.vocab_size);
  const auto p1 = unigram(iid.train[1], cfg.vocab_size);
  double tv = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) tv += 0.5 * std::abs(p0[i] - p1[i]);
  CHECK(tv < 0.03);

  cfg.skew = 1.0;
  cfg.seqs_per_client = 600;
  const SynthCorpus skewed = synth_generate(cfg, Prng(7));
  const auto b0 = bigram(skewed.train[0]);
  const auto b1 = bigram(skewed.train[1]);
  // Total variation of the successor distribution after <s>.
  double tvb = 0;
  std::map<int, double> all;
  for (auto& [t, p] : b0.at(Vocab::kBos)) all[t] += 0;
  for (auto& [t, p] : b1.at(Vocab::kBos)) all[t] += 0;
  for (auto& [t, unused] : all) {
    const double x = b0.at(Vocab::kBos).count(t) ? b0.at(Vocab::kBos).at(t) : 0.0;
    const double y = b1.at(Vocab::kBos).count(t) ? b1.at(Vocab::kBos).at(t) : 0.0;
    tvb += 0.5 * std::abs(x - y);
  }
  CHECK(tvb > 0.1);
}

TEST_CASE("make_batches") {
  ClientDataset five{"c", {}};
  for (int i = 0; i < 5; ++i) five.sequences.push_back({2, 10 + i, 11, 3});
  auto batches = make_batches(five, 16, 30, 1200, Prng(1));
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].batch_size == 5);

  ClientDataset big{"c", {}};
  for (int i = 0; i < 2000; ++i) big.sequences.push_back({2, 4 + i % 50, 3});
  batches = make_batches(big, 16, 30, 1200, Prng(1));
  CHECK(batches.size() == 75);
  for (const auto& b : batches) CHECK(b.batch_size == 16);

  ClientDataset longseq{"c", {Sequence(101, 7)}};
  longseq.sequences[0][0] = 2;
  batches = make_batches(longseq, 16, 30, 1200, Prng(1));
  CHECK(batches[0].seq_len == 30);
  CHECK(batches[0].target_count() == 30);

  // Short rows are padded and masked; inputs[t] predicts targets[t].
  std::vector<Sequence> seqs{{2, 5, 6, 3}, {2, 9, 3}};
  std::vector<const Sequence*> ptrs{&seqs[0], &seqs[1]};
  const Batch b = make_batch(ptrs, 30);
  CHECK(b.seq_len == 3);
  CHECK(b.inputs == std::vector<int>{2, 5, 6, 2, 9, 0});
  CHECK(b.targets == std::vector<int>{5, 6, 3, 9, 3, 0});
  CHECK(b.mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0});

  // Same rng, same order; different rng, different order.
  auto x = make_batches(big, 16, 30, 64, Prng(4));
  auto y = make_batches(big, 16, 30, 64, Prng(4));
  auto z = make_batches(big, 16, 30, 64, Prng(5));
  CHECK(x[0].inputs == y[0].inputs);
  CHECK(x[0].inputs != z[0].inputs);
  CHECK_THROWS_AS(make_batches(big, 0, 30, 10, Prng(1)), ConfigError);
}
