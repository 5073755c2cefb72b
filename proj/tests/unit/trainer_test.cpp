#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"
#include "dynembed/snapshot.hpp"
#include "dynembed/store.hpp"
#include "dynembed/trainer.hpp"

namespace dynembed {
namespace {

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

TEST_SUITE("trainer") {

TEST_CASE("make_zipf_corpus is deterministic and sized as requested") {
  CorpusSpec spec;
  spec.seed = 9;
  spec.vocab = 200;
  spec.tokens = 30000;
  const std::string a = make_zipf_corpus(spec);
  const std::string b = make_zipf_corpus(spec);
  CHECK(a == b);

  spec.seed = 10;
  CHECK(make_zipf_corpus(spec) != a);

  const auto tokens = tokenize(a);
  CHECK(tokens.size() == spec.tokens);
  for (const auto& tok : tokens) {
    REQUIRE(tok.size() >= 2);
    REQUIRE(tok[0] == 'w');
    const auto idx = std::stoul(tok.substr(1));
    REQUIRE(idx < spec.vocab);
  }
}

TEST_CASE("make_zipf_corpus is skewed and carries the partner structure") {
  CorpusSpec spec;
  spec.seed = 9;
  spec.vocab = 200;
  spec.tokens = 30000;
  spec.partner_prob = 0.45;
  const auto tokens = tokenize(make_zipf_corpus(spec));

  std::map<std::string, std::uint64_t> counts;
  for (const auto& tok : tokens) counts[tok]++;
  // Zipf head dominates the tail by an order of magnitude.
  CHECK(counts["w0"] > 10 * std::max<std::uint64_t>(counts["w199"], 1));

  const auto partner_rate = [&](const std::vector<std::string>& toks) {
    std::uint64_t hits = 0;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
      const auto idx = std::stoul(toks[i].substr(1));
      if (toks[i + 1] == "w" + std::to_string((idx + 1) % spec.vocab)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(toks.size() - 1);
  };
  const double rate = partner_rate(tokens);
  CHECK(rate > 0.42);
  CHECK(rate < 0.52);

  // The learnable signal scales with partner_prob.
  spec.partner_prob = 0.05;
  const double weak = partner_rate(tokenize(make_zipf_corpus(spec)));
  CHECK(weak < 0.15);
  CHECK(rate > weak + 0.25);
}

TEST_CASE("tokenize lower-cases and splits on any whitespace run") {
  CHECK(tokenize("Hello  World\tFoo\nBar\r\n") ==
        std::vector<std::string>{"hello", "world", "foo", "bar"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("   \n\t ") == std::vector<std::string>{});
  CHECK(tokenize("ONE") == std::vector<std::string>{"one"});
}

TEST_CASE("Vocabulary: cutoff 0 and oversized cutoffs are the identity") {
  const std::vector<std::string> tokens = {"a", "b", "b", "c", "c", "c"};
  for (const std::uint64_t cutoff : {std::uint64_t{0}, std::uint64_t{3},
                                     std::uint64_t{100}}) {
    CAPTURE(cutoff);
    Vocabulary vocab(tokens, cutoff);
    CHECK(vocab.kept() == 3);
    CHECK(vocab.map("a") == "a");
    CHECK(vocab.map("b") == "b");
    CHECK(vocab.map("c") == "c");
    const auto mapped = vocab.mapped_vocab();
    CHECK(std::set<std::string>(mapped.begin(), mapped.end()) ==
          std::set<std::string>{"a", "b", "c"});
  }
}

TEST_CASE("Vocabulary: cutoff keeps the most frequent, ties by token bytes") {
  // Counts: c=3, b=2, d=2, a=1. Cutoff 2 keeps c and then b (tie b/d broken
  // by ascending bytes); d and a fall to oov.
  const std::vector<std::string> tokens = {"a", "b", "b", "d", "d",
                                           "c", "c", "c"};
  Vocabulary vocab(tokens, 2);
  CHECK(vocab.kept() == 2);
  CHECK(vocab.map("c") == "c");
  CHECK(vocab.map("b") == "b");
  CHECK(vocab.map("d") == kOovToken);
  CHECK(vocab.map("a") == kOovToken);
  CHECK(vocab.map("never-seen") == kOovToken);

  const auto mapped = vocab.mapped_vocab();
  CHECK(std::set<std::string>(mapped.begin(), mapped.end()) ==
        std::set<std::string>{"b", "c", kOovToken});
}

TEST_CASE("window_pairs enumerates contexts around each center in order") {
  const std::vector<std::string> tokens = {"a", "b", "c", "d"};
  const auto pairs = window_pairs(tokens, 2);
  // Independently written out by hand: per center, contexts left-to-right.
  const std::vector<std::pair<std::string, std::string>> want = {
      {"a", "b"}, {"a", "c"},                          // center a
      {"b", "a"}, {"b", "c"}, {"b", "d"},              // center b
      {"c", "a"}, {"c", "b"}, {"c", "d"},              // center c
      {"d", "b"}, {"d", "c"},                          // center d
  };
  REQUIRE(pairs.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(pairs[i].center == want[i].first);
    CHECK(pairs[i].context == want[i].second);
  }
  CHECK(window_pairs({}, 2).empty());
  CHECK(window_pairs({"solo"}, 3).empty());
  CHECK_THROWS_AS(window_pairs(tokens, 0), Error);
}

TEST_CASE("softmax_xent against an independent cross-entropy") {
  // Hand case: two equal logits, one positive.
  {
    std::vector<double> d;
    const double loss = softmax_xent({0.0f, 0.0f}, {1, 0}, d);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    REQUIRE(d.size() == 2);
    CHECK(d[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  // Randomized, including multi-hot targets.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> val(-4.0f, 4.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    std::vector<float> logits(n);
    std::vector<std::uint8_t> flags(n, 0);
    for (auto& x : logits) x = val(rng);
    const std::size_t n_pos = 1 + rng() % std::min<std::size_t>(3, n);
    while (std::count(flags.begin(), flags.end(), 1) <
           static_cast<std::ptrdiff_t>(n_pos)) {
      flags[rng() % n] = 1;
    }

    std::vector<double> d;
    const double loss = softmax_xent(logits, flags, d);

    // Oracle: stable softmax in double, normalized multi-hot target.
    std::vector<double> p(n);
    double mx = -1e30;
    for (auto x : logits) mx = std::max(mx, static_cast<double>(x));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::exp(static_cast<double>(logits[i]) - mx);
      z += p[i];
    }
    for (auto& x : p) x /= z;
    const double t = 1.0 / static_cast<double>(n_pos);
    double want_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (flags[i]) want_loss -= t * std::log(p[i]);
    }
    CHECK(loss == doctest::Approx(want_loss).epsilon(1e-9));
    REQUIRE(d.size() == n);
    double d_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double want_d = p[i] - (flags[i] ? t : 0.0);
      CHECK(d[i] == doctest::Approx(want_d).scale(1).epsilon(1e-9));
      d_sum += d[i];
    }
    CHECK(d_sum == doctest::Approx(0.0).scale(1).epsilon(1e-9));  // gradient mass balance
  }
}

TEST_CASE("table configs: names, shapes, and per-table seeds") {
  TrainConfig cfg;
  cfg.embedding_dim = 24;
  cfg.seed = 31;
  const TableConfig in = input_table_config(cfg);
  const TableConfig out = output_table_config(cfg);

  CHECK(in.name == "emb_in");
  CHECK(in.embedding_dim == 24);
  CHECK_FALSE(in.has_bias);
  CHECK(in.seed == mix_seed(31, 1));

  CHECK(out.name == "emb_out");
  CHECK(out.embedding_dim == 24);
  CHECK(out.has_bias);
  CHECK(out.seed == mix_seed(31, 2));
  CHECK(out.sampler_strategy == SamplerStrategy::frequency_power(0.75));

  CHECK(in.optimizer == cfg.optimizer);
  CHECK(out.optimizer == cfg.optimizer);
}

TEST_CASE("train_skipgram on the reference backend is deterministic") {
  CorpusSpec corpus_spec;
  corpus_spec.seed = 4;
  corpus_spec.vocab = 60;
  corpus_spec.tokens = 4000;
  const auto tokens = tokenize(make_zipf_corpus(corpus_spec));

  TrainConfig cfg;
  cfg.embedding_dim = 8;
  cfg.batch = 16;
  cfg.num_sampled = 6;
  cfg.steps = 30;
  cfg.seed = 12;
  const Vocabulary vocab(tokens, cfg.cutoff);
  const auto pairs = window_pairs(tokens, cfg.window);

  ReferenceBackend a(input_table_config(cfg), output_table_config(cfg));
  ReferenceBackend b(input_table_config(cfg), output_table_config(cfg));
  const TrainResult ra = train_skipgram(a, cfg, pairs, vocab);
  const TrainResult rb = train_skipgram(b, cfg, pairs, vocab);

  REQUIRE(ra.losses.size() == cfg.steps);
  CHECK(ra.failed_steps.empty());
  CHECK(ra.examples_per_epoch == pairs.size());
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    REQUIRE(std::isfinite(ra.losses[i]));
    CHECK(same_bits(ra.losses[i], rb.losses[i]));
  }
  CHECK(a.store("emb_in").state_digest() == b.store("emb_in").state_digest());
  CHECK(a.store("emb_out").state_digest() == b.store("emb_out").state_digest());

  // Training actually learns something on this tiny corpus: the mean loss of
  // the last 10 steps beats the first 10.
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += ra.losses[i];
    tail += ra.losses[cfg.steps - 10 + i];
  }
  CHECK(tail < head);
}

TEST_CASE("before_step fires once per step in order; skip_step excises cleanly") {
  CorpusSpec corpus_spec;
  corpus_spec.seed = 5;
  corpus_spec.vocab = 40;
  corpus_spec.tokens = 2000;
  const auto tokens = tokenize(make_zipf_corpus(corpus_spec));

  TrainConfig cfg;
  cfg.embedding_dim = 4;
  cfg.batch = 8;
  cfg.num_sampled = 4;
  cfg.steps = 10;
  cfg.seed = 3;
  const Vocabulary vocab(tokens, 0);
  const auto pairs = window_pairs(tokens, cfg.window);

  std::vector<std::uint64_t> seen;
  TrainConfig hooked = cfg;
  hooked.before_step = [&](std::uint64_t step) { seen.push_back(step); };
  ReferenceBackend full(input_table_config(cfg), output_table_config(cfg));
  const TrainResult base = train_skipgram(full, hooked, pairs, vocab);
  CHECK(seen == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  TrainConfig skipping = cfg;
  skipping.skip_step = [](std::uint64_t step) { return step == 3 || step == 7; };
  ReferenceBackend sa(input_table_config(cfg), output_table_config(cfg));
  ReferenceBackend sb(input_table_config(cfg), output_table_config(cfg));
  const TrainResult skip_a = train_skipgram(sa, skipping, pairs, vocab);
  const TrainResult skip_b = train_skipgram(sb, skipping, pairs, vocab);

  REQUIRE(skip_a.losses.size() == cfg.steps);
  CHECK(std::isnan(skip_a.losses[3]));
  CHECK(std::isnan(skip_a.losses[7]));
  // Steps before the first skip are untouched by it.
  for (int i = 0; i < 3; ++i) CHECK(same_bits(skip_a.losses[i], base.losses[i]));
  // Excision is deterministic: two skipping runs agree bitwise.
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    if (i == 3 || i == 7) continue;
    CHECK(same_bits(skip_a.losses[i], skip_b.losses[i]));
  }
  CHECK(sa.store("emb_in").state_digest() == sb.store("emb_in").state_digest());
  CHECK(sa.store("emb_out").state_digest() == sb.store("emb_out").state_digest());
  // Skipping steps changes the final state versus the full run.
  CHECK(sa.store("emb_in").state_digest() != full.store("emb_in").state_digest());
  // skip_step is not an error path: nothing lands in failed_steps.
  CHECK(skip_a.failed_steps.empty());
}

TEST_CASE("cutoff maps rare centers and contexts through oov during training") {
  CorpusSpec corpus_spec;
  corpus_spec.seed = 6;
  corpus_spec.vocab = 50;
  corpus_spec.tokens = 3000;
  const auto tokens = tokenize(make_zipf_corpus(corpus_spec));

  TrainConfig cfg;
  cfg.embedding_dim = 4;
  cfg.batch = 8;
  cfg.num_sampled = 4;
  cfg.steps = 25;
  cfg.cutoff = 10;
  const Vocabulary vocab(tokens, cfg.cutoff);
  const auto pairs = window_pairs(tokens, cfg.window);

  ReferenceBackend backend(input_table_config(cfg), output_table_config(cfg));
  train_skipgram(backend, cfg, pairs, vocab);

  // Only kept tokens (plus oov) ever reach the tables.
  const auto allowed_vec = vocab.mapped_vocab();
  const std::set<std::string> allowed(allowed_vec.begin(), allowed_vec.end());
  CHECK(allowed.size() == 11);  // 10 kept + oov
  for (const char* table : {"emb_in", "emb_out"}) {
    CAPTURE(table);
    std::size_t residents = 0;
    backend.store(table).for_each(
        [&](const EmbeddingKey& key, const EmbeddingEntry&) {
          ++residents;
          CHECK(allowed.count(key) == 1);
        });
    CHECK(residents <= allowed.size());
    CHECK(residents > 0);
  }
}

TEST_CASE("eval_vocab_accuracy scores top-1 retrieval against original contexts") {
  TrainConfig cfg;
  cfg.embedding_dim = 2;
  ReferenceBackend backend(input_table_config(cfg), output_table_config(cfg));

  const auto put = [&](const std::string& table, const EmbeddingKey& key,
                       std::vector<float> v) {
    SnapshotRecord rec;
    rec.key = key;
    rec.entry.vector = std::move(v);
    backend.store(table).assign({rec});
  };
  // emb_in rows are 2-wide; emb_out rows carry a bias third component.
  put("emb_in", "a", {1.0f, 0.0f});
  put("emb_in", "b", {0.0f, 1.0f});
  put("emb_out", "b", {1.0f, 0.0f, 0.0f});   // best match for center a
  put("emb_out", "c", {0.5f, 0.0f, 0.0f});
  put("emb_out", "oov", {0.0f, 1.0f, 0.0f});  // best match for center b

  const std::vector<std::string> vocab_tokens = {"a", "a", "b", "b", "c"};
  const Vocabulary vocab(vocab_tokens, 0);

  // Top-1 for center a is b: the first pair scores, the second misses.
  CHECK(eval_vocab_accuracy(backend, {{"a", "b"}}, vocab) == 1.0);
  CHECK(eval_vocab_accuracy(backend, {{"a", "c"}}, vocab) == 0.0);
  CHECK(eval_vocab_accuracy(backend, {{"a", "b"}, {"a", "c"}}, vocab) == 0.5);

  // A center with no emb_in row cannot retrieve anything: incorrect.
  CHECK(eval_vocab_accuracy(backend, {{"zzz", "b"}}, vocab) == 0.0);

  // The retrieved id is compared to the ORIGINAL context token, not its
  // cutoff mapping: center a still retrieves "b", and that matches the raw
  // context even though the cutoff folds "b" into oov. (Comparing against
  // the mapped context would score 0 here.)
  Vocabulary cut(vocab_tokens, 1);  // tie a/b broken by bytes: keeps "a" only
  CHECK(cut.map("b") == kOovToken);
  CHECK(eval_vocab_accuracy(backend, {{"a", "b"}}, cut) == 1.0);
  // A center that falls to oov has no emb_in row here: incorrect.
  CHECK(eval_vocab_accuracy(backend, {{"b", "b"}}, cut) == 0.0);

  CHECK(eval_vocab_accuracy(backend, {}, vocab) == 0.0);
}

}  // TEST_SUITE

}  // namespace
}  // namespace dynembed
