// Skip-gram training harness with sampled softmax.
//
// The harness runs the same step against two interchangeable backends: the
// embedding service (through the client SDK) and an in-process reference that
// applies the identical store/sampler/optimizer kernels directly.  Every
// number a step produces — sampled candidates, logits, gradients, the applied
// parameter deltas — is a deterministic function of (corpus, config, step),
// so a single-worker service run and the reference run are bit-identical.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dynembed/client.hpp"
#include "dynembed/config.hpp"
#include "dynembed/retrieval.hpp"
#include "dynembed/sampler.hpp"
#include "dynembed/store.hpp"
#include "dynembed/wire.hpp"

namespace dynembed {

// ---- corpus ---------------------------------------------------------------

// Deterministic synthetic corpus: tokens w0..w{vocab-1} drawn from a Zipf
// distribution, with learnable structure — every token has a fixed partner
// (w_i -> w_{(i+1) mod vocab}) that follows it with probability partner_prob.
// Roughly 7 bytes per token of whitespace-separated text.
struct CorpusSpec {
  std::uint64_t seed = 1;
  std::uint32_t vocab = 5000;
  std::uint64_t tokens = 150000;
  double zipf_exponent = 1.05;
  double partner_prob = 0.45;
};

std::string make_zipf_corpus(const CorpusSpec& spec);

// Lower-cased whitespace tokenization.
std::vector<std::string> tokenize(const std::string& text);

// ---- vocabulary -----------------------------------------------------------

// Frequency-ranked vocabulary with an out-of-vocabulary cutoff: tokens outside
// the `cutoff` most frequent (ties broken by ascending token bytes) map to
// kOovToken. cutoff 0 means unlimited.
inline constexpr const char* kOovToken = "oov";

class Vocabulary {
 public:
  Vocabulary(const std::vector<std::string>& tokens, std::uint64_t cutoff);

  const std::string& map(const std::string& token) const;
  std::uint64_t kept() const { return kept_.size(); }
  // Distinct tokens after mapping (kept tokens plus kOovToken when any token
  // was cut).
  std::vector<std::string> mapped_vocab() const;

 private:
  std::map<std::string, std::string> kept_;  // token -> itself
  bool any_mapped_ = false;
  std::string oov_ = kOovToken;
};

// ---- configuration ----------------------------------------------------------

struct TrainConfig {
  std::uint32_t embedding_dim = 32;
  std::uint32_t window = 2;
  std::uint32_t batch = 64;
  std::uint32_t num_sampled = 16;
  std::uint64_t steps = 5000;
  std::uint64_t seed = 0;
  std::uint64_t cutoff = 0;  // 0 = unlimited
  std::uint64_t range = 0;   // sampled-softmax range restriction, 0 = off
  std::uint32_t threads = 1;
  OptimizerSpec optimizer = OptimizerSpec::sgd(0.05f);

  // Test hooks, called with the step index before each step executes (under
  // the scheduling lock when threads > 1). A step skip_step selects is excised
  // entirely — its examples never train and every other step is unaffected,
  // which is the replay semantics for steps an outage dropped.
  std::function<void(std::uint64_t)> before_step;
  std::function<bool(std::uint64_t)> skip_step;
};

// Table configurations the harness trains: "emb_in" (center vectors, no bias)
// and "emb_out" (context vectors with bias, frequency^0.75 negative sampling).
TableConfig input_table_config(const TrainConfig& cfg);
TableConfig output_table_config(const TrainConfig& cfg);

// ---- backends ---------------------------------------------------------------

// The four calls one training step makes, plus the evaluation reads.
class TrainerBackend {
 public:
  virtual ~TrainerBackend() = default;

  // Stored-width rows; nullopt for absent keys when create_if_missing=false.
  virtual std::vector<std::optional<std::vector<float>>> lookup(
      const std::string& table, const std::vector<EmbeddingKey>& keys,
      bool create_if_missing) = 0;

  virtual std::vector<SampledLogits> sampled_logits(
      const std::string& table,
      const std::vector<wire::SampledLogitsRequest::Example>& examples,
      std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) = 0;

  virtual void update_gradients(
      const std::string& table,
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step) = 0;

  virtual std::vector<ScoredKey> top_k(const std::string& table,
                                       const std::vector<float>& activation,
                                       std::uint32_t k) = 0;
};

// In-process reference: one InMemoryStore per table, sampling through the
// same pooled two-phase path the master runs (stats round, fallback
// resolution, one shard draw, shared pool, per-example logits).
class ReferenceBackend : public TrainerBackend {
 public:
  ReferenceBackend(const TableConfig& emb_in, const TableConfig& emb_out);

  std::vector<std::optional<std::vector<float>>> lookup(
      const std::string& table, const std::vector<EmbeddingKey>& keys,
      bool create_if_missing) override;
  std::vector<SampledLogits> sampled_logits(
      const std::string& table,
      const std::vector<wire::SampledLogitsRequest::Example>& examples,
      std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) override;
  void update_gradients(
      const std::string& table,
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step) override;
  std::vector<ScoredKey> top_k(const std::string& table,
                               const std::vector<float>& activation,
                               std::uint32_t k) override;

  EmbeddingStore& store(const std::string& table);
  const TableConfig& table_config(const std::string& table) const;

 private:
  struct Entry {
    TableConfig config;
    std::unique_ptr<EmbeddingStore> store;
  };
  Entry& entry(const std::string& table);
  std::map<std::string, Entry> tables_;
};

// Service-backed: the same calls over the wire. Tables must have been
// registered (open_table) before training.
class ServiceBackend : public TrainerBackend {
 public:
  explicit ServiceBackend(std::shared_ptr<ServiceClient> client);

  std::vector<std::optional<std::vector<float>>> lookup(
      const std::string& table, const std::vector<EmbeddingKey>& keys,
      bool create_if_missing) override;
  std::vector<SampledLogits> sampled_logits(
      const std::string& table,
      const std::vector<wire::SampledLogitsRequest::Example>& examples,
      std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) override;
  void update_gradients(
      const std::string& table,
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step) override;
  std::vector<ScoredKey> top_k(const std::string& table,
                               const std::vector<float>& activation,
                               std::uint32_t k) override;

  ServiceClient& client() { return *client_; }

 private:
  std::shared_ptr<ServiceClient> client_;
};

// ---- training ---------------------------------------------------------------

struct SkipGramPair {
  std::string center;
  std::string context;
};

// All (center, context) pairs within `window` positions, in corpus order.
std::vector<SkipGramPair> window_pairs(const std::vector<std::string>& tokens,
                                       std::uint32_t window);

struct TrainResult {
  std::vector<double> losses;  // per step; NaN for steps lost to an outage
  std::vector<std::uint64_t> failed_steps;
  std::uint64_t examples_per_epoch = 0;
};

// Runs cfg.steps skip-gram steps over the pair stream (step s trains examples
// [s*batch, (s+1)*batch) modulo the stream length). Steps whose service calls
// fail are recorded in failed_steps and skipped; no partial update is retried.
TrainResult train_skipgram(TrainerBackend& backend, const TrainConfig& cfg,
                           const std::vector<SkipGramPair>& pairs,
                           const Vocabulary& vocab);

// Per-example loss/gradient kernel, exposed for tests: softmax cross-entropy
// in double over the f32 logits with the positive ids as (normalized)
// multi-hot targets. d_logits gets p - t.
double softmax_xent(const std::vector<float>& logits,
                    const std::vector<std::uint8_t>& label_flags,
                    std::vector<double>& d_logits);

// Fraction of held-out pairs whose top-1 retrieval over emb_out (scored
// against the center's emb_in vector) equals the original (pre-cutoff)
// context token. Centers absent from emb_in score as incorrect.
double eval_vocab_accuracy(TrainerBackend& backend,
                           const std::vector<SkipGramPair>& heldout,
                           const Vocabulary& vocab);

}  // namespace dynembed
