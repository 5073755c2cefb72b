// Copyright 2026 The dynembed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dynembed/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"
#include "dynembed/optim.hpp"

namespace dynembed {

// ---- corpus -----------------------------------------------------------------

std::string make_zipf_corpus(const CorpusSpec& spec) {
  if (spec.vocab == 0 || spec.tokens == 0) {
    throw Error(ErrorCode::kInvalidConfig, "corpus needs vocab > 0 and tokens > 0");
  }
  // Zipf CDF over ranks 1..vocab.
  std::vector<double> cdf(spec.vocab);
  double total = 0.0;
  for (std::uint32_t r = 0; r < spec.vocab; ++r) {
    total += std::pow(static_cast<double>(r) + 1.0, -spec.zipf_exponent);
    cdf[r] = total;
  }

  std::uint64_t state = spec.seed;
  auto next_unit = [&state]() { return open_unit_double(splitmix64_next(state)); };
  auto zipf_draw = [&]() -> std::uint32_t {
    const double u = next_unit() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return static_cast<std::uint32_t>(it - cdf.begin());
  };

  std::string out;
  out.reserve(spec.tokens * 7);
  std::uint32_t prev = zipf_draw();
  out += "w" + std::to_string(prev);
  for (std::uint64_t t = 1; t < spec.tokens; ++t) {
    std::uint32_t cur;
    if (next_unit() < spec.partner_prob) {
      // Structural signal: each token's fixed partner tends to follow it.
      cur = (prev + 1) % spec.vocab;
    } else {
      cur = zipf_draw();
    }
    out += " w" + std::to_string(cur);
    prev = cur;
  }
  out += "\n";
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        tokens.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// ---- vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary(const std::vector<std::string>& tokens, std::uint64_t cutoff) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& t : tokens) ++counts[t];

  if (cutoff == 0 || counts.size() <= cutoff) {
    for (const auto& [token, n] : counts) {
      (void)n;
      kept_.emplace(token, token);
    }
    return;
  }

  // Rank by (count desc, token asc) and keep the top `cutoff`.
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  ranked.resize(cutoff);
  for (auto& [token, n] : ranked) {
    (void)n;
    kept_.emplace(token, token);
  }
  any_mapped_ = true;
}

const std::string& Vocabulary::map(const std::string& token) const {
  auto it = kept_.find(token);
  return it == kept_.end() ? oov_ : it->second;
}

std::vector<std::string> Vocabulary::mapped_vocab() const {
  std::vector<std::string> out;
  out.reserve(kept_.size() + 1);
  for (const auto& [token, self] : kept_) {
    (void)self;
    out.push_back(token);
  }
  if (any_mapped_) out.push_back(oov_);
  return out;
}

// ---- table configs -------------------------------------------------------------

TableConfig input_table_config(const TrainConfig& cfg) {
  TableConfig t = make_table_config("emb_in", cfg.embedding_dim, /*has_bias=*/false,
                                    cfg.optimizer, mix_seed(cfg.seed, 1));
  return t;
}

TableConfig output_table_config(const TrainConfig& cfg) {
  TableConfig t = make_table_config("emb_out", cfg.embedding_dim, /*has_bias=*/true,
                                    cfg.optimizer, mix_seed(cfg.seed, 2));
  t.sampler_strategy = SamplerStrategy::frequency_power(0.75);
  return t;
}

// ---- reference backend -----------------------------------------------------------

ReferenceBackend::ReferenceBackend(const TableConfig& emb_in, const TableConfig& emb_out) {
  for (const auto* config : {&emb_in, &emb_out}) {
    validate_config(*config);
    Entry e;
    e.config = *config;
    e.store = std::make_unique<InMemoryStore>(*config);
    tables_.emplace(config->name, std::move(e));
  }
}

ReferenceBackend::Entry& ReferenceBackend::entry(const std::string& table) {
  auto it = tables_.find(table);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kTableNotFound, "no table named \"" + table + "\"");
  }
  return it->second;
}

EmbeddingStore& ReferenceBackend::store(const std::string& table) {
  return *entry(table).store;
}

const TableConfig& ReferenceBackend::table_config(const std::string& table) const {
  auto it = tables_.find(table);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kTableNotFound, "no table named \"" + table + "\"");
  }
  return it->second.config;
}

std::vector<std::optional<std::vector<float>>> ReferenceBackend::lookup(
    const std::string& table, const std::vector<EmbeddingKey>& keys,
    bool create_if_missing) {
  auto& e = entry(table);
  LookupOptions options;
  options.create_if_missing = create_if_missing;
  options.update_frequency = false;
  auto entries = e.store->lookup(keys, options);
  std::vector<std::optional<std::vector<float>>> out;
  out.reserve(entries.size());
  for (auto& item : entries) {
    if (item) {
      out.emplace_back(std::move(item->vector));
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

std::vector<SampledLogits> ReferenceBackend::sampled_logits(
    const std::string& table,
    const std::vector<wire::SampledLogitsRequest::Example>& examples,
    std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) {
  auto& e = entry(table);

  // The same two-phase round the master runs, with one shard: a stats pass
  // fixes the fallback decision and the quota, one draw builds the shared
  // pool, and every example assembles from that pool.
  const ShardSampleStats stats = compute_sample_stats(*e.store, e.config.sampler_strategy);
  const SamplerStrategy effective =
      resolve_fallback(e.config.sampler_strategy, stats.weight_sum);
  const std::vector<std::uint32_t> quotas =
      proportional_quotas({stats.resident_count}, num_sampled);

  std::vector<EmbeddingKey> union_positives;
  {
    std::unordered_set<std::string_view> seen;
    for (const auto& ex : examples) {
      for (const auto& key : ex.positives) {
        validate_key(key);
        if (seen.insert(key).second) union_positives.push_back(key);
      }
    }
  }

  std::vector<ShardSampleOutput> outputs;
  outputs.push_back(
      sample_shard(*e.store, effective, seed, quotas[0], range, union_positives));
  const SamplePool pool = build_sample_pool(std::move(outputs));

  std::vector<SampledLogits> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back(compute_logits_for_example(pool, ex.positives, ex.activation,
                                             num_sampled, e.config));
  }
  return out;
}

void ReferenceBackend::update_gradients(
    const std::string& table,
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step) {
  auto& e = entry(table);
  GradientBatch batch;
  batch.keys.reserve(items.size());
  batch.gradients.reserve(items.size());
  for (const auto& [key, grad] : items) {
    batch.keys.push_back(key);
    batch.gradients.push_back(grad);
  }
  apply_gradients(*e.store, batch, step);
}

std::vector<ScoredKey> ReferenceBackend::top_k(const std::string& table,
                                               const std::vector<float>& activation,
                                               std::uint32_t k) {
  return worker_top_k(*entry(table).store, activation, k);
}

// ---- service backend ---------------------------------------------------------------

ServiceBackend::ServiceBackend(std::shared_ptr<ServiceClient> client)
    : client_(std::move(client)) {}

std::vector<std::optional<std::vector<float>>> ServiceBackend::lookup(
    const std::string& table, const std::vector<EmbeddingKey>& keys,
    bool create_if_missing) {
  return client_->lookup(table, keys, create_if_missing, /*update_frequency=*/false);
}

std::vector<SampledLogits> ServiceBackend::sampled_logits(
    const std::string& table,
    const std::vector<wire::SampledLogitsRequest::Example>& examples,
    std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) {
  return client_->sampled_logits(table, examples, num_sampled, seed, range);
}

void ServiceBackend::update_gradients(
    const std::string& table,
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step) {
  client_->update_gradients(table, items, step);
}

std::vector<ScoredKey> ServiceBackend::top_k(const std::string& table,
                                             const std::vector<float>& activation,
                                             std::uint32_t k) {
  return client_->top_k(table, activation, k);
}

// ---- training ------------------------------------------------------------------------

std::vector<SkipGramPair> window_pairs(const std::vector<std::string>& tokens,
                                       std::uint32_t window) {
  if (window == 0) {
    throw Error(ErrorCode::kInvalidConfig, "window must be at least 1");
  }
  std::vector<SkipGramPair> pairs;
  const std::int64_t n = static_cast<std::int64_t>(tokens.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t d = -static_cast<std::int64_t>(window);
         d <= static_cast<std::int64_t>(window); ++d) {
      if (d == 0) continue;
      const std::int64_t j = i + d;
      if (j < 0 || j >= n) continue;
      pairs.push_back({tokens[static_cast<std::size_t>(i)],
                       tokens[static_cast<std::size_t>(j)]});
    }
  }
  return pairs;
}

double softmax_xent(const std::vector<float>& logits,
                    const std::vector<std::uint8_t>& label_flags,
                    std::vector<double>& d_logits) {
  const std::size_t n = logits.size();
  if (n == 0 || label_flags.size() != n) {
    throw Error(ErrorCode::kInternal, "logit/label shape mismatch");
  }
  std::size_t n_pos = 0;
  for (std::uint8_t f : label_flags) n_pos += (f != 0);
  if (n_pos == 0) {
    throw Error(ErrorCode::kInternal, "example with no positive label");
  }

  double max_logit = -std::numeric_limits<double>::infinity();
  for (float l : logits) max_logit = std::max(max_logit, static_cast<double>(l));
  double z = 0.0;
  std::vector<double> exps(n);
  for (std::size_t i = 0; i < n; ++i) {
    exps[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    z += exps[i];
  }

  const double target = 1.0 / static_cast<double>(n_pos);
  const double log_z = std::log(z);
  double loss = 0.0;
  d_logits.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = exps[i] / z;
    const double t = label_flags[i] ? target : 0.0;
    d_logits[i] = p - t;
    if (label_flags[i]) {
      loss -= t * (static_cast<double>(logits[i]) - max_logit - log_z);
    }
  }
  return loss;
}

namespace {

// Creates every vocabulary key in both tables up front, in deterministic
// chunks. Training then never changes the resident set mid-run, so a step
// that dies on an unreachable shard leaves no partial state behind: the
// forward reads it completed mutated nothing, and the failing call aborts the
// step before either update runs.
void materialize_vocab(TrainerBackend& backend, const Vocabulary& vocab) {
  const std::vector<std::string> keys = vocab.mapped_vocab();
  constexpr std::size_t kChunk = 512;
  for (std::size_t begin = 0; begin < keys.size(); begin += kChunk) {
    const auto end = std::min(begin + kChunk, keys.size());
    std::vector<EmbeddingKey> chunk(keys.begin() + static_cast<std::ptrdiff_t>(begin),
                                    keys.begin() + static_cast<std::ptrdiff_t>(end));
    backend.lookup("emb_in", chunk, /*create_if_missing=*/true);
    backend.lookup("emb_out", chunk, /*create_if_missing=*/true);
  }
}

struct StepOutcome {
  double loss = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

StepOutcome run_step(TrainerBackend& backend, const TrainConfig& cfg,
                     const std::vector<SkipGramPair>& mapped,
                     std::uint64_t step) {
  const std::size_t stream = mapped.size();
  std::vector<EmbeddingKey> centers(cfg.batch);
  std::vector<EmbeddingKey> contexts(cfg.batch);
  for (std::uint32_t j = 0; j < cfg.batch; ++j) {
    const std::size_t idx =
        static_cast<std::size_t>((step * cfg.batch + j) % stream);
    centers[j] = mapped[idx].center;
    contexts[j] = mapped[idx].context;
  }

  StepOutcome outcome;
  try {
    // 1. Forward: center vectors (emb_in stores no bias, so rows are
    //    embedding_dim wide already).
    auto rows = backend.lookup("emb_in", centers, /*create_if_missing=*/true);
    std::vector<std::vector<float>> activations(cfg.batch);
    for (std::uint32_t j = 0; j < cfg.batch; ++j) {
      activations[j] = std::move(*rows[j]);
    }

    // 2. Sampled softmax logits, one shared candidate pool per step.
    std::vector<wire::SampledLogitsRequest::Example> examples(cfg.batch);
    for (std::uint32_t j = 0; j < cfg.batch; ++j) {
      examples[j].positives = {contexts[j]};
      examples[j].activation = activations[j];
    }
    auto logits = backend.sampled_logits("emb_out", examples, cfg.num_sampled,
                                         mix_seed(cfg.seed, step), cfg.range);

    // 3. Loss and gradients, in double, cast to f32 at the batch boundary.
    const std::uint32_t dim = cfg.embedding_dim;
    double loss_sum = 0.0;
    std::vector<std::pair<EmbeddingKey, std::vector<float>>> in_items;
    std::vector<std::pair<EmbeddingKey, std::vector<float>>> out_items;
    in_items.reserve(cfg.batch);
    out_items.reserve(static_cast<std::size_t>(cfg.batch) * (cfg.num_sampled + 1));
    std::vector<double> d;
    for (std::uint32_t j = 0; j < cfg.batch; ++j) {
      const SampledLogits& ex = logits[j];
      loss_sum += softmax_xent(ex.logits, ex.label_flags, d);

      std::vector<double> g_in(dim, 0.0);
      for (std::size_t i = 0; i < ex.ids.size(); ++i) {
        const std::vector<float>& w = ex.vectors[i];  // dim + 1 (bias last)
        std::vector<float> g_out(dim + 1);
        for (std::uint32_t c = 0; c < dim; ++c) {
          g_out[c] = static_cast<float>(d[i] * static_cast<double>(activations[j][c]));
          g_in[c] += d[i] * static_cast<double>(w[c]);
        }
        g_out[dim] = static_cast<float>(d[i]);  // d logit / d bias = 1
        out_items.emplace_back(ex.ids[i], std::move(g_out));
      }
      std::vector<float> g_in_f(dim);
      for (std::uint32_t c = 0; c < dim; ++c) g_in_f[c] = static_cast<float>(g_in[c]);
      in_items.emplace_back(centers[j], std::move(g_in_f));
    }

    // 4. Backward: centers first, then contexts/negatives. Duplicate keys
    //    aggregate server-side in occurrence order.
    backend.update_gradients("emb_in", in_items, step);
    backend.update_gradients("emb_out", out_items, step);

    outcome.loss = loss_sum / static_cast<double>(cfg.batch);
    outcome.ok = true;
  } catch (const Error&) {
    outcome.ok = false;  // the step is dropped whole; see failed_steps
  }
  return outcome;
}

}  // namespace

TrainResult train_skipgram(TrainerBackend& backend, const TrainConfig& cfg,
                           const std::vector<SkipGramPair>& pairs,
                           const Vocabulary& vocab) {
  if (cfg.batch == 0) {
    throw Error(ErrorCode::kInvalidConfig, "batch must be at least 1");
  }
  if (cfg.steps > 0 && pairs.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "no training pairs");
  }

  materialize_vocab(backend, vocab);

  std::vector<SkipGramPair> mapped;
  mapped.reserve(pairs.size());
  for (const auto& p : pairs) {
    mapped.push_back({vocab.map(p.center), vocab.map(p.context)});
  }

  TrainResult result;
  result.examples_per_epoch = mapped.size();
  result.losses.assign(cfg.steps, std::numeric_limits<double>::quiet_NaN());
  if (cfg.steps == 0) return result;

  std::mutex schedule_mu;
  std::mutex failed_mu;
  std::atomic<std::uint64_t> next{0};

  auto run = [&]() {
    while (true) {
      std::uint64_t s;
      bool skip = false;
      {
        std::lock_guard<std::mutex> lock(schedule_mu);
        s = next.fetch_add(1);
        if (s >= cfg.steps) break;
        if (cfg.before_step) cfg.before_step(s);
        skip = cfg.skip_step && cfg.skip_step(s);
      }
      if (skip) continue;  // excised: the step never happened
      StepOutcome out = run_step(backend, cfg, mapped, s);
      result.losses[s] = out.loss;
      if (!out.ok) {
        std::lock_guard<std::mutex> lock(failed_mu);
        result.failed_steps.push_back(s);
      }
    }
  };

  const std::uint32_t n_threads = std::max(1u, cfg.threads);
  if (n_threads == 1) {
    run();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::uint32_t t = 0; t < n_threads; ++t) threads.emplace_back(run);
    for (auto& t : threads) t.join();
  }
  std::sort(result.failed_steps.begin(), result.failed_steps.end());
  return result;
}

double eval_vocab_accuracy(TrainerBackend& backend,
                           const std::vector<SkipGramPair>& heldout,
                           const Vocabulary& vocab) {
  if (heldout.empty()) return 0.0;

  std::vector<EmbeddingKey> centers;
  centers.reserve(heldout.size());
  for (const auto& p : heldout) centers.push_back(vocab.map(p.center));
  auto rows = backend.lookup("emb_in", centers, /*create_if_missing=*/false);

  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    if (!rows[i]) continue;  // unknown center: counted incorrect
    auto top = backend.top_k("emb_out", *rows[i], 1);
    // The score is against the original context token: collapsing it to
    // "oov" during training destroyed information and is scored as a miss.
    if (!top.empty() && top[0].id == heldout[i].context) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

}  // namespace dynembed
