// End-to-end service tests: real MasterServer + WorkerServer instances wired
// over loopback TCP and driven through the ServiceClient SDK.
//
// The load-bearing oracle throughout is a single InMemoryStore mirror fed the
// identical call trace through the same library entry points the workers use:
// sharding, transport, fan-out, and merge must add nothing and lose nothing
// relative to one store, bit for bit.
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dynembed/client.hpp"
#include "dynembed/config.hpp"
#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"
#include "dynembed/optim.hpp"
#include "dynembed/retrieval.hpp"
#include "dynembed/sampler.hpp"
#include "dynembed/service.hpp"
#include "dynembed/store.hpp"
#include "dynembed/wire.hpp"

namespace fs = std::filesystem;

namespace dynembed {
namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() /
           ("dynembed-service-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(n++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// n workers on ephemeral ports, one master wired to them, one client.
struct Cluster {
  std::vector<std::unique_ptr<WorkerServer>> workers;
  std::unique_ptr<MasterServer> master;
  std::shared_ptr<ServiceClient> client;

  explicit Cluster(std::vector<WorkerOptions> specs) {
    MasterOptions master_options;
    for (auto& spec : specs) {
      workers.push_back(std::make_unique<WorkerServer>(spec));
      workers.back()->start();
      master_options.workers.push_back("127.0.0.1:" +
                                       std::to_string(workers.back()->port()));
    }
    master = std::make_unique<MasterServer>(master_options);
    master->start();
    client = std::make_shared<ServiceClient>("127.0.0.1", master->port());
  }

  explicit Cluster(std::uint32_t n) : Cluster(memory_specs(n)) {}

  static std::vector<WorkerOptions> memory_specs(std::uint32_t n) {
    std::vector<WorkerOptions> specs(n);
    for (std::uint32_t i = 0; i < n; ++i) specs[i].shard_id = i;
    return specs;
  }
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TableConfig service_config(const std::string& name, std::uint32_t dim, bool bias,
                           OptimizerSpec optimizer, std::uint64_t seed) {
  TableConfig config = make_table_config(name, dim, bias, optimizer, seed);
  return config;
}

// Asks one worker, in process, for its shard statistics — the same handler the
// master's stats fan-out hits, without assuming anything about routing.
wire::ShardStatsReply shard_stats(WorkerServer& worker, const std::string& table) {
  wire::ShardStatsRequest request;
  request.table = table;
  Frame frame;
  frame.msg_type = static_cast<std::uint16_t>(wire::MsgType::kStats);
  frame.request_id = 1;
  frame.body = request.encode();
  return wire::ShardStatsReply::decode(wire::decode_reply_payload(worker.handle(frame)));
}

const wire::TableStats& table_stats(const wire::StatsReply& stats,
                                    const std::string& name) {
  for (const auto& table : stats.tables) {
    if (table.name == name) return table;
  }
  REQUIRE_MESSAGE(false, "table '" << name << "' missing from stats");
  static wire::TableStats unreachable;
  return unreachable;
}

std::vector<ScoredKey> brute_force_top_k(EmbeddingStore& store,
                                         const std::vector<float>& activation,
                                         std::uint32_t k) {
  const std::uint32_t dim = store.config().embedding_dim;
  std::vector<ScoredKey> all;
  store.for_each([&](const EmbeddingKey& key, const EmbeddingEntry& entry) {
    double raw = dot_double(activation.data(), entry.vector.data(), dim);
    if (store.config().has_bias) raw += entry.vector[dim];
    all.push_back({key, static_cast<float>(raw)});
  });
  std::sort(all.begin(), all.end(), scored_before);
  if (all.size() > k) all.resize(k);
  return all;
}

TEST_CASE("hello reports role, shard identity, and topology") {
  Cluster cluster(2);

  wire::HelloReply master_hello = cluster.client->hello();
  CHECK(master_hello.version == wire::kProtocolVersion);
  CHECK(master_hello.role == 1);
  CHECK(master_hello.n_workers == 2);

  for (std::uint32_t i = 0; i < 2; ++i) {
    ServiceClient direct("127.0.0.1", cluster.workers[i]->port());
    wire::HelloReply worker_hello = direct.hello();
    CHECK(worker_hello.role == 0);
    CHECK(worker_hello.shard_id == i);
    CHECK(worker_hello.sandbox == 0);
  }

  cluster.client->ping();
}

TEST_CASE("create_table registers, re-attaches identically, rejects conflicts") {
  Cluster cluster(2);
  TableConfig config =
      service_config("words", 4, true, OptimizerSpec::sgd(0.1f), 99);

  const std::uint64_t digest = cluster.client->create_table(config);
  CHECK(digest == config_digest(config));

  // Same config again: an idempotent re-attach, not an error.
  CHECK(cluster.client->create_table(config) == digest);

  TableConfig conflicting = config;
  conflicting.embedding_dim = 5;
  CHECK(code_of([&] { cluster.client->create_table(conflicting); }) ==
        ErrorCode::kTableExists);

  wire::StatsReply stats = cluster.client->stats();
  CHECK(stats.n_workers == 2);
  const wire::TableStats& table = table_stats(stats, "words");
  CHECK(table.config_digest == digest);
  CHECK(table.stored_dim == 5);
  CHECK(table.resident == 0);

  CHECK(code_of([&] { cluster.client->lookup("unknown", {"k"}, false); }) ==
        ErrorCode::kTableNotFound);
}

TEST_CASE("four sharded workers behave exactly like one store") {
  Cluster cluster(4);
  TableConfig config =
      service_config("emb", 3, true, OptimizerSpec::adagrad(0.05f), 1234);
  cluster.client->create_table(config);
  InMemoryStore mirror(config);

  std::vector<EmbeddingKey> keys;
  for (int i = 0; i < 60; ++i) keys.push_back("key" + std::to_string(i));

  // Creating lookups, duplicates served per occurrence in request order.
  std::vector<EmbeddingKey> batch = {"key0", "key7", "key0", "key33", "key7", "key0"};
  auto got = cluster.client->lookup("emb", batch, /*create_if_missing=*/true,
                                    /*update_frequency=*/true);
  auto want = mirror.lookup(batch, {.create_if_missing = true, .update_frequency = true});
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(got[i].has_value());
    CHECK(same_bits(*got[i], want[i]->vector));
  }

  auto rest = cluster.client->lookup("emb", keys, true, true);
  auto rest_want = mirror.lookup(keys, {.create_if_missing = true, .update_frequency = true});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    CHECK(same_bits(*rest[i], rest_want[i]->vector));
  }

  // Absent keys stay absent without create_if_missing.
  auto absent = cluster.client->lookup("emb", {"nope", "key1"}, false);
  CHECK_FALSE(absent[0].has_value());
  CHECK(absent[1].has_value());

  // Gradient updates with duplicate keys, three rounds. The mirror applies
  // the whole batch through the worker's own entry point; per-key occurrence
  // order survives the shard split because each key lives on one shard.
  std::uint64_t state = 42;
  auto next_float = [&state] {
    state = splitmix64_next(state);
    return static_cast<float>(unit_double(state)) - 0.5f;
  };
  for (std::uint64_t step = 1; step <= 3; ++step) {
    GradientBatch all;
    std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      std::vector<float> gradient(config.stored_dim());
      for (float& g : gradient) g = next_float();
      const EmbeddingKey& key = keys[i % 40];  // keys 0..19 repeat
      all.keys.push_back(key);
      all.gradients.push_back(gradient);
      items.emplace_back(key, gradient);
    }
    const std::uint32_t applied =
        cluster.client->update_gradients("emb", items, step);
    CHECK(applied == 40);  // distinct keys per round
    apply_gradients(mirror, all, step, config.optimizer, true);
  }

  auto after = cluster.client->lookup("emb", keys, false);
  auto after_want = mirror.lookup(keys, {});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(after[i].has_value());
    CHECK(same_bits(*after[i], after_want[i]->vector));
  }

  // Whole-vector assignment follows the same route.
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> assigns;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> value(config.stored_dim(), 0.25f * static_cast<float>(i));
    assigns.emplace_back(keys[i], value);
  }
  cluster.client->assign("emb", assigns, /*step=*/9);
  for (const auto& [key, value] : assigns) {
    mirror.update(
        {key}, 9,
        [&value = value](const EmbeddingKey&, EmbeddingEntry& entry) {
          entry.vector = value;
        },
        true);
  }
  auto assigned = cluster.client->lookup("emb", keys, false);
  auto assigned_want = mirror.lookup(keys, {});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    CHECK(same_bits(*assigned[i], assigned_want[i]->vector));
  }

  // Shard population is exactly shard_of, and the per-shard digests XOR to
  // the single-store digest.
  std::map<std::uint32_t, std::uint64_t> expected_per_shard;
  mirror.for_each([&](const EmbeddingKey& key, const EmbeddingEntry&) {
    expected_per_shard[shard_of(key, 4)]++;
  });
  std::uint64_t combined_digest = 0;
  std::uint64_t total_resident = 0;
  for (std::uint32_t s = 0; s < 4; ++s) {
    wire::ShardStatsReply shard = shard_stats(*cluster.workers[s], "emb");
    CHECK(shard.resident_count == expected_per_shard[s]);
    combined_digest ^= shard.state_digest;
    total_resident += shard.resident_count;
  }
  CHECK(total_resident == mirror.resident_count());
  CHECK(combined_digest == mirror.state_digest());

  const wire::TableStats& table = table_stats(cluster.client->stats(), "emb");
  CHECK(table.resident == mirror.resident_count());
  CHECK(table.state_digest == mirror.state_digest());
}

TEST_CASE("single-worker sampled logits are bitwise the in-process pipeline") {
  Cluster cluster(1);
  TableConfig config =
      service_config("out", 4, true, OptimizerSpec::sgd(0.1f), 7);
  config.sampler_strategy = SamplerStrategy::frequency_power(0.75);
  cluster.client->create_table(config);
  InMemoryStore mirror(config);

  std::vector<EmbeddingKey> vocab;
  for (int i = 0; i < 12; ++i) vocab.push_back("tok" + std::to_string(i));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    std::vector<EmbeddingKey> bumps(i + 1, vocab[i]);  // frequency = i + 1
    cluster.client->lookup("out", bumps, true, true);
    mirror.lookup(bumps, {.create_if_missing = true, .update_frequency = true});
  }

  std::vector<wire::SampledLogitsRequest::Example> examples(3);
  examples[0].positives = {"tok3"};
  examples[0].activation = {0.5f, -0.25f, 1.0f, 0.125f};
  examples[1].positives = {"tok1", "tok9", "tok1"};  // duplicates fold
  examples[1].activation = {-1.0f, 0.0f, 0.5f, 2.0f};
  examples[2].positives = {"phantom"};  // absent positive
  examples[2].activation = {0.0f, 1.0f, -1.0f, 0.25f};

  const std::uint64_t seed = 0xfeedface;
  const std::uint32_t num_sampled = 5;
  auto got = cluster.client->sampled_logits("out", examples, num_sampled, seed);
  REQUIRE(got.size() == examples.size());

  for (std::size_t e = 0; e < examples.size(); ++e) {
    SampledLogits want = compute_sampled_logits(
        mirror, examples[e].positives, examples[e].activation, num_sampled, seed);
    CHECK(got[e].ids == want.ids);
    CHECK(got[e].label_flags == want.label_flags);
    CHECK(same_bits(got[e].logits, want.logits));
    CHECK(got[e].probs == want.probs);
    REQUIRE(got[e].vectors.size() == want.vectors.size());
    for (std::size_t i = 0; i < want.vectors.size(); ++i) {
      CHECK(same_bits(got[e].vectors[i], want.vectors[i]));
    }
  }

  // The plain sample path rides the same round.
  auto drawn = cluster.client->sample("out", {"tok3"}, num_sampled, seed);
  auto drawn_want = sample(mirror, {"tok3"}, num_sampled, seed);
  REQUIRE(drawn.size() == drawn_want.size());
  for (std::size_t i = 0; i < drawn.size(); ++i) CHECK(drawn[i] == drawn_want[i]);
}

TEST_CASE("distributed top-k equals brute force over the union, ties included") {
  Cluster cluster(3);
  TableConfig config =
      service_config("scores", 2, true, OptimizerSpec::sgd(0.1f), 3);
  cluster.client->create_table(config);
  InMemoryStore mirror(config);

  // Quantized values force score ties that must break on key bytes across
  // shard boundaries.
  std::uint64_t state = 7;
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> rows;
  for (int i = 0; i < 90; ++i) {
    state = splitmix64_next(state);
    std::vector<float> value(3);
    value[0] = 0.25f * static_cast<float>(state % 5);
    value[1] = 0.25f * static_cast<float>((state >> 8) % 5);
    value[2] = 0.5f * static_cast<float>((state >> 16) % 3);  // bias
    rows.emplace_back("item" + std::to_string(i), value);
  }
  cluster.client->assign("scores", rows, 1);
  for (const auto& [key, value] : rows) {
    mirror.update(
        {key}, 1,
        [&value = value](const EmbeddingKey&, EmbeddingEntry& entry) {
          entry.vector = value;
        },
        true);
  }

  const std::vector<float> activation = {1.0f, 2.0f};
  for (std::uint32_t k : {1u, 5u, 50u, 1000u}) {
    auto got = cluster.client->top_k("scores", activation, k);
    auto want = brute_force_top_k(mirror, activation, k);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].score == want[i].score);
    }
  }

  CHECK(code_of([&] { cluster.client->top_k("scores", {1.0f}, 3); }) ==
        ErrorCode::kDimensionMismatch);
  CHECK(code_of([&] { cluster.client->top_k("scores", activation, 0); }) ==
        ErrorCode::kInvalidConfig);
}

TEST_CASE("checkpoints round-trip byte-identically on the same topology") {
  TempDir checkpoint;
  Cluster cluster(2);
  TableConfig config =
      service_config("emb", 3, false, OptimizerSpec::adagrad(0.1f), 11);
  cluster.client->create_table(config);

  std::vector<EmbeddingKey> keys;
  for (int i = 0; i < 30; ++i) keys.push_back("w" + std::to_string(i));
  cluster.client->lookup("emb", keys, true, true);
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;
  for (const auto& key : keys) items.emplace_back(key, std::vector<float>{0.1f, -0.2f, 0.3f});
  cluster.client->update_gradients("emb", items, /*step=*/5);

  auto before = cluster.client->lookup("emb", keys, false);
  const wire::TableStats before_stats = table_stats(cluster.client->stats(), "emb");

  wire::SaveReply saved = cluster.client->save(checkpoint.path.string());
  CHECK(saved.tables == 1);
  CHECK(saved.step == 5);
  CHECK(fs::exists(saved.manifest_path));
  CHECK(fs::exists(checkpoint.path / "emb.0.snap"));
  CHECK(fs::exists(checkpoint.path / "emb.1.snap"));

  // Diverge, then restore; the checkpoint must win completely.
  cluster.client->update_gradients("emb", items, /*step=*/6);
  auto diverged = cluster.client->lookup("emb", {keys[0]}, false);
  CHECK_FALSE(same_bits(*diverged[0], *before[0]));

  wire::RestoreReply restored = cluster.client->restore(checkpoint.path.string());
  CHECK(restored.tables == 1);
  CHECK(restored.records == 30);

  auto after = cluster.client->lookup("emb", keys, false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(after[i].has_value());
    CHECK(same_bits(*after[i], *before[i]));
  }
  const wire::TableStats after_stats = table_stats(cluster.client->stats(), "emb");
  CHECK(after_stats.resident == before_stats.resident);
  CHECK(after_stats.state_digest == before_stats.state_digest);
}

TEST_CASE("restore re-partitions a two-worker checkpoint onto four workers") {
  TempDir checkpoint;
  TableConfig config =
      service_config("emb", 4, true, OptimizerSpec::momentum(0.1f, 0.9f), 21);

  std::vector<EmbeddingKey> keys;
  for (int i = 0; i < 40; ++i) keys.push_back("word" + std::to_string(i));

  std::vector<std::optional<std::vector<float>>> before;
  std::uint64_t before_digest = 0;
  {
    Cluster source(2);
    source.client->create_table(config);
    source.client->lookup("emb", keys, true, true);
    std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;
    for (const auto& key : keys) {
      items.emplace_back(key, std::vector<float>(config.stored_dim(), 0.01f));
    }
    source.client->update_gradients("emb", items, 3);
    before = source.client->lookup("emb", keys, false);
    before_digest = table_stats(source.client->stats(), "emb").state_digest;
    source.client->save(checkpoint.path.string());
  }

  Cluster wider(4);
  // The fresh master knows nothing yet; the manifest reconstructs the table.
  wire::RestoreReply restored = wider.client->restore(checkpoint.path.string());
  CHECK(restored.tables == 1);
  CHECK(restored.records == 40);

  auto after = wider.client->lookup("emb", keys, false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(after[i].has_value());
    CHECK(same_bits(*after[i], *before[i]));
  }

  // Every record landed on the shard that owns it under the new count, and
  // the partition-independent digest is unchanged.
  std::uint64_t combined = 0;
  for (std::uint32_t s = 0; s < 4; ++s) {
    wire::ShardStatsReply shard = shard_stats(*wider.workers[s], "emb");
    std::uint64_t expected = 0;
    for (const auto& key : keys) {
      if (shard_of(key, 4) == s) ++expected;
    }
    CHECK(shard.resident_count == expected);
    combined ^= shard.state_digest;
  }
  CHECK(combined == before_digest);
}

TEST_CASE("restore rejects missing snapshots and conflicting registrations") {
  TempDir checkpoint;
  TableConfig config = service_config("emb", 2, false, OptimizerSpec::sgd(0.1f), 5);
  {
    Cluster source(2);
    source.client->create_table(config);
    source.client->lookup("emb", {"a", "b", "c", "d"}, true);
    source.client->save(checkpoint.path.string());
  }

  SUBCASE("a deleted shard snapshot fails the whole restore") {
    fs::remove(checkpoint.path / "emb.1.snap");
    Cluster fresh(2);
    CHECK(code_of([&] { fresh.client->restore(checkpoint.path.string()); }) ==
          ErrorCode::kPartialCheckpoint);
    // Nothing was registered by the failed restore.
    CHECK(fresh.client->stats().tables.empty());
  }

  SUBCASE("a missing manifest fails the restore") {
    Cluster fresh(2);
    CHECK(code_of([&] {
            fresh.client->restore((checkpoint.path / "nowhere").string());
          }) == ErrorCode::kPartialCheckpoint);
  }

  SUBCASE("an existing table with a different config is a digest conflict") {
    Cluster fresh(2);
    TableConfig conflicting = config;
    conflicting.embedding_dim = 3;
    fresh.client->create_table(conflicting);
    CHECK(code_of([&] { fresh.client->restore(checkpoint.path.string()); }) ==
          ErrorCode::kDigestMismatch);
  }
}

TEST_CASE("sandboxed workers serve reads but reject every mutation path") {
  TempDir data;
  TempDir checkpoint;
  TableConfig config =
      service_config("emb", 3, true, OptimizerSpec::sgd(0.1f), 77);

  std::vector<EmbeddingKey> keys = {"alpha", "beta", "gamma", "delta"};
  std::vector<std::optional<std::vector<float>>> before;
  std::uint64_t before_digest = 0;

  auto file_spec = [&](bool sandbox) {
    WorkerOptions options;
    options.shard_id = 0;
    options.backend = WorkerBackend::parse("file:" + data.path.string());
    options.sandbox = sandbox;
    return std::vector<WorkerOptions>{options};
  };

  {
    Cluster live(file_spec(false));
    live.client->create_table(config);
    live.client->lookup("emb", keys, true, true);
    std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;
    for (const auto& key : keys) {
      items.emplace_back(key, std::vector<float>(config.stored_dim(), 0.5f));
    }
    live.client->update_gradients("emb", items, 2);
    before = live.client->lookup("emb", keys, false);
    before_digest = table_stats(live.client->stats(), "emb").state_digest;
    live.client->save(checkpoint.path.string());
  }

  Cluster guarded(file_spec(true));
  ServiceClient direct("127.0.0.1", guarded.workers[0]->port());
  CHECK(direct.hello().sandbox == 1);

  // Re-attaching the identical table is allowed — the worker recovered it
  // from its own storage at boot — and is required before anything routes.
  CHECK(guarded.client->create_table(config) == config_digest(config));

  // Reads serve the persisted bytes.
  auto read_back = guarded.client->lookup("emb", keys, false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(read_back[i].has_value());
    CHECK(same_bits(*read_back[i], *before[i]));
  }

  // Every write path is refused outright.
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> attack = {
      {"alpha", std::vector<float>(config.stored_dim(), 9.0f)}};
  CHECK(code_of([&] { guarded.client->update_gradients("emb", attack, 10); }) ==
        ErrorCode::kSandboxViolation);
  CHECK(code_of([&] { guarded.client->assign("emb", attack, 10); }) ==
        ErrorCode::kSandboxViolation);
  TableConfig other = service_config("other", 2, false, OptimizerSpec::sgd(0.1f), 1);
  CHECK(code_of([&] { guarded.client->create_table(other); }) ==
        ErrorCode::kSandboxViolation);
  TempDir exfil;
  CHECK(code_of([&] { guarded.client->save(exfil.path.string()); }) ==
        ErrorCode::kSandboxViolation);
  CHECK(code_of([&] { guarded.client->restore(checkpoint.path.string()); }) ==
        ErrorCode::kSandboxViolation);

  // Creating lookups are coerced to plain reads: nothing materializes and
  // frequencies stay put.
  auto coerced = guarded.client->lookup("emb", {"intruder", "alpha"},
                                        /*create_if_missing=*/true,
                                        /*update_frequency=*/true);
  CHECK_FALSE(coerced[0].has_value());
  CHECK(coerced[1].has_value());

  const wire::TableStats after = table_stats(guarded.client->stats(), "emb");
  CHECK(after.resident == keys.size());
  CHECK(after.state_digest == before_digest);
}

TEST_CASE("a crashed worker resumes its shard after restart") {
  TempDir data0;
  TempDir data1;
  auto specs = [&] {
    std::vector<WorkerOptions> s(2);
    s[0].shard_id = 0;
    s[0].backend = WorkerBackend::parse("file:" + data0.path.string());
    s[1].shard_id = 1;
    s[1].backend = WorkerBackend::parse("file:" + data1.path.string());
    return s;
  }();

  Cluster cluster(specs);
  TableConfig config =
      service_config("emb", 3, false, OptimizerSpec::sgd(0.2f), 13);
  cluster.client->create_table(config);

  std::vector<EmbeddingKey> keys;
  std::vector<EmbeddingKey> shard0_keys;
  for (int i = 0; i < 30; ++i) {
    keys.push_back("node" + std::to_string(i));
    if (shard_of(keys.back(), 2) == 0) shard0_keys.push_back(keys.back());
  }
  REQUIRE(!shard0_keys.empty());
  REQUIRE(shard0_keys.size() < keys.size());

  cluster.client->lookup("emb", keys, true, true);
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;
  for (const auto& key : keys) items.emplace_back(key, std::vector<float>{1.0f, 2.0f, 3.0f});
  cluster.client->update_gradients("emb", items, 1);

  auto before = cluster.client->lookup("emb", keys, false);
  const std::uint64_t before_digest =
      table_stats(cluster.client->stats(), "emb").state_digest;

  // Kill worker 1 (acknowledged writes are already in its log).
  const int port1 = cluster.workers[1]->port();
  cluster.workers[1].reset();

  // Requests touching shard 1 fail loudly; shard-0-only requests still serve.
  CHECK(code_of([&] { cluster.client->lookup("emb", keys, false); }) ==
        ErrorCode::kWorkerUnreachable);
  auto partial = cluster.client->lookup("emb", shard0_keys, false);
  for (const auto& row : partial) CHECK(row.has_value());

  // Restart on the same endpoint; the master's next dial finds it.
  WorkerOptions revive = specs[1];
  revive.port = port1;
  cluster.workers[1] = std::make_unique<WorkerServer>(revive);
  cluster.workers[1]->start();

  auto after = cluster.client->lookup("emb", keys, false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(after[i].has_value());
    CHECK(same_bits(*after[i], *before[i]));
  }
  CHECK(table_stats(cluster.client->stats(), "emb").state_digest == before_digest);

  // The revived shard accepts new work.
  cluster.client->update_gradients("emb", items, 2);
  CHECK(table_stats(cluster.client->stats(), "emb").state_digest != before_digest);
}

TEST_CASE("a new master rebuilds routing from re-attached tables") {
  Cluster cluster(2);
  TableConfig config =
      service_config("emb", 2, false, OptimizerSpec::sgd(0.1f), 17);
  cluster.client->create_table(config);
  std::vector<EmbeddingKey> keys = {"p", "q", "r", "s", "t"};
  cluster.client->lookup("emb", keys, true);
  auto before = cluster.client->lookup("emb", keys, false);

  // The master process goes away; the workers and their state stay.
  MasterOptions options;
  for (const auto& worker : cluster.workers) {
    options.workers.push_back("127.0.0.1:" + std::to_string(worker->port()));
  }
  cluster.client.reset();
  cluster.master.reset();

  cluster.master = std::make_unique<MasterServer>(options);
  cluster.master->start();
  cluster.client = std::make_shared<ServiceClient>("127.0.0.1", cluster.master->port());

  // A fresh master has an empty registry until clients re-attach.
  CHECK(cluster.client->stats().tables.empty());
  CHECK(code_of([&] { cluster.client->lookup("emb", keys, false); }) ==
        ErrorCode::kTableNotFound);

  CHECK(cluster.client->create_table(config) == config_digest(config));
  auto after = cluster.client->lookup("emb", keys, false);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(after[i].has_value());
    CHECK(same_bits(*after[i], *before[i]));
  }
  CHECK(table_stats(cluster.client->stats(), "emb").resident == keys.size());
}

TEST_CASE("table handles strip the bias column and record their registry entry") {
  reset_handle_registry();
  Cluster cluster(2);
  TableConfig config =
      service_config("emb", 3, true, OptimizerSpec::sgd(0.1f), 23);

  std::shared_ptr<TableHandle> handle = open_table(cluster.client, config);
  CHECK(handle->digest() == config_digest(config));

  auto rows = handle->lookup({"x", "y"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].size() == 3);  // embedding_dim, bias stays server-side

  auto stored = handle->lookup_stored({"x"}, false);
  REQUIRE(stored[0].has_value());
  CHECK(stored[0]->size() == 4);
  CHECK(same_bits(std::vector<float>(stored[0]->begin(), stored[0]->begin() + 3),
                  rows[0]));

  auto grid = handle->lookup_2d({{"x", "y"}, {"z"}});
  REQUIRE(grid.size() == 2);
  CHECK(grid[0].size() == 2);
  CHECK(grid[1].size() == 1);
  CHECK(grid[0][0].size() == 3);
  CHECK(same_bits(grid[0][0], rows[0]));

  auto missing = handle->try_lookup({"never-seen"});
  CHECK_FALSE(missing[0].has_value());

  auto records = registered_handles();
  REQUIRE(records.size() == 1);
  CHECK(records[0].name == "emb");
  CHECK(records[0].digest == config_digest(config));
  CHECK(records[0].endpoint ==
        "127.0.0.1:" + std::to_string(cluster.master->port()));
  reset_handle_registry();
}

}  // namespace
}  // namespace dynembed
