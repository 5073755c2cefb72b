// Wire protocol message codecs.
//
// Every request and reply body is a little-endian byte string built with
// ByteWriter/ByteReader (bytes.hpp).  Replies share one envelope:
//
//   u16 status      -- ErrorCode, 0 = ok
//   str message     -- empty on success, human-readable otherwise
//   payload...      -- message-specific, present only on success
//
// Message types 1..13 are listed in MsgType.  The master and the worker are
// distinct services: a few type numbers carry a different body on each (the
// client-facing Sample/Stats on the master versus the shard-level forms the
// master sends to workers); structs below are named by their destination.
// The full byte layouts are documented in docs/protocol.md.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynembed/bytes.hpp"
#include "dynembed/config.hpp"
#include "dynembed/error.hpp"
#include "dynembed/net.hpp"
#include "dynembed/retrieval.hpp"
#include "dynembed/sampler.hpp"

namespace dynembed::wire {

inline constexpr std::uint16_t kProtocolVersion = 1;

enum class MsgType : std::uint16_t {
  kHello = 1,
  kPing = 2,
  kCreateTable = 3,
  kLookup = 4,
  kUpdate = 5,
  kSample = 6,
  kSampledLogits = 7,
  kTopK = 8,
  kSave = 9,
  kRestore = 10,
  kStats = 11,
  kExportShard = 12,
  kImportShard = 13,
};

// ---- reply envelope ----------------------------------------------------

std::string encode_ok_reply(const std::string& payload);
std::string encode_error_reply(ErrorCode code, const std::string& message);

// Unwraps the envelope; throws Error(status, message) on non-ok status.
std::string decode_reply_payload(const Frame& reply);

// ---- shared codecs -----------------------------------------------------

// Full table configuration: name, then the canonical digest field encoding
// (config.hpp's encode_config_fields order).
void encode_table_config(ByteWriter& w, const TableConfig& config);
TableConfig decode_table_config(ByteReader& r);

void encode_key_list(ByteWriter& w, const std::vector<EmbeddingKey>& keys);
std::vector<EmbeddingKey> decode_key_list(ByteReader& r);

// ---- handshake / liveness ----------------------------------------------

struct HelloRequest {
  std::uint16_t version = kProtocolVersion;

  std::string encode() const;
  static HelloRequest decode(const std::string& payload);
};

struct HelloReply {
  std::uint16_t version = kProtocolVersion;
  std::uint8_t role = 0;  // 0 = worker, 1 = master
  std::uint8_t sandbox = 0;
  std::uint32_t shard_id = 0;
  std::uint32_t n_workers = 0;

  std::string encode() const;
  static HelloReply decode(const std::string& payload);
};

// Ping has empty request and reply payloads.

// ---- table lifecycle -----------------------------------------------------

struct CreateTableRequest {
  TableConfig config;

  std::string encode() const;
  static CreateTableRequest decode(const std::string& payload);
};

struct CreateTableReply {
  std::uint64_t digest = 0;
  std::uint8_t created = 0;  // 0 = attached to an existing identical table

  std::string encode() const;
  static CreateTableReply decode(const std::string& payload);
};

// ---- lookup / update -----------------------------------------------------

struct LookupRequest {
  std::string table;
  std::uint8_t create_if_missing = 0;
  std::uint8_t update_frequency = 0;
  std::vector<EmbeddingKey> keys;

  std::string encode() const;
  static LookupRequest decode(const std::string& payload);
};

struct LookupReply {
  struct Item {
    std::uint8_t present = 0;
    std::vector<float> vector;  // stored_dim wide when present or created
    std::uint64_t frequency = 0;
  };
  std::vector<Item> items;  // parallel to request keys

  std::string encode() const;
  static LookupReply decode(const std::string& payload);
};

enum class UpdateMode : std::uint8_t {
  kGradient = 0,  // items are gradients, applied through the optimizer
  kAssign = 1,    // items are stored vectors, replacing the current value
};

struct UpdateRequest {
  std::string table;
  UpdateMode mode = UpdateMode::kGradient;
  std::uint64_t step = 0;
  std::uint8_t count_frequency = 1;
  std::optional<float> learning_rate_override;
  std::vector<std::pair<EmbeddingKey, std::vector<float>>> items;

  std::string encode() const;
  static UpdateRequest decode(const std::string& payload);
};

struct UpdateReply {
  std::uint32_t applied = 0;

  std::string encode() const;
  static UpdateReply decode(const std::string& payload);
};

// ---- sampling ------------------------------------------------------------

// Client -> master.
struct SampleRequest {
  std::string table;
  std::uint64_t seed = 0;
  std::uint32_t num_sampled = 0;
  std::uint64_t range = 0;  // 0 = unrestricted
  std::vector<EmbeddingKey> positives;

  std::string encode() const;
  static SampleRequest decode(const std::string& payload);
};

struct SampleReply {
  std::vector<SampledResult> results;

  std::string encode() const;
  static SampleReply decode(const std::string& payload);
};

// Master -> worker: one shard's share of a draw.
struct ShardSampleRequest {
  std::string table;
  std::uint64_t seed = 0;
  std::uint32_t quota = 0;
  std::uint64_t range = 0;
  std::uint8_t strategy_kind = 0;  // effective strategy after fallback
  double strategy_power = 0.0;
  std::vector<EmbeddingKey> positives;  // the keys this shard owns

  std::string encode() const;
  static ShardSampleRequest decode(const std::string& payload);
};

struct ShardSampleReply {
  ShardSampleOutput output;

  std::string encode() const;
  static ShardSampleReply decode(const std::string& payload);
};

// Client -> master, one batched call per training step.
struct SampledLogitsRequest {
  struct Example {
    std::vector<EmbeddingKey> positives;
    std::vector<float> activation;  // embedding_dim wide
  };
  std::string table;
  std::uint64_t seed = 0;
  std::uint32_t num_sampled = 0;
  std::uint64_t range = 0;
  std::vector<Example> examples;

  std::string encode() const;
  static SampledLogitsRequest decode(const std::string& payload);
};

struct SampledLogitsReply {
  // One SampledLogits per request example; vectors are returned so clients
  // can form gradients without a second round trip.
  std::vector<SampledLogits> examples;

  std::string encode() const;
  static SampledLogitsReply decode(const std::string& payload);
};

// ---- retrieval -------------------------------------------------------------

struct TopKRequest {
  std::string table;
  std::uint32_t k = 0;
  std::vector<float> activation;  // embedding_dim wide

  std::string encode() const;
  static TopKRequest decode(const std::string& payload);
};

struct TopKReply {
  std::vector<ScoredKey> items;

  std::string encode() const;
  static TopKReply decode(const std::string& payload);
};

// ---- checkpointing ---------------------------------------------------------

struct SaveRequest {
  std::string path;  // checkpoint directory

  std::string encode() const;
  static SaveRequest decode(const std::string& payload);
};

struct SaveReply {
  std::string manifest_path;
  std::uint64_t step = 0;
  std::uint32_t tables = 0;

  std::string encode() const;
  static SaveReply decode(const std::string& payload);
};

struct RestoreRequest {
  std::string path;

  std::string encode() const;
  static RestoreRequest decode(const std::string& payload);
};

struct RestoreReply {
  std::uint32_t tables = 0;
  std::uint64_t records = 0;

  std::string encode() const;
  static RestoreReply decode(const std::string& payload);
};

// Master -> worker: write one table shard snapshot into a directory.
struct ExportShardRequest {
  std::string table;
  std::string dir;

  std::string encode() const;
  static ExportShardRequest decode(const std::string& payload);
};

struct ExportShardReply {
  std::string file;            // basename written inside dir
  std::uint64_t records = 0;   // records surviving the lifetime gates
  std::uint64_t digest = 0;    // xor of written record digests

  std::string encode() const;
  static ExportShardReply decode(const std::string& payload);
};

// Master -> worker: load the worker's share of the listed snapshot files.
struct ImportShardRequest {
  std::string table;
  std::uint32_t n_workers = 0;
  std::uint32_t shard_id = 0;
  std::vector<std::string> files;  // absolute snapshot paths

  std::string encode() const;
  static ImportShardRequest decode(const std::string& payload);
};

struct ImportShardReply {
  std::uint64_t applied = 0;

  std::string encode() const;
  static ImportShardReply decode(const std::string& payload);
};

// ---- stats -----------------------------------------------------------------

// Client -> master: service-wide summary.
struct StatsRequest {
  std::string encode() const { return {}; }
  static StatsRequest decode(const std::string& payload);
};

struct TableStats {
  std::string name;
  std::uint64_t config_digest = 0;
  std::uint32_t stored_dim = 0;
  std::uint64_t resident = 0;
  std::uint64_t state_digest = 0;
};

struct StatsReply {
  std::uint32_t n_workers = 0;
  std::uint64_t step = 0;
  std::vector<TableStats> tables;

  std::string encode() const;
  static StatsReply decode(const std::string& payload);
};

// Master -> worker: one shard's numbers for one table.
struct ShardStatsRequest {
  std::string table;

  std::string encode() const;
  static ShardStatsRequest decode(const std::string& payload);
};

struct ShardStatsReply {
  std::uint64_t resident_count = 0;
  double weight_sum = 0.0;  // under the table's configured strategy
  std::uint64_t state_digest = 0;

  std::string encode() const;
  static ShardStatsReply decode(const std::string& payload);
};

}  // namespace dynembed::wire
