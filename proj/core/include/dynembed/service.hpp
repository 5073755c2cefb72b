// The master/worker embedding service.
//
// Topology (one master, n workers):
//
//   client ──frames──► MasterServer ──frames──► WorkerServer[i]
//
// The master is stateless apart from the shard map and the table registry
// (rebuilt from CreateTable requests and checkpoint manifests); all embedding
// state lives in the workers.  Worker i owns exactly the keys with
// shard_of(key, n) == i, a pure function of (key, n_workers), so a restarted
// worker resumes the identical shard.
//
// Both servers share the framed TCP transport (net.hpp) and the message
// codecs (wire.hpp); handlers are also callable in-process through handle()
// so integration tests can drive the exact production code paths without
// sockets.
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "dynembed/bloom.hpp"
#include "dynembed/config.hpp"
#include "dynembed/net.hpp"
#include "dynembed/remote_kv.hpp"
#include "dynembed/store.hpp"
#include "dynembed/wire.hpp"

namespace dynembed {

// shard_of(key) = key_hash(key) mod n_workers.
std::uint32_t shard_of(const EmbeddingKey& key, std::uint32_t n_workers);

// How a worker actually stores table contents, regardless of what backend the
// table configuration requests. Parsed from the CLI's
// --backend {memory|file:DIR|remote:NAME}.
struct WorkerBackend {
  enum class Kind { kMemory, kFile, kRemote };
  Kind kind = Kind::kMemory;
  std::string detail;  // DIR or NAME

  static WorkerBackend parse(const std::string& flag);
  bool persistent() const { return kind != Kind::kMemory; }
};

struct WorkerOptions {
  int port = 0;  // 0 picks an ephemeral port
  std::uint32_t shard_id = 0;
  WorkerBackend backend;
  bool sandbox = false;
};

class WorkerServer {
 public:
  explicit WorkerServer(WorkerOptions options);
  ~WorkerServer();

  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  void start();
  void stop();
  int port() const { return server_->bound_port(); }

  // The dispatch entry point the TCP server uses; public so tests can call
  // handlers in-process.
  Frame handle(const Frame& request);

  std::uint32_t shard_id() const { return options_.shard_id; }
  bool sandbox() const { return options_.sandbox; }

 private:
  struct Table {
    TableConfig identity;  // as registered by clients; digest source
    std::uint64_t digest = 0;
    std::unique_ptr<EmbeddingStore> store;
    std::unique_ptr<CountingBloomFilter> admission;
    std::mutex admission_mu;
  };

  // Table registration shared by CreateTable and the boot-time recovery scan.
  Table& register_table(const TableConfig& identity, bool persist);
  Table& find_table(const std::string& name);
  TableConfig storage_config(const TableConfig& identity) const;
  void recover_tables();

  std::string handle_payload(wire::MsgType type, const std::string& payload);

  std::string on_create_table(const std::string& payload);
  std::string on_lookup(const std::string& payload);
  std::string on_update(const std::string& payload);
  std::string on_sample(const std::string& payload);
  std::string on_top_k(const std::string& payload);
  std::string on_stats(const std::string& payload);
  std::string on_export_shard(const std::string& payload);
  std::string on_import_shard(const std::string& payload);

  WorkerOptions options_;
  std::shared_ptr<RemoteKv> kv_;  // set for persistent backends
  std::string kv_name_;
  std::shared_mutex tables_mu_;
  std::map<std::string, std::unique_ptr<Table>> tables_;
  std::unique_ptr<TcpServer> server_;
};

struct MasterOptions {
  int port = 0;
  std::vector<std::string> workers;  // host:port per shard, index = shard id
};

class MasterServer {
 public:
  explicit MasterServer(MasterOptions options);
  ~MasterServer();

  MasterServer(const MasterServer&) = delete;
  MasterServer& operator=(const MasterServer&) = delete;

  void start();
  void stop();
  int port() const { return server_->bound_port(); }
  std::uint32_t n_workers() const { return static_cast<std::uint32_t>(links_.size()); }

  Frame handle(const Frame& request);

 private:
  struct WorkerLink {
    std::string host;
    int port = 0;
    std::mutex mu;
    std::vector<std::unique_ptr<Connection>> idle;
  };

  // One request/response against worker `shard`, on a pooled connection.
  // Transport failures retry once on a fresh dial, then surface as
  // kWorkerUnreachable naming the shard; in-band errors propagate as-is.
  std::string call_worker(std::uint32_t shard, wire::MsgType type,
                          const std::string& body);
  // Runs call_worker against each (shard, body) pair concurrently.
  std::vector<std::string> fan_out(const std::vector<std::uint32_t>& shards,
                                   wire::MsgType type,
                                   const std::vector<std::string>& bodies);
  std::vector<std::string> broadcast(wire::MsgType type, const std::string& body);

  TableConfig registered_config(const std::string& name);
  void note_step(std::uint64_t step);

  // The sampling round shared by Sample and SampledLogits: stats, fallback
  // resolution, proportional quotas, shard fan-out, pool merge.
  SamplePool run_sample_round(const TableConfig& config, std::uint64_t seed,
                              std::uint32_t num_sampled, std::uint64_t range,
                              const std::vector<EmbeddingKey>& positives);

  std::string handle_payload(wire::MsgType type, const std::string& payload);

  std::string on_create_table(const std::string& payload);
  std::string on_lookup(const std::string& payload);
  std::string on_update(const std::string& payload);
  std::string on_sample(const std::string& payload);
  std::string on_sampled_logits(const std::string& payload);
  std::string on_top_k(const std::string& payload);
  std::string on_save(const std::string& payload);
  std::string on_restore(const std::string& payload);
  std::string on_stats(const std::string& payload);

  MasterOptions options_;
  std::vector<std::unique_ptr<WorkerLink>> links_;
  std::shared_mutex registry_mu_;
  std::map<std::string, TableConfig> registry_;
  std::mutex create_mu_;  // serializes CreateTable/Restore registration
  std::atomic<std::uint64_t> last_step_{0};
  std::atomic<std::uint64_t> next_request_id_{1};
  std::unique_ptr<TcpServer> server_;
};

}  // namespace dynembed
