// Client SDK: a pooled connection to the master plus per-table handles.
//
// A TableHandle is identified by (name, config_digest).  Every handle created
// in the process is recorded in a process-global registry (name, digest,
// endpoint — never embedding data), so tooling can enumerate what the process
// trains; the authoritative registry for save/restore lives in the master.
#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynembed/config.hpp"
#include "dynembed/net.hpp"
#include "dynembed/retrieval.hpp"
#include "dynembed/sampler.hpp"
#include "dynembed/wire.hpp"

namespace dynembed {

// Thread-safe master connection: each call borrows a pooled connection, so
// concurrent callers proceed in parallel. Stale pooled connections (master
// restarted) retry once on a fresh dial.
class ServiceClient {
 public:
  ServiceClient(std::string host, int port);

  const std::string& host() const { return host_; }
  int port() const { return port_; }

  wire::HelloReply hello();
  void ping();

  // Registers the table (or attaches to an identical existing one) and
  // returns its config digest.
  std::uint64_t create_table(const TableConfig& config);

  // One entry per key in request order; nullopt for keys that are absent and
  // not created. Vectors are stored_dim wide.
  std::vector<std::optional<std::vector<float>>> lookup(
      const std::string& table, const std::vector<EmbeddingKey>& keys,
      bool create_if_missing, bool update_frequency = false);

  // Gradient application through the table's configured optimizer. Rows must
  // be stored_dim wide; an optional learning-rate override replaces the
  // configured rate for this call only. Returns distinct keys touched.
  std::uint32_t update_gradients(
      const std::string& table,
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step, std::optional<float> learning_rate = std::nullopt,
      bool count_frequency = true);

  // Whole-vector assignment (stored_dim wide).
  std::uint32_t assign(
      const std::string& table,
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step, bool count_frequency = true);

  std::vector<SampledResult> sample(const std::string& table,
                                    const std::vector<EmbeddingKey>& positives,
                                    std::uint32_t num_sampled, std::uint64_t seed,
                                    std::uint64_t range = 0);

  std::vector<SampledLogits> sampled_logits(
      const std::string& table,
      const std::vector<wire::SampledLogitsRequest::Example>& examples,
      std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range = 0);

  std::vector<ScoredKey> top_k(const std::string& table,
                               const std::vector<float>& activation,
                               std::uint32_t k);

  wire::SaveReply save(const std::string& path);
  wire::RestoreReply restore(const std::string& path);
  wire::StatsReply stats();

 private:
  std::string call(wire::MsgType type, const std::string& body);

  std::string host_;
  int port_;
  std::mutex pool_mu_;
  std::vector<std::unique_ptr<Connection>> idle_;
  std::atomic<std::uint64_t> next_request_id_{1};
};

// A registered table bound to a client. Lookups return embedding_dim-wide
// rows (the bias column, when the table stores one, stays server-side and
// rides in sampled logits / top_k scores); *_stored variants expose the full
// stored row for gradient work.
class TableHandle {
 public:
  TableHandle(std::shared_ptr<ServiceClient> client, TableConfig config);

  const std::string& name() const { return config_.name; }
  const TableConfig& config() const { return config_; }
  std::uint64_t digest() const { return digest_; }

  // Forward pass: rows of width embedding_dim, one per key. Absent keys are
  // materialized when create_if_missing (training); otherwise zero rows with
  // present=false would be ambiguous, so serving lookups use try_lookup.
  std::vector<std::vector<float>> lookup(const std::vector<EmbeddingKey>& keys,
                                         bool create_if_missing = true);

  // Shape rule: output[i][j] is the embedding of keys[i][j] — one appended
  // axis of size embedding_dim.
  std::vector<std::vector<std::vector<float>>> lookup_2d(
      const std::vector<std::vector<EmbeddingKey>>& keys,
      bool create_if_missing = true);

  std::vector<std::optional<std::vector<float>>> try_lookup(
      const std::vector<EmbeddingKey>& keys);

  // Stored-width (embedding_dim + bias) rows, created when asked.
  std::vector<std::optional<std::vector<float>>> lookup_stored(
      const std::vector<EmbeddingKey>& keys, bool create_if_missing);

  // Backward pass: stored_dim-wide gradient rows, duplicates aggregated
  // server-side in occurrence order.
  void update_gradients(
      const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
      std::uint64_t step, std::optional<float> learning_rate = std::nullopt);

  void assign(const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
              std::uint64_t step, bool count_frequency = true);

  std::vector<SampledResult> sample(const std::vector<EmbeddingKey>& positives,
                                    std::uint32_t num_sampled, std::uint64_t seed,
                                    std::uint64_t range = 0);

  std::vector<SampledLogits> sampled_logits(
      const std::vector<wire::SampledLogitsRequest::Example>& examples,
      std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range = 0);

  std::vector<ScoredKey> top_k(const std::vector<float>& activation,
                               std::uint32_t k);

  ServiceClient& client() { return *client_; }

 private:
  std::shared_ptr<ServiceClient> client_;
  TableConfig config_;
  std::uint64_t digest_ = 0;
};

// Registers the table with the service and records the handle in the
// process-global handle registry.
std::shared_ptr<TableHandle> open_table(std::shared_ptr<ServiceClient> client,
                                        const TableConfig& config);

struct HandleRecord {
  std::string name;
  std::uint64_t digest = 0;
  std::string endpoint;
};

// Snapshot of every handle this process opened (metadata only).
std::vector<HandleRecord> registered_handles();
void reset_handle_registry();  // test isolation

}  // namespace dynembed
