#include "dynembed/service.hpp"

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "dynembed/hash.hpp"
#include "dynembed/optim.hpp"
#include "dynembed/retrieval.hpp"
#include "dynembed/sampler.hpp"
#include "dynembed/snapshot.hpp"

namespace dynembed {

namespace fs = std::filesystem;
using wire::MsgType;

std::uint32_t shard_of(const EmbeddingKey& key, std::uint32_t n_workers) {
  return static_cast<std::uint32_t>(key_hash(key) % n_workers);
}

namespace {

constexpr char kMetaPrefix[] = "meta/";

// Dispatch wrapper shared by both servers: handler exceptions become in-band
// error replies, so a bad request never tears down the connection.
Frame dispatch(const Frame& request,
               const std::function<std::string(MsgType, const std::string&)>& fn) {
  Frame reply;
  reply.msg_type = request.msg_type;
  reply.request_id = request.request_id;
  try {
    reply.body = wire::encode_ok_reply(
        fn(static_cast<MsgType>(request.msg_type), request.body));
  } catch (const Error& e) {
    reply.body = wire::encode_error_reply(e.code(), e.message());
  } catch (const std::exception& e) {
    reply.body = wire::encode_error_reply(ErrorCode::kInternal, e.what());
  }
  return reply;
}

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hex_bytes(const std::string& raw) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string unhex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::kFormatError, "odd hex length");
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_nibble(hex[i]);
    int lo = hex_nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::kFormatError, "bad hex digit");
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

std::uint64_t parse_hex_u64(const std::string& hex) {
  if (hex.empty() || hex.size() > 16) {
    throw Error(ErrorCode::kFormatError, "bad u64 hex '" + hex + "'");
  }
  std::uint64_t v = 0;
  for (char c : hex) {
    int nib = hex_nibble(c);
    if (nib < 0) throw Error(ErrorCode::kFormatError, "bad u64 hex '" + hex + "'");
    v = (v << 4) | static_cast<std::uint64_t>(nib);
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// WorkerServer
// ---------------------------------------------------------------------------

WorkerBackend WorkerBackend::parse(const std::string& flag) {
  WorkerBackend b;
  if (flag == "memory") {
    b.kind = Kind::kMemory;
    return b;
  }
  if (flag.rfind("file:", 0) == 0 && flag.size() > 5) {
    b.kind = Kind::kFile;
    b.detail = flag.substr(5);
    return b;
  }
  if (flag.rfind("remote:", 0) == 0 && flag.size() > 7) {
    b.kind = Kind::kRemote;
    b.detail = flag.substr(7);
    return b;
  }
  throw Error(ErrorCode::kInvalidConfig,
              "--backend must be memory, file:DIR, or remote:NAME (got '" +
                  flag + "')");
}

WorkerServer::WorkerServer(WorkerOptions options) : options_(std::move(options)) {
  switch (options_.backend.kind) {
    case WorkerBackend::Kind::kMemory:
      break;
    case WorkerBackend::Kind::kFile:
      kv_name_ = "file:" + options_.backend.detail;
      kv_ = std::make_shared<FileRemoteKv>(options_.backend.detail);
      register_remote_kv(kv_name_, kv_);
      break;
    case WorkerBackend::Kind::kRemote:
      kv_name_ = options_.backend.detail;
      if (!remote_kv_registered(kv_name_)) {
        register_remote_kv(kv_name_, std::make_shared<InProcessRemoteKv>());
      }
      kv_ = find_remote_kv(kv_name_);
      break;
  }
  if (kv_) recover_tables();
  server_ = std::make_unique<TcpServer>(
      options_.port, [this](const Frame& f) { return handle(f); });
}

WorkerServer::~WorkerServer() { stop(); }

void WorkerServer::start() { server_->start(); }
void WorkerServer::stop() { server_->stop(); }

TableConfig WorkerServer::storage_config(const TableConfig& identity) const {
  TableConfig local = identity;
  const std::uint64_t capacity =
      identity.backend.kind == BackendKind::kCachedRemote
          ? identity.backend.cache_capacity
          : BackendSpec().cache_capacity;
  switch (options_.backend.kind) {
    case WorkerBackend::Kind::kMemory:
      local.backend = BackendSpec::in_memory();
      break;
    case WorkerBackend::Kind::kFile:
    case WorkerBackend::Kind::kRemote:
      local.backend = BackendSpec::cached_remote(kv_name_, capacity);
      break;
  }
  return local;
}

WorkerServer::Table& WorkerServer::register_table(const TableConfig& identity,
                                                  bool persist) {
  auto table = std::make_unique<Table>();
  table->identity = identity;
  table->digest = config_digest(identity);
  table->store = open_store(storage_config(identity));
  if (identity.lifetime.bloom) {
    const BloomSpec& spec = *identity.lifetime.bloom;
    table->admission = std::make_unique<CountingBloomFilter>(
        spec.expected_keys, spec.target_false_positive_rate,
        spec.admit_threshold);
  }
  if (persist && kv_) {
    ByteWriter w;
    wire::encode_table_config(w, identity);
    kv_->put({{kMetaPrefix + identity.name, w.take()}});
  }
  auto [it, inserted] = tables_.emplace(identity.name, std::move(table));
  return *it->second;
}

void WorkerServer::recover_tables() {
  for (const auto& meta_key : kv_->scan_prefix(kMetaPrefix)) {
    auto values = kv_->get({meta_key});
    if (!values[0]) continue;
    ByteReader r(*values[0]);
    TableConfig identity = wire::decode_table_config(r);
    r.expect_done();
    validate_config(identity);
    register_table(identity, /*persist=*/false);
  }
}

WorkerServer::Table& WorkerServer::find_table(const std::string& name) {
  std::shared_lock lock(tables_mu_);
  auto it = tables_.find(name);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kTableNotFound, "no table named '" + name + "'");
  }
  return *it->second;
}

Frame WorkerServer::handle(const Frame& request) {
  return dispatch(request, [this](MsgType type, const std::string& payload) {
    return handle_payload(type, payload);
  });
}

std::string WorkerServer::handle_payload(MsgType type, const std::string& payload) {
  switch (type) {
    case MsgType::kHello: {
      auto req = wire::HelloRequest::decode(payload);
      if (req.version != wire::kProtocolVersion) {
        throw Error(ErrorCode::kProtocolError,
                    "unsupported protocol version " + std::to_string(req.version));
      }
      wire::HelloReply reply;
      reply.role = 0;
      reply.sandbox = options_.sandbox ? 1 : 0;
      reply.shard_id = options_.shard_id;
      return reply.encode();
    }
    case MsgType::kPing:
      return std::string();
    case MsgType::kCreateTable:
      return on_create_table(payload);
    case MsgType::kLookup:
      return on_lookup(payload);
    case MsgType::kUpdate:
      return on_update(payload);
    case MsgType::kSample:
      return on_sample(payload);
    case MsgType::kTopK:
      return on_top_k(payload);
    case MsgType::kStats:
      return on_stats(payload);
    case MsgType::kExportShard:
      return on_export_shard(payload);
    case MsgType::kImportShard:
      return on_import_shard(payload);
    case MsgType::kSampledLogits:
    case MsgType::kSave:
    case MsgType::kRestore:
      throw Error(ErrorCode::kProtocolError, "message is master-level, not worker-level");
  }
  throw Error(ErrorCode::kProtocolError, "unknown message type");
}

std::string WorkerServer::on_create_table(const std::string& payload) {
  auto req = wire::CreateTableRequest::decode(payload);
  validate_config(req.config);
  std::unique_lock lock(tables_mu_);
  auto it = tables_.find(req.config.name);
  if (it != tables_.end()) {
    if (it->second->identity != req.config) {
      throw Error(ErrorCode::kTableExists,
                  "table '" + req.config.name +
                      "' already exists with a different configuration");
    }
    wire::CreateTableReply reply;
    reply.digest = it->second->digest;
    reply.created = 0;
    return reply.encode();
  }
  if (options_.sandbox) {
    throw Error(ErrorCode::kSandboxViolation,
                "sandbox mode rejects creating table '" + req.config.name + "'");
  }
  Table& table = register_table(req.config, options_.backend.persistent());
  wire::CreateTableReply reply;
  reply.digest = table.digest;
  reply.created = 1;
  return reply.encode();
}

std::string WorkerServer::on_lookup(const std::string& payload) {
  auto req = wire::LookupRequest::decode(payload);
  Table& table = find_table(req.table);
  LookupOptions options;
  options.create_if_missing = req.create_if_missing != 0 && !options_.sandbox;
  options.update_frequency = req.update_frequency != 0 && !options_.sandbox;
  auto results = table.store->lookup(req.keys, options);
  wire::LookupReply reply;
  reply.items.reserve(results.size());
  for (auto& result : results) {
    wire::LookupReply::Item item;
    if (result) {
      item.present = 1;
      item.vector = std::move(result->vector);
      item.frequency = result->frequency;
    }
    reply.items.push_back(std::move(item));
  }
  return reply.encode();
}

std::string WorkerServer::on_update(const std::string& payload) {
  auto req = wire::UpdateRequest::decode(payload);
  if (options_.sandbox) {
    throw Error(ErrorCode::kSandboxViolation, "sandbox mode rejects updates");
  }
  Table& table = find_table(req.table);
  const std::uint32_t dim = table.identity.stored_dim();
  const bool count_frequency = req.count_frequency != 0;

  // Distinct keys in first-occurrence order; the reply reports these and the
  // admission filter counts one sighting per distinct key per call.
  std::vector<EmbeddingKey> distinct;
  {
    std::unordered_set<std::string_view> seen;
    for (const auto& [key, values] : req.items) {
      validate_key(key);
      if (seen.insert(key).second) distinct.push_back(key);
    }
  }

  if (req.mode == wire::UpdateMode::kGradient) {
    GradientBatch batch;
    batch.keys.reserve(req.items.size());
    batch.gradients.reserve(req.items.size());
    for (auto& [key, values] : req.items) {
      batch.keys.push_back(key);
      batch.gradients.push_back(values);
    }
    OptimizerSpec opt = table.identity.optimizer;
    if (req.learning_rate_override) opt.learning_rate = *req.learning_rate_override;
    apply_gradients(*table.store, batch, req.step, opt, count_frequency);
  } else if (req.mode == wire::UpdateMode::kAssign) {
    std::unordered_map<std::string_view, const std::vector<float>*> final_value;
    for (const auto& [key, values] : req.items) {
      if (values.size() != dim) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "assignment for '" + key + "' has width " +
                        std::to_string(values.size()) + ", expected " +
                        std::to_string(dim));
      }
      if (!all_finite(values)) {
        throw Error(ErrorCode::kNonFiniteValue,
                    "non-finite assignment for key '" + key + "'");
      }
      final_value[key] = &values;  // last occurrence wins
    }
    table.store->update(
        distinct, req.step,
        [&](const EmbeddingKey& key, EmbeddingEntry& entry) {
          entry.vector = *final_value.at(key);
        },
        count_frequency);
  } else {
    throw Error(ErrorCode::kProtocolError, "unknown update mode");
  }

  if (table.admission) {
    std::lock_guard lock(table.admission_mu);
    for (const auto& key : distinct) table.admission->sight(key);
  }

  wire::UpdateReply reply;
  reply.applied = static_cast<std::uint32_t>(distinct.size());
  return reply.encode();
}

std::string WorkerServer::on_sample(const std::string& payload) {
  auto req = wire::ShardSampleRequest::decode(payload);
  Table& table = find_table(req.table);
  SamplerStrategy strategy;
  strategy.kind = static_cast<SamplerStrategyKind>(req.strategy_kind);
  strategy.power = req.strategy_power;
  wire::ShardSampleReply reply;
  reply.output = sample_shard(*table.store, strategy, req.seed, req.quota,
                              req.range, req.positives);
  return reply.encode();
}

std::string WorkerServer::on_top_k(const std::string& payload) {
  auto req = wire::TopKRequest::decode(payload);
  Table& table = find_table(req.table);
  wire::TopKReply reply;
  reply.items = worker_top_k(*table.store, req.activation, req.k);
  return reply.encode();
}

std::string WorkerServer::on_stats(const std::string& payload) {
  auto req = wire::ShardStatsRequest::decode(payload);
  Table& table = find_table(req.table);
  auto stats = compute_sample_stats(*table.store, table.identity.sampler_strategy);
  wire::ShardStatsReply reply;
  reply.resident_count = stats.resident_count;
  reply.weight_sum = stats.weight_sum;
  reply.state_digest = table.store->state_digest();
  return reply.encode();
}

std::string WorkerServer::on_export_shard(const std::string& payload) {
  auto req = wire::ExportShardRequest::decode(payload);
  if (options_.sandbox) {
    throw Error(ErrorCode::kSandboxViolation, "sandbox mode rejects snapshot export");
  }
  Table& table = find_table(req.table);
  std::error_code ec;
  fs::create_directories(req.dir, ec);
  if (ec) {
    throw Error(ErrorCode::kSinkWriteFailure,
                "cannot create checkpoint directory " + req.dir + ": " + ec.message());
  }
  const std::string file =
      req.table + "." + std::to_string(options_.shard_id) + ".snap";
  const std::string path = (fs::path(req.dir) / file).string();

  wire::ExportShardReply reply;
  reply.file = file;
  {
    SnapshotWriter writer(path, table.digest, table.identity.stored_dim());
    std::unique_lock admission_lock(table.admission_mu, std::defer_lock);
    if (table.admission) admission_lock.lock();
    reply.records = export_table(*table.store, writer, table.admission.get());
    writer.finalize();
  }
  // Read-back verification: the snapshot must parse before it is acknowledged.
  SnapshotContents contents = read_snapshot(path);
  if (contents.records.size() != reply.records) {
    throw Error(ErrorCode::kSinkWriteFailure, "snapshot read-back count mismatch");
  }
  for (const auto& record : contents.records) {
    reply.digest ^= record_digest(record.key, record.entry, contents.stored_dim);
  }
  return reply.encode();
}

std::string WorkerServer::on_import_shard(const std::string& payload) {
  auto req = wire::ImportShardRequest::decode(payload);
  if (options_.sandbox) {
    throw Error(ErrorCode::kSandboxViolation, "sandbox mode rejects snapshot import");
  }
  if (req.n_workers == 0) {
    throw Error(ErrorCode::kProtocolError, "import with zero workers");
  }
  Table& table = find_table(req.table);

  // Validate every file before mutating anything.
  std::vector<SnapshotContents> all;
  all.reserve(req.files.size());
  for (const auto& file : req.files) {
    SnapshotContents contents = read_snapshot(file);
    if (contents.config_digest != table.digest) {
      throw Error(ErrorCode::kDigestMismatch,
                  "snapshot " + file + " has config digest " +
                      hex_u64(contents.config_digest) + ", table expects " +
                      hex_u64(table.digest));
    }
    if (contents.stored_dim != table.identity.stored_dim()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "snapshot " + file + " stores dim " +
                      std::to_string(contents.stored_dim));
    }
    all.push_back(std::move(contents));
  }

  table.store->clear();
  std::uint64_t applied = 0;
  for (const auto& contents : all) {
    applied += import_table(*table.store, contents.records,
                            [&](const EmbeddingKey& key) {
                              return shard_of(key, req.n_workers) == req.shard_id;
                            });
  }
  wire::ImportShardReply reply;
  reply.applied = applied;
  return reply.encode();
}

// ---------------------------------------------------------------------------
// MasterServer
// ---------------------------------------------------------------------------

MasterServer::MasterServer(MasterOptions options) : options_(std::move(options)) {
  if (options_.workers.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "master needs at least one worker");
  }
  for (const auto& spec : options_.workers) {
    auto [host, port] = parse_host_port(spec);
    auto link = std::make_unique<WorkerLink>();
    link->host = host;
    link->port = port;
    links_.push_back(std::move(link));
  }
  server_ = std::make_unique<TcpServer>(
      options_.port, [this](const Frame& f) { return handle(f); });
}

MasterServer::~MasterServer() { stop(); }

void MasterServer::start() { server_->start(); }
void MasterServer::stop() { server_->stop(); }

std::string MasterServer::call_worker(std::uint32_t shard, MsgType type,
                                      const std::string& body) {
  WorkerLink& link = *links_[shard];
  std::unique_ptr<Connection> conn;
  {
    std::lock_guard lock(link.mu);
    if (!link.idle.empty()) {
      conn = std::move(link.idle.back());
      link.idle.pop_back();
    }
  }
  bool pooled = conn != nullptr;
  const std::uint64_t request_id = next_request_id_.fetch_add(1);

  auto attempt = [&](Connection& c) {
    return c.call(static_cast<std::uint16_t>(type), request_id, body);
  };

  // Wrap a transport failure with the shard it came from. The inner code
  // name is kept only when it differs from the one we throw, so messages do
  // not accumulate redundant prefixes hop by hop.
  auto shard_error = [shard](const Error& cause) {
    const std::string detail = cause.code() == ErrorCode::kWorkerUnreachable
                                   ? cause.message()
                                   : std::string(cause.what());
    return Error(ErrorCode::kWorkerUnreachable,
                 "shard " + std::to_string(shard) + ": " + detail);
  };

  Frame reply;
  try {
    if (!conn) conn = Connection::dial(link.host, link.port);
    reply = attempt(*conn);
  } catch (const Error& e) {
    // A pooled connection may be stale (worker restarted); retry once on a
    // fresh dial. A failure on a fresh connection means the worker is down.
    if (e.code() != ErrorCode::kWorkerUnreachable || !pooled) {
      throw shard_error(e);
    }
    try {
      conn = Connection::dial(link.host, link.port);
      reply = attempt(*conn);
    } catch (const Error& retry_err) {
      throw shard_error(retry_err);
    }
  }

  {
    std::lock_guard lock(link.mu);
    link.idle.push_back(std::move(conn));
  }
  return wire::decode_reply_payload(reply);
}

std::vector<std::string> MasterServer::fan_out(
    const std::vector<std::uint32_t>& shards, MsgType type,
    const std::vector<std::string>& bodies) {
  std::vector<std::future<std::string>> futures;
  futures.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [this, type, &shards,
                                                      &bodies, i] {
      return call_worker(shards[i], type, bodies[i]);
    }));
  }
  std::vector<std::string> results(shards.size());
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < futures.size(); ++i) {
    try {
      results[i] = futures[i].get();
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

std::vector<std::string> MasterServer::broadcast(MsgType type,
                                                 const std::string& body) {
  std::vector<std::uint32_t> shards(links_.size());
  for (std::uint32_t i = 0; i < shards.size(); ++i) shards[i] = i;
  return fan_out(shards, type, std::vector<std::string>(links_.size(), body));
}

TableConfig MasterServer::registered_config(const std::string& name) {
  std::shared_lock lock(registry_mu_);
  auto it = registry_.find(name);
  if (it == registry_.end()) {
    throw Error(ErrorCode::kTableNotFound, "no table named '" + name + "'");
  }
  return it->second;
}

void MasterServer::note_step(std::uint64_t step) {
  std::uint64_t current = last_step_.load();
  while (step > current && !last_step_.compare_exchange_weak(current, step)) {
  }
}

Frame MasterServer::handle(const Frame& request) {
  return dispatch(request, [this](MsgType type, const std::string& payload) {
    return handle_payload(type, payload);
  });
}

std::string MasterServer::handle_payload(MsgType type, const std::string& payload) {
  switch (type) {
    case MsgType::kHello: {
      auto req = wire::HelloRequest::decode(payload);
      if (req.version != wire::kProtocolVersion) {
        throw Error(ErrorCode::kProtocolError,
                    "unsupported protocol version " + std::to_string(req.version));
      }
      wire::HelloReply reply;
      reply.role = 1;
      reply.n_workers = n_workers();
      return reply.encode();
    }
    case MsgType::kPing:
      return std::string();
    case MsgType::kCreateTable:
      return on_create_table(payload);
    case MsgType::kLookup:
      return on_lookup(payload);
    case MsgType::kUpdate:
      return on_update(payload);
    case MsgType::kSample:
      return on_sample(payload);
    case MsgType::kSampledLogits:
      return on_sampled_logits(payload);
    case MsgType::kTopK:
      return on_top_k(payload);
    case MsgType::kSave:
      return on_save(payload);
    case MsgType::kRestore:
      return on_restore(payload);
    case MsgType::kStats:
      return on_stats(payload);
    case MsgType::kExportShard:
    case MsgType::kImportShard:
      throw Error(ErrorCode::kProtocolError, "message is worker-level, not master-level");
  }
  throw Error(ErrorCode::kProtocolError, "unknown message type");
}

std::string MasterServer::on_create_table(const std::string& payload) {
  auto req = wire::CreateTableRequest::decode(payload);
  validate_config(req.config);
  std::lock_guard create_lock(create_mu_);
  bool exists = false;
  {
    std::shared_lock lock(registry_mu_);
    auto it = registry_.find(req.config.name);
    if (it != registry_.end()) {
      if (it->second != req.config) {
        throw Error(ErrorCode::kTableExists,
                    "table '" + req.config.name +
                        "' already exists with a different configuration");
      }
      exists = true;
    }
  }
  // Broadcast even on re-attach so a worker that missed the original create
  // (restart with a memory backend) is healed before the client proceeds.
  broadcast(MsgType::kCreateTable, payload);
  if (!exists) {
    std::unique_lock lock(registry_mu_);
    registry_.emplace(req.config.name, req.config);
  }
  wire::CreateTableReply reply;
  reply.digest = config_digest(req.config);
  reply.created = exists ? 0 : 1;
  return reply.encode();
}

std::string MasterServer::on_lookup(const std::string& payload) {
  auto req = wire::LookupRequest::decode(payload);
  registered_config(req.table);
  const std::uint32_t n = n_workers();

  std::vector<wire::LookupRequest> sub(n);
  std::vector<std::vector<std::size_t>> origin(n);
  for (std::size_t i = 0; i < req.keys.size(); ++i) {
    validate_key(req.keys[i]);
    const std::uint32_t shard = shard_of(req.keys[i], n);
    sub[shard].keys.push_back(req.keys[i]);
    origin[shard].push_back(i);
  }

  std::vector<std::uint32_t> shards;
  std::vector<std::string> bodies;
  for (std::uint32_t s = 0; s < n; ++s) {
    if (sub[s].keys.empty()) continue;
    sub[s].table = req.table;
    sub[s].create_if_missing = req.create_if_missing;
    sub[s].update_frequency = req.update_frequency;
    shards.push_back(s);
    bodies.push_back(sub[s].encode());
  }

  wire::LookupReply reply;
  reply.items.resize(req.keys.size());
  auto results = fan_out(shards, MsgType::kLookup, bodies);
  for (std::size_t r = 0; r < results.size(); ++r) {
    auto shard_reply = wire::LookupReply::decode(results[r]);
    const auto& positions = origin[shards[r]];
    if (shard_reply.items.size() != positions.size()) {
      throw Error(ErrorCode::kProtocolError, "lookup reply size mismatch");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
      reply.items[positions[i]] = std::move(shard_reply.items[i]);
    }
  }
  return reply.encode();
}

std::string MasterServer::on_update(const std::string& payload) {
  auto req = wire::UpdateRequest::decode(payload);
  registered_config(req.table);
  note_step(req.step);
  const std::uint32_t n = n_workers();

  std::vector<wire::UpdateRequest> sub(n);
  for (auto& [key, values] : req.items) {
    validate_key(key);
    sub[shard_of(key, n)].items.emplace_back(std::move(key), std::move(values));
  }

  std::vector<std::uint32_t> shards;
  std::vector<std::string> bodies;
  for (std::uint32_t s = 0; s < n; ++s) {
    if (sub[s].items.empty()) continue;
    sub[s].table = req.table;
    sub[s].mode = req.mode;
    sub[s].step = req.step;
    sub[s].count_frequency = req.count_frequency;
    sub[s].learning_rate_override = req.learning_rate_override;
    shards.push_back(s);
    bodies.push_back(sub[s].encode());
  }

  std::uint32_t applied = 0;
  for (const auto& result : fan_out(shards, MsgType::kUpdate, bodies)) {
    applied += wire::UpdateReply::decode(result).applied;
  }
  wire::UpdateReply reply;
  reply.applied = applied;
  return reply.encode();
}

SamplePool MasterServer::run_sample_round(const TableConfig& config,
                                          std::uint64_t seed,
                                          std::uint32_t num_sampled,
                                          std::uint64_t range,
                                          const std::vector<EmbeddingKey>& positives) {
  const std::uint32_t n = n_workers();

  // Stats round: per-shard resident counts drive the proportional quotas and
  // the global weight sum decides the frequency->uniform fallback in lockstep
  // across shards.
  wire::ShardStatsRequest stats_req;
  stats_req.table = config.name;
  auto stats_results = broadcast(MsgType::kStats, stats_req.encode());
  std::vector<std::uint64_t> resident(n);
  double global_weight = 0.0;
  for (std::uint32_t s = 0; s < n; ++s) {
    auto stats = wire::ShardStatsReply::decode(stats_results[s]);
    resident[s] = stats.resident_count;
    global_weight += stats.weight_sum;
  }
  const SamplerStrategy effective =
      resolve_fallback(config.sampler_strategy, global_weight);
  const std::vector<std::uint32_t> quotas = proportional_quotas(resident, num_sampled);

  // Deduplicated positives partitioned to their owning shards.
  std::vector<std::vector<EmbeddingKey>> owned(n);
  {
    std::unordered_set<std::string_view> seen;
    for (const auto& key : positives) {
      validate_key(key);
      if (seen.insert(key).second) owned[shard_of(key, n)].push_back(key);
    }
  }

  std::vector<std::uint32_t> shards(n);
  std::vector<std::string> bodies(n);
  for (std::uint32_t s = 0; s < n; ++s) {
    shards[s] = s;
    wire::ShardSampleRequest sub;
    sub.table = config.name;
    sub.seed = seed;
    sub.quota = quotas[s];
    sub.range = range;
    sub.strategy_kind = static_cast<std::uint8_t>(effective.kind);
    sub.strategy_power = effective.power;
    sub.positives = std::move(owned[s]);
    bodies[s] = sub.encode();
  }

  auto results = fan_out(shards, MsgType::kSample, bodies);
  std::vector<ShardSampleOutput> outputs;
  outputs.reserve(n);
  for (std::uint32_t s = 0; s < n; ++s) {
    outputs.push_back(wire::ShardSampleReply::decode(results[s]).output);
  }
  return build_sample_pool(std::move(outputs));
}

std::string MasterServer::on_sample(const std::string& payload) {
  auto req = wire::SampleRequest::decode(payload);
  const TableConfig config = registered_config(req.table);
  SamplePool pool =
      run_sample_round(config, req.seed, req.num_sampled, req.range, req.positives);
  MergedSample merged = assemble_example(pool, req.positives, req.num_sampled);
  wire::SampleReply reply;
  reply.results = std::move(merged.results);
  return reply.encode();
}

std::string MasterServer::on_sampled_logits(const std::string& payload) {
  auto req = wire::SampledLogitsRequest::decode(payload);
  const TableConfig config = registered_config(req.table);

  std::vector<EmbeddingKey> all_positives;
  for (const auto& ex : req.examples) {
    all_positives.insert(all_positives.end(), ex.positives.begin(),
                         ex.positives.end());
  }
  SamplePool pool =
      run_sample_round(config, req.seed, req.num_sampled, req.range, all_positives);

  wire::SampledLogitsReply reply;
  reply.examples.reserve(req.examples.size());
  for (const auto& ex : req.examples) {
    reply.examples.push_back(compute_logits_for_example(
        pool, ex.positives, ex.activation, req.num_sampled, config));
  }
  return reply.encode();
}

std::string MasterServer::on_top_k(const std::string& payload) {
  auto req = wire::TopKRequest::decode(payload);
  registered_config(req.table);
  auto results = broadcast(MsgType::kTopK, payload);
  std::vector<std::vector<ScoredKey>> lists;
  lists.reserve(results.size());
  for (const auto& result : results) {
    lists.push_back(wire::TopKReply::decode(result).items);
  }
  wire::TopKReply reply;
  reply.items = merge_top_k(std::move(lists), req.k);
  return reply.encode();
}

std::string MasterServer::on_save(const std::string& payload) {
  auto req = wire::SaveRequest::decode(payload);
  std::map<std::string, TableConfig> tables;
  {
    std::shared_lock lock(registry_mu_);
    tables = registry_;
  }
  std::error_code ec;
  fs::create_directories(req.path, ec);
  if (ec) {
    throw Error(ErrorCode::kSinkWriteFailure,
                "cannot create checkpoint directory " + req.path + ": " + ec.message());
  }

  const std::uint64_t step = last_step_.load();
  nlohmann::json manifest;
  manifest["format"] = "dynembed-checkpoint";
  manifest["version"] = 1;
  manifest["created_at_step"] = step;
  manifest["n_workers"] = n_workers();
  manifest["tables"] = nlohmann::json::array();

  for (const auto& [name, config] : tables) {
    wire::ExportShardRequest sub;
    sub.table = name;
    sub.dir = req.path;
    auto results = broadcast(MsgType::kExportShard, sub.encode());

    ByteWriter config_bytes;
    wire::encode_table_config(config_bytes, config);
    nlohmann::json entry;
    entry["name"] = name;
    entry["config"] = hex_bytes(config_bytes.take());
    entry["config_digest"] = hex_u64(config_digest(config));
    entry["stored_dim"] = config.stored_dim();
    entry["shards"] = nlohmann::json::array();
    for (std::uint32_t s = 0; s < results.size(); ++s) {
      auto shard_reply = wire::ExportShardReply::decode(results[s]);
      nlohmann::json shard;
      shard["shard"] = s;
      shard["file"] = shard_reply.file;
      shard["records"] = shard_reply.records;
      shard["digest"] = hex_u64(shard_reply.digest);
      entry["shards"].push_back(std::move(shard));
    }
    manifest["tables"].push_back(std::move(entry));
  }

  // The manifest is written last and moved into place atomically: a directory
  // either has a manifest covering sealed snapshots or no manifest at all.
  const fs::path manifest_path = fs::path(req.path) / "manifest";
  const fs::path tmp_path = fs::path(req.path) / "manifest.tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out.good()) {
      throw Error(ErrorCode::kSinkWriteFailure,
                  "cannot write " + tmp_path.string());
    }
  }
  fs::rename(tmp_path, manifest_path, ec);
  if (ec) {
    throw Error(ErrorCode::kSinkWriteFailure,
                "cannot move manifest into place: " + ec.message());
  }

  wire::SaveReply reply;
  reply.manifest_path = manifest_path.string();
  reply.step = step;
  reply.tables = static_cast<std::uint32_t>(tables.size());
  return reply.encode();
}

std::string MasterServer::on_restore(const std::string& payload) {
  auto req = wire::RestoreRequest::decode(payload);
  const fs::path dir(req.path);
  const fs::path manifest_path = dir / "manifest";
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::kPartialCheckpoint,
                "no manifest in " + req.path + " (checkpoint incomplete or absent)");
  }

  nlohmann::json manifest;
  {
    std::ifstream in(manifest_path, std::ios::binary);
    try {
      in >> manifest;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kFormatError,
                  std::string("manifest is not valid JSON: ") + e.what());
    }
  }

  struct PlannedTable {
    TableConfig config;
    std::vector<std::string> files;  // absolute paths
  };
  std::vector<PlannedTable> plan;
  try {
    if (manifest.at("format").get<std::string>() != "dynembed-checkpoint" ||
        manifest.at("version").get<int>() != 1) {
      throw Error(ErrorCode::kFormatError, "unrecognized manifest format");
    }
    for (const auto& entry : manifest.at("tables")) {
      PlannedTable planned;
      const std::string config_hex = entry.at("config").get<std::string>();
      const std::string config_bytes = unhex(config_hex);
      ByteReader r(config_bytes);  // ByteReader is a view; keep the bytes alive.
      planned.config = wire::decode_table_config(r);
      r.expect_done();
      validate_config(planned.config);
      const std::uint64_t digest =
          parse_hex_u64(entry.at("config_digest").get<std::string>());
      if (digest != config_digest(planned.config) ||
          planned.config.name != entry.at("name").get<std::string>()) {
        throw Error(ErrorCode::kFormatError,
                    "manifest entry for '" + planned.config.name +
                        "' is internally inconsistent");
      }
      for (const auto& shard : entry.at("shards")) {
        planned.files.push_back((dir / shard.at("file").get<std::string>()).string());
      }
      plan.push_back(std::move(planned));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kFormatError,
                std::string("malformed manifest: ") + e.what());
  }

  // Validate everything before touching any state: files all present, no
  // registry conflicts.
  for (const auto& planned : plan) {
    for (const auto& file : planned.files) {
      if (!fs::exists(file)) {
        throw Error(ErrorCode::kPartialCheckpoint, "missing snapshot file " + file);
      }
    }
  }

  std::lock_guard create_lock(create_mu_);
  std::vector<const PlannedTable*> to_register;
  {
    std::shared_lock lock(registry_mu_);
    for (const auto& planned : plan) {
      auto it = registry_.find(planned.config.name);
      if (it == registry_.end()) {
        to_register.push_back(&planned);
      } else if (it->second != planned.config) {
        throw Error(ErrorCode::kDigestMismatch,
                    "table '" + planned.config.name +
                        "' is registered with a different configuration");
      }
    }
  }
  for (const PlannedTable* planned : to_register) {
    wire::CreateTableRequest create;
    create.config = planned->config;
    broadcast(MsgType::kCreateTable, create.encode());
    std::unique_lock lock(registry_mu_);
    registry_.emplace(planned->config.name, planned->config);
  }

  const std::uint32_t n = n_workers();
  std::uint64_t records = 0;
  for (const auto& planned : plan) {
    std::vector<std::uint32_t> shards(n);
    std::vector<std::string> bodies(n);
    for (std::uint32_t s = 0; s < n; ++s) {
      shards[s] = s;
      wire::ImportShardRequest sub;
      sub.table = planned.config.name;
      sub.n_workers = n;
      sub.shard_id = s;
      sub.files = planned.files;
      bodies[s] = sub.encode();
    }
    for (const auto& result : fan_out(shards, MsgType::kImportShard, bodies)) {
      records += wire::ImportShardReply::decode(result).applied;
    }
  }

  last_step_.store(manifest.value("created_at_step", std::uint64_t{0}));

  wire::RestoreReply reply;
  reply.tables = static_cast<std::uint32_t>(plan.size());
  reply.records = records;
  return reply.encode();
}

std::string MasterServer::on_stats(const std::string& payload) {
  wire::StatsRequest::decode(payload);
  std::map<std::string, TableConfig> tables;
  {
    std::shared_lock lock(registry_mu_);
    tables = registry_;
  }
  wire::StatsReply reply;
  reply.n_workers = n_workers();
  reply.step = last_step_.load();
  for (const auto& [name, config] : tables) {
    wire::ShardStatsRequest sub;
    sub.table = name;
    auto results = broadcast(MsgType::kStats, sub.encode());
    wire::TableStats stats;
    stats.name = name;
    stats.config_digest = config_digest(config);
    stats.stored_dim = config.stored_dim();
    for (const auto& result : results) {
      auto shard = wire::ShardStatsReply::decode(result);
      stats.resident += shard.resident_count;
      stats.state_digest ^= shard.state_digest;
    }
    reply.tables.push_back(std::move(stats));
  }
  return reply.encode();
}

}  // namespace dynembed
