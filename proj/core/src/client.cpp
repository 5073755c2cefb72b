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

#include "dynembed/client.hpp"

#include <utility>

#include "dynembed/error.hpp"

namespace dynembed {

namespace {

std::mutex g_registry_mu;
std::vector<HandleRecord> g_registry;

void register_handle(HandleRecord record) {
  std::lock_guard<std::mutex> lock(g_registry_mu);
  for (auto& existing : g_registry) {
    if (existing.name == record.name && existing.endpoint == record.endpoint) {
      existing.digest = record.digest;
      return;
    }
  }
  g_registry.push_back(std::move(record));
}

}  // namespace

std::vector<HandleRecord> registered_handles() {
  std::lock_guard<std::mutex> lock(g_registry_mu);
  return g_registry;
}

void reset_handle_registry() {
  std::lock_guard<std::mutex> lock(g_registry_mu);
  g_registry.clear();
}

ServiceClient::ServiceClient(std::string host, int port)
    : host_(std::move(host)), port_(port) {}

std::string ServiceClient::call(wire::MsgType type, const std::string& body) {
  std::unique_ptr<Connection> conn;
  bool pooled = false;
  {
    std::lock_guard<std::mutex> lock(pool_mu_);
    if (!idle_.empty()) {
      conn = std::move(idle_.back());
      idle_.pop_back();
      pooled = true;
    }
  }
  if (!conn) conn = Connection::dial(host_, port_);

  const std::uint64_t id = next_request_id_.fetch_add(1);
  Frame reply;
  try {
    reply = conn->call(static_cast<std::uint16_t>(type), id, body);
  } catch (const Error& e) {
    // A pooled connection may have gone stale since its last use; retry the
    // call once on a fresh dial. Fresh-connection failures propagate.
    if (!pooled || e.code() != ErrorCode::kWorkerUnreachable) throw;
    conn = Connection::dial(host_, port_);
    reply = conn->call(static_cast<std::uint16_t>(type), id, body);
  }
  {
    std::lock_guard<std::mutex> lock(pool_mu_);
    idle_.push_back(std::move(conn));
  }
  return wire::decode_reply_payload(reply);
}

wire::HelloReply ServiceClient::hello() {
  return wire::HelloReply::decode(
      call(wire::MsgType::kHello, wire::HelloRequest{}.encode()));
}

void ServiceClient::ping() { call(wire::MsgType::kPing, {}); }

std::uint64_t ServiceClient::create_table(const TableConfig& config) {
  wire::CreateTableRequest req;
  req.config = config;
  auto reply = wire::CreateTableReply::decode(
      call(wire::MsgType::kCreateTable, req.encode()));
  return reply.digest;
}

std::vector<std::optional<std::vector<float>>> ServiceClient::lookup(
    const std::string& table, const std::vector<EmbeddingKey>& keys,
    bool create_if_missing, bool update_frequency) {
  wire::LookupRequest req;
  req.table = table;
  req.create_if_missing = create_if_missing ? 1 : 0;
  req.update_frequency = update_frequency ? 1 : 0;
  req.keys = keys;
  auto reply =
      wire::LookupReply::decode(call(wire::MsgType::kLookup, req.encode()));
  std::vector<std::optional<std::vector<float>>> out;
  out.reserve(reply.items.size());
  for (auto& item : reply.items) {
    if (item.present) {
      out.emplace_back(std::move(item.vector));
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

std::uint32_t ServiceClient::update_gradients(
    const std::string& table,
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step, std::optional<float> learning_rate,
    bool count_frequency) {
  wire::UpdateRequest req;
  req.table = table;
  req.mode = wire::UpdateMode::kGradient;
  req.step = step;
  req.count_frequency = count_frequency ? 1 : 0;
  req.learning_rate_override = learning_rate;
  req.items = items;
  auto reply =
      wire::UpdateReply::decode(call(wire::MsgType::kUpdate, req.encode()));
  return reply.applied;
}

std::uint32_t ServiceClient::assign(
    const std::string& table,
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step, bool count_frequency) {
  wire::UpdateRequest req;
  req.table = table;
  req.mode = wire::UpdateMode::kAssign;
  req.step = step;
  req.count_frequency = count_frequency ? 1 : 0;
  req.items = items;
  auto reply =
      wire::UpdateReply::decode(call(wire::MsgType::kUpdate, req.encode()));
  return reply.applied;
}

std::vector<SampledResult> ServiceClient::sample(
    const std::string& table, const std::vector<EmbeddingKey>& positives,
    std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) {
  wire::SampleRequest req;
  req.table = table;
  req.seed = seed;
  req.num_sampled = num_sampled;
  req.range = range;
  req.positives = positives;
  auto reply =
      wire::SampleReply::decode(call(wire::MsgType::kSample, req.encode()));
  return std::move(reply.results);
}

std::vector<SampledLogits> ServiceClient::sampled_logits(
    const std::string& table,
    const std::vector<wire::SampledLogitsRequest::Example>& examples,
    std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) {
  wire::SampledLogitsRequest req;
  req.table = table;
  req.seed = seed;
  req.num_sampled = num_sampled;
  req.range = range;
  req.examples = examples;
  auto reply = wire::SampledLogitsReply::decode(
      call(wire::MsgType::kSampledLogits, req.encode()));
  return std::move(reply.examples);
}

std::vector<ScoredKey> ServiceClient::top_k(const std::string& table,
                                            const std::vector<float>& activation,
                                            std::uint32_t k) {
  wire::TopKRequest req;
  req.table = table;
  req.k = k;
  req.activation = activation;
  auto reply = wire::TopKReply::decode(call(wire::MsgType::kTopK, req.encode()));
  return std::move(reply.items);
}

wire::SaveReply ServiceClient::save(const std::string& path) {
  wire::SaveRequest req;
  req.path = path;
  return wire::SaveReply::decode(call(wire::MsgType::kSave, req.encode()));
}

wire::RestoreReply ServiceClient::restore(const std::string& path) {
  wire::RestoreRequest req;
  req.path = path;
  return wire::RestoreReply::decode(call(wire::MsgType::kRestore, req.encode()));
}

wire::StatsReply ServiceClient::stats() {
  return wire::StatsReply::decode(
      call(wire::MsgType::kStats, wire::StatsRequest{}.encode()));
}

TableHandle::TableHandle(std::shared_ptr<ServiceClient> client, TableConfig config)
    : client_(std::move(client)), config_(std::move(config)) {
  validate_config(config_);
  digest_ = client_->create_table(config_);
}

std::vector<std::vector<float>> TableHandle::lookup(
    const std::vector<EmbeddingKey>& keys, bool create_if_missing) {
  auto rows = client_->lookup(name(), keys, create_if_missing);
  std::vector<std::vector<float>> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) {
      throw Error(ErrorCode::kInvalidKey,
                  "lookup without create_if_missing hit an absent key \"" +
                      keys[i] + "\"; use try_lookup for serving reads");
    }
    auto& row = *rows[i];
    row.resize(config_.embedding_dim);  // drop the bias column when present
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<std::vector<float>>> TableHandle::lookup_2d(
    const std::vector<std::vector<EmbeddingKey>>& keys, bool create_if_missing) {
  // Flatten, one round trip, then restore the input shape with the embedding
  // axis appended.
  std::vector<EmbeddingKey> flat;
  for (const auto& row : keys) flat.insert(flat.end(), row.begin(), row.end());
  auto rows = lookup(flat, create_if_missing);
  std::vector<std::vector<std::vector<float>>> out;
  out.reserve(keys.size());
  std::size_t cursor = 0;
  for (const auto& row : keys) {
    std::vector<std::vector<float>> shaped;
    shaped.reserve(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) shaped.push_back(std::move(rows[cursor++]));
    out.push_back(std::move(shaped));
  }
  return out;
}

std::vector<std::optional<std::vector<float>>> TableHandle::try_lookup(
    const std::vector<EmbeddingKey>& keys) {
  auto rows = client_->lookup(name(), keys, /*create_if_missing=*/false);
  for (auto& row : rows) {
    if (row) row->resize(config_.embedding_dim);
  }
  return rows;
}

std::vector<std::optional<std::vector<float>>> TableHandle::lookup_stored(
    const std::vector<EmbeddingKey>& keys, bool create_if_missing) {
  return client_->lookup(name(), keys, create_if_missing);
}

void TableHandle::update_gradients(
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step, std::optional<float> learning_rate) {
  client_->update_gradients(name(), items, step, learning_rate);
}

void TableHandle::assign(
    const std::vector<std::pair<EmbeddingKey, std::vector<float>>>& items,
    std::uint64_t step, bool count_frequency) {
  client_->assign(name(), items, step, count_frequency);
}

std::vector<SampledResult> TableHandle::sample(
    const std::vector<EmbeddingKey>& positives, std::uint32_t num_sampled,
    std::uint64_t seed, std::uint64_t range) {
  return client_->sample(name(), positives, num_sampled, seed, range);
}

std::vector<SampledLogits> TableHandle::sampled_logits(
    const std::vector<wire::SampledLogitsRequest::Example>& examples,
    std::uint32_t num_sampled, std::uint64_t seed, std::uint64_t range) {
  return client_->sampled_logits(name(), examples, num_sampled, seed, range);
}

std::vector<ScoredKey> TableHandle::top_k(const std::vector<float>& activation,
                                          std::uint32_t k) {
  return client_->top_k(name(), activation, k);
}

std::shared_ptr<TableHandle> open_table(std::shared_ptr<ServiceClient> client,
                                        const TableConfig& config) {
  auto handle = std::make_shared<TableHandle>(client, config);
  register_handle({handle->name(), handle->digest(),
                   client->host() + ":" + std::to_string(client->port())});
  return handle;
}

}  // namespace dynembed
