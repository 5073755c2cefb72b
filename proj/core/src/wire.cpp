#include "dynembed/wire.hpp"

namespace dynembed::wire {

namespace {

ByteReader reader_for(const std::string& payload) { return ByteReader(payload); }

template <typename T, typename Fn>
T decode_whole(const std::string& payload, Fn fn) {
  ByteReader r = reader_for(payload);
  T out = fn(r);
  r.expect_done();
  return out;
}

void encode_sampled_logits(ByteWriter& w, const SampledLogits& s) {
  const auto n = static_cast<std::uint32_t>(s.ids.size());
  w.u32(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    w.str(s.ids[i]);
    w.u8(s.label_flags[i]);
    w.f32(s.logits[i]);
    w.f64(s.probs[i]);
    w.f32vec(s.vectors[i]);
  }
}

SampledLogits decode_sampled_logits(ByteReader& r) {
  SampledLogits s;
  std::uint32_t n = r.u32();
  s.ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    s.ids.push_back(r.str());
    s.label_flags.push_back(r.u8());
    s.logits.push_back(r.f32());
    s.probs.push_back(r.f64());
    s.vectors.push_back(r.f32vec());
  }
  return s;
}

}  // namespace

// ---- envelope ------------------------------------------------------------

std::string encode_ok_reply(const std::string& payload) {
  ByteWriter w;
  w.u16(0);
  w.str(std::string());
  w.raw(payload.data(), payload.size());
  return w.take();
}

std::string encode_error_reply(ErrorCode code, const std::string& message) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(code));
  w.str(message);
  return w.take();
}

std::string decode_reply_payload(const Frame& reply) {
  ByteReader r(reply.body);
  const std::uint16_t status = r.u16();
  const std::string message = r.str();
  if (status != 0) throw Error(static_cast<ErrorCode>(status), message);
  std::string payload(reply.body.data() + (reply.body.size() - r.remaining()),
                      r.remaining());
  return payload;
}

// ---- shared codecs ---------------------------------------------------------

void encode_table_config(ByteWriter& w, const TableConfig& config) {
  w.str(config.name);
  const auto fields = encode_config_fields(config);
  w.raw(fields.data(), fields.size());
}

TableConfig decode_table_config(ByteReader& r) {
  TableConfig c;
  c.name = r.str();
  c.embedding_dim = r.u32();
  c.has_bias = r.u8() != 0;
  c.initializer.kind = static_cast<InitializerKind>(r.u8());
  c.initializer.param = r.f64();
  c.seed = r.u64();
  c.optimizer.kind = static_cast<OptimizerKind>(r.u8());
  c.optimizer.learning_rate = static_cast<float>(r.f64());
  c.optimizer.adagrad_initial_accumulator = static_cast<float>(r.f64());
  c.optimizer.momentum_coefficient = static_cast<float>(r.f64());
  c.sampler_strategy.kind = static_cast<SamplerStrategyKind>(r.u8());
  c.sampler_strategy.power = r.f64();
  c.lifetime.frequency_cutoff = r.u64();
  if (r.u8() != 0) {
    BloomSpec bloom;
    bloom.expected_keys = r.u64();
    bloom.target_false_positive_rate = r.f64();
    bloom.admit_threshold = r.u64();
    c.lifetime.bloom = bloom;
  }
  c.backend.kind = static_cast<BackendKind>(r.u8());
  switch (c.backend.kind) {
    case BackendKind::kInMemory:
      break;
    case BackendKind::kFileSnapshot:
      c.backend.path = r.str();
      break;
    case BackendKind::kCachedRemote:
      c.backend.remote_name = r.str();
      c.backend.cache_capacity = r.u64();
      break;
    default:
      throw Error(ErrorCode::kProtocolError, "unknown backend kind");
  }
  return c;
}

void encode_key_list(ByteWriter& w, const std::vector<EmbeddingKey>& keys) {
  w.u32(static_cast<std::uint32_t>(keys.size()));
  for (const auto& k : keys) w.str(k);
}

std::vector<EmbeddingKey> decode_key_list(ByteReader& r) {
  std::uint32_t n = r.u32();
  std::vector<EmbeddingKey> keys;
  keys.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) keys.push_back(r.str());
  return keys;
}

// ---- handshake -------------------------------------------------------------

std::string HelloRequest::encode() const {
  ByteWriter w;
  w.u16(version);
  return w.take();
}

HelloRequest HelloRequest::decode(const std::string& payload) {
  return decode_whole<HelloRequest>(payload, [](ByteReader& r) {
    HelloRequest m;
    m.version = r.u16();
    return m;
  });
}

std::string HelloReply::encode() const {
  ByteWriter w;
  w.u16(version);
  w.u8(role);
  w.u8(sandbox);
  w.u32(shard_id);
  w.u32(n_workers);
  return w.take();
}

HelloReply HelloReply::decode(const std::string& payload) {
  return decode_whole<HelloReply>(payload, [](ByteReader& r) {
    HelloReply m;
    m.version = r.u16();
    m.role = r.u8();
    m.sandbox = r.u8();
    m.shard_id = r.u32();
    m.n_workers = r.u32();
    return m;
  });
}

// ---- table lifecycle ---------------------------------------------------------

std::string CreateTableRequest::encode() const {
  ByteWriter w;
  encode_table_config(w, config);
  return w.take();
}

CreateTableRequest CreateTableRequest::decode(const std::string& payload) {
  return decode_whole<CreateTableRequest>(payload, [](ByteReader& r) {
    CreateTableRequest m;
    m.config = decode_table_config(r);
    return m;
  });
}

std::string CreateTableReply::encode() const {
  ByteWriter w;
  w.u64(digest);
  w.u8(created);
  return w.take();
}

CreateTableReply CreateTableReply::decode(const std::string& payload) {
  return decode_whole<CreateTableReply>(payload, [](ByteReader& r) {
    CreateTableReply m;
    m.digest = r.u64();
    m.created = r.u8();
    return m;
  });
}

// ---- lookup / update ---------------------------------------------------------

std::string LookupRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u8(create_if_missing);
  w.u8(update_frequency);
  encode_key_list(w, keys);
  return w.take();
}

LookupRequest LookupRequest::decode(const std::string& payload) {
  return decode_whole<LookupRequest>(payload, [](ByteReader& r) {
    LookupRequest m;
    m.table = r.str();
    m.create_if_missing = r.u8();
    m.update_frequency = r.u8();
    m.keys = decode_key_list(r);
    return m;
  });
}

std::string LookupReply::encode() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& item : items) {
    w.u8(item.present);
    w.f32vec(item.vector);
    w.u64(item.frequency);
  }
  return w.take();
}

LookupReply LookupReply::decode(const std::string& payload) {
  return decode_whole<LookupReply>(payload, [](ByteReader& r) {
    LookupReply m;
    std::uint32_t n = r.u32();
    m.items.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      Item item;
      item.present = r.u8();
      item.vector = r.f32vec();
      item.frequency = r.u64();
      m.items.push_back(std::move(item));
    }
    return m;
  });
}

std::string UpdateRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u8(static_cast<std::uint8_t>(mode));
  w.u64(step);
  w.u8(count_frequency);
  w.u8(learning_rate_override ? 1 : 0);
  if (learning_rate_override) w.f32(*learning_rate_override);
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& [key, values] : items) {
    w.str(key);
    w.f32vec(values);
  }
  return w.take();
}

UpdateRequest UpdateRequest::decode(const std::string& payload) {
  return decode_whole<UpdateRequest>(payload, [](ByteReader& r) {
    UpdateRequest m;
    m.table = r.str();
    m.mode = static_cast<UpdateMode>(r.u8());
    m.step = r.u64();
    m.count_frequency = r.u8();
    if (r.u8() != 0) m.learning_rate_override = r.f32();
    std::uint32_t n = r.u32();
    m.items.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string key = r.str();
      std::vector<float> values = r.f32vec();
      m.items.emplace_back(std::move(key), std::move(values));
    }
    return m;
  });
}

std::string UpdateReply::encode() const {
  ByteWriter w;
  w.u32(applied);
  return w.take();
}

UpdateReply UpdateReply::decode(const std::string& payload) {
  return decode_whole<UpdateReply>(payload, [](ByteReader& r) {
    UpdateReply m;
    m.applied = r.u32();
    return m;
  });
}

// ---- sampling ------------------------------------------------------------------

std::string SampleRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u64(seed);
  w.u32(num_sampled);
  w.u64(range);
  encode_key_list(w, positives);
  return w.take();
}

SampleRequest SampleRequest::decode(const std::string& payload) {
  return decode_whole<SampleRequest>(payload, [](ByteReader& r) {
    SampleRequest m;
    m.table = r.str();
    m.seed = r.u64();
    m.num_sampled = r.u32();
    m.range = r.u64();
    m.positives = decode_key_list(r);
    return m;
  });
}

std::string SampleReply::encode() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(results.size()));
  for (const auto& res : results) {
    w.str(res.id);
    w.u8(res.is_positive ? 1 : 0);
    w.f32(res.prob);
  }
  return w.take();
}

SampleReply SampleReply::decode(const std::string& payload) {
  return decode_whole<SampleReply>(payload, [](ByteReader& r) {
    SampleReply m;
    std::uint32_t n = r.u32();
    m.results.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      SampledResult res;
      res.id = r.str();
      res.is_positive = r.u8() != 0;
      res.prob = r.f32();
      m.results.push_back(std::move(res));
    }
    return m;
  });
}

std::string ShardSampleRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u64(seed);
  w.u32(quota);
  w.u64(range);
  w.u8(strategy_kind);
  w.f64(strategy_power);
  encode_key_list(w, positives);
  return w.take();
}

ShardSampleRequest ShardSampleRequest::decode(const std::string& payload) {
  return decode_whole<ShardSampleRequest>(payload, [](ByteReader& r) {
    ShardSampleRequest m;
    m.table = r.str();
    m.seed = r.u64();
    m.quota = r.u32();
    m.range = r.u64();
    m.strategy_kind = r.u8();
    m.strategy_power = r.f64();
    m.positives = decode_key_list(r);
    return m;
  });
}

std::string ShardSampleReply::encode() const {
  ByteWriter w;
  w.f64(output.weight_sum);
  w.u64(output.universe_size);
  w.u32(static_cast<std::uint32_t>(output.negatives.size()));
  for (const auto& neg : output.negatives) {
    w.str(neg.key);
    w.f64(neg.weight);
    w.f64(neg.priority);
    w.u64(neg.frequency);
    w.f32vec(neg.vector);
  }
  w.u32(static_cast<std::uint32_t>(output.positives.size()));
  for (const auto& pos : output.positives) {
    w.str(pos.key);
    w.u8(pos.resident ? 1 : 0);
    w.f64(pos.weight);
    w.f32vec(pos.vector);
  }
  return w.take();
}

ShardSampleReply ShardSampleReply::decode(const std::string& payload) {
  return decode_whole<ShardSampleReply>(payload, [](ByteReader& r) {
    ShardSampleReply m;
    m.output.weight_sum = r.f64();
    m.output.universe_size = r.u64();
    std::uint32_t n_neg = r.u32();
    m.output.negatives.reserve(n_neg);
    for (std::uint32_t i = 0; i < n_neg; ++i) {
      SampledCandidate c;
      c.key = r.str();
      c.weight = r.f64();
      c.priority = r.f64();
      c.frequency = r.u64();
      c.vector = r.f32vec();
      m.output.negatives.push_back(std::move(c));
    }
    std::uint32_t n_pos = r.u32();
    m.output.positives.reserve(n_pos);
    for (std::uint32_t i = 0; i < n_pos; ++i) {
      PositiveInfo p;
      p.key = r.str();
      p.resident = r.u8() != 0;
      p.weight = r.f64();
      p.vector = r.f32vec();
      m.output.positives.push_back(std::move(p));
    }
    return m;
  });
}

std::string SampledLogitsRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u64(seed);
  w.u32(num_sampled);
  w.u64(range);
  w.u32(static_cast<std::uint32_t>(examples.size()));
  for (const auto& ex : examples) {
    encode_key_list(w, ex.positives);
    w.f32vec(ex.activation);
  }
  return w.take();
}

SampledLogitsRequest SampledLogitsRequest::decode(const std::string& payload) {
  return decode_whole<SampledLogitsRequest>(payload, [](ByteReader& r) {
    SampledLogitsRequest m;
    m.table = r.str();
    m.seed = r.u64();
    m.num_sampled = r.u32();
    m.range = r.u64();
    std::uint32_t n = r.u32();
    m.examples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      Example ex;
      ex.positives = decode_key_list(r);
      ex.activation = r.f32vec();
      m.examples.push_back(std::move(ex));
    }
    return m;
  });
}

std::string SampledLogitsReply::encode() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(examples.size()));
  for (const auto& ex : examples) encode_sampled_logits(w, ex);
  return w.take();
}

SampledLogitsReply SampledLogitsReply::decode(const std::string& payload) {
  return decode_whole<SampledLogitsReply>(payload, [](ByteReader& r) {
    SampledLogitsReply m;
    std::uint32_t n = r.u32();
    m.examples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) m.examples.push_back(decode_sampled_logits(r));
    return m;
  });
}

// ---- retrieval -----------------------------------------------------------------

std::string TopKRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u32(k);
  w.f32vec(activation);
  return w.take();
}

TopKRequest TopKRequest::decode(const std::string& payload) {
  return decode_whole<TopKRequest>(payload, [](ByteReader& r) {
    TopKRequest m;
    m.table = r.str();
    m.k = r.u32();
    m.activation = r.f32vec();
    return m;
  });
}

std::string TopKReply::encode() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& item : items) {
    w.str(item.id);
    w.f32(item.score);
  }
  return w.take();
}

TopKReply TopKReply::decode(const std::string& payload) {
  return decode_whole<TopKReply>(payload, [](ByteReader& r) {
    TopKReply m;
    std::uint32_t n = r.u32();
    m.items.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      ScoredKey s;
      s.id = r.str();
      s.score = r.f32();
      m.items.push_back(std::move(s));
    }
    return m;
  });
}

// ---- checkpointing ----------------------------------------------------------------

std::string SaveRequest::encode() const {
  ByteWriter w;
  w.str(path);
  return w.take();
}

SaveRequest SaveRequest::decode(const std::string& payload) {
  return decode_whole<SaveRequest>(payload, [](ByteReader& r) {
    SaveRequest m;
    m.path = r.str();
    return m;
  });
}

std::string SaveReply::encode() const {
  ByteWriter w;
  w.str(manifest_path);
  w.u64(step);
  w.u32(tables);
  return w.take();
}

SaveReply SaveReply::decode(const std::string& payload) {
  return decode_whole<SaveReply>(payload, [](ByteReader& r) {
    SaveReply m;
    m.manifest_path = r.str();
    m.step = r.u64();
    m.tables = r.u32();
    return m;
  });
}

std::string RestoreRequest::encode() const {
  ByteWriter w;
  w.str(path);
  return w.take();
}

RestoreRequest RestoreRequest::decode(const std::string& payload) {
  return decode_whole<RestoreRequest>(payload, [](ByteReader& r) {
    RestoreRequest m;
    m.path = r.str();
    return m;
  });
}

std::string RestoreReply::encode() const {
  ByteWriter w;
  w.u32(tables);
  w.u64(records);
  return w.take();
}

RestoreReply RestoreReply::decode(const std::string& payload) {
  return decode_whole<RestoreReply>(payload, [](ByteReader& r) {
    RestoreReply m;
    m.tables = r.u32();
    m.records = r.u64();
    return m;
  });
}

std::string ExportShardRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.str(dir);
  return w.take();
}

ExportShardRequest ExportShardRequest::decode(const std::string& payload) {
  return decode_whole<ExportShardRequest>(payload, [](ByteReader& r) {
    ExportShardRequest m;
    m.table = r.str();
    m.dir = r.str();
    return m;
  });
}

std::string ExportShardReply::encode() const {
  ByteWriter w;
  w.str(file);
  w.u64(records);
  w.u64(digest);
  return w.take();
}

ExportShardReply ExportShardReply::decode(const std::string& payload) {
  return decode_whole<ExportShardReply>(payload, [](ByteReader& r) {
    ExportShardReply m;
    m.file = r.str();
    m.records = r.u64();
    m.digest = r.u64();
    return m;
  });
}

std::string ImportShardRequest::encode() const {
  ByteWriter w;
  w.str(table);
  w.u32(n_workers);
  w.u32(shard_id);
  w.u32(static_cast<std::uint32_t>(files.size()));
  for (const auto& f : files) w.str(f);
  return w.take();
}

ImportShardRequest ImportShardRequest::decode(const std::string& payload) {
  return decode_whole<ImportShardRequest>(payload, [](ByteReader& r) {
    ImportShardRequest m;
    m.table = r.str();
    m.n_workers = r.u32();
    m.shard_id = r.u32();
    std::uint32_t n = r.u32();
    m.files.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) m.files.push_back(r.str());
    return m;
  });
}

std::string ImportShardReply::encode() const {
  ByteWriter w;
  w.u64(applied);
  return w.take();
}

ImportShardReply ImportShardReply::decode(const std::string& payload) {
  return decode_whole<ImportShardReply>(payload, [](ByteReader& r) {
    ImportShardReply m;
    m.applied = r.u64();
    return m;
  });
}

// ---- stats ----------------------------------------------------------------------------

StatsRequest StatsRequest::decode(const std::string& payload) {
  ByteReader r(payload);
  r.expect_done();
  return {};
}

std::string StatsReply::encode() const {
  ByteWriter w;
  w.u32(n_workers);
  w.u64(step);
  w.u32(static_cast<std::uint32_t>(tables.size()));
  for (const auto& t : tables) {
    w.str(t.name);
    w.u64(t.config_digest);
    w.u32(t.stored_dim);
    w.u64(t.resident);
    w.u64(t.state_digest);
  }
  return w.take();
}

StatsReply StatsReply::decode(const std::string& payload) {
  return decode_whole<StatsReply>(payload, [](ByteReader& r) {
    StatsReply m;
    m.n_workers = r.u32();
    m.step = r.u64();
    std::uint32_t n = r.u32();
    m.tables.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      TableStats t;
      t.name = r.str();
      t.config_digest = r.u64();
      t.stored_dim = r.u32();
      t.resident = r.u64();
      t.state_digest = r.u64();
      m.tables.push_back(std::move(t));
    }
    return m;
  });
}

std::string ShardStatsRequest::encode() const {
  ByteWriter w;
  w.str(table);
  return w.take();
}

ShardStatsRequest ShardStatsRequest::decode(const std::string& payload) {
  return decode_whole<ShardStatsRequest>(payload, [](ByteReader& r) {
    ShardStatsRequest m;
    m.table = r.str();
    return m;
  });
}

std::string ShardStatsReply::encode() const {
  ByteWriter w;
  w.u64(resident_count);
  w.f64(weight_sum);
  w.u64(state_digest);
  return w.take();
}

ShardStatsReply ShardStatsReply::decode(const std::string& payload) {
  return decode_whole<ShardStatsReply>(payload, [](ByteReader& r) {
    ShardStatsReply m;
    m.resident_count = r.u64();
    m.weight_sum = r.f64();
    m.state_digest = r.u64();
    return m;
  });
}

}  // namespace dynembed::wire
