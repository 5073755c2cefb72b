#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "dynembed/config.hpp"
#include "dynembed/error.hpp"

namespace dynembed {
namespace {

TableConfig base_config() {
  return make_table_config("table", 8, /*has_bias=*/false,
                           OptimizerSpec::sgd(0.05f), 9);
}

ErrorCode thrown_code(const TableConfig& c) {
  try {
    validate_config(c);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

TEST_SUITE("config") {

TEST_CASE("validate_config accepts the factory output") {
  CHECK_NOTHROW(validate_config(base_config()));
}

TEST_CASE("validate_config rejects malformed configs") {
  TableConfig c = base_config();
  c.name = "";
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.name = "has space";
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.name = "-leading";
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.embedding_dim = 0;
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.optimizer.learning_rate = -1.0f;
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.sampler_strategy = SamplerStrategy::frequency_power(-0.5);
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);

  c = base_config();
  c.lifetime.bloom = BloomSpec{0, 0.01, 1};
  CHECK(thrown_code(c) == ErrorCode::kInvalidConfig);
}

TEST_CASE("stored_dim appends one position for the bias") {
  TableConfig c = base_config();
  CHECK(c.stored_dim() == 8);
  c.has_bias = true;
  CHECK(c.stored_dim() == 9);
}

TEST_CASE("config digest is equal iff the behavioral fields are equal") {
  const TableConfig a = base_config();
  TableConfig b = base_config();
  CHECK(config_digest(a) == config_digest(b));

  // The name is identity, not behavior: renames keep the digest.
  b.name = "renamed";
  CHECK(config_digest(a) == config_digest(b));

  // Every behavioral field change must move the digest.
  std::set<std::uint64_t> digests;
  digests.insert(config_digest(a));
  auto mutated = [&](auto&& mutate) {
    TableConfig m = base_config();
    mutate(m);
    return config_digest(m);
  };
  const std::uint64_t variants[] = {
      mutated([](TableConfig& m) { m.embedding_dim = 9; }),
      mutated([](TableConfig& m) { m.has_bias = true; }),
      mutated([](TableConfig& m) { m.initializer = InitializerSpec::constant(1.0); }),
      mutated([](TableConfig& m) { m.initializer = InitializerSpec::normal(0.5); }),
      mutated([](TableConfig& m) { m.seed = 10; }),
      mutated([](TableConfig& m) { m.optimizer = OptimizerSpec::adagrad(0.05f); }),
      mutated([](TableConfig& m) { m.optimizer = OptimizerSpec::sgd(0.06f); }),
      mutated([](TableConfig& m) { m.optimizer = OptimizerSpec::momentum(0.05f, 0.9f); }),
      mutated([](TableConfig& m) {
        m.sampler_strategy = SamplerStrategy::frequency_power(0.75);
      }),
      mutated([](TableConfig& m) { m.lifetime.frequency_cutoff = 5; }),
      mutated([](TableConfig& m) { m.lifetime.bloom = BloomSpec{100, 0.01, 1}; }),
      mutated([](TableConfig& m) { m.lifetime.bloom = BloomSpec{100, 0.01, 2}; }),
      mutated([](TableConfig& m) { m.backend = BackendSpec::file_snapshot("/tmp/x"); }),
      mutated([](TableConfig& m) { m.backend = BackendSpec::cached_remote("r", 64); }),
  };
  for (const std::uint64_t d : variants) {
    CHECK(digests.insert(d).second);  // distinct from the base and each other
  }
}

TEST_CASE("init_vector is a pure function of key, seed and shape") {
  const TableConfig c = base_config();
  const std::vector<float> v1 = init_vector("alpha", c);
  const std::vector<float> v2 = init_vector("alpha", c);
  REQUIRE(v1.size() == c.stored_dim());
  CHECK(v1 == v2);
  CHECK(init_vector("beta", c) != v1);

  TableConfig reseeded = c;
  reseeded.seed = c.seed + 1;
  CHECK(init_vector("alpha", reseeded) != v1);
}

TEST_CASE("init_vector honors each initializer kind") {
  TableConfig c = base_config();
  c.initializer = InitializerSpec::zeros();
  CHECK(init_vector("k", c) == std::vector<float>(8, 0.0f));

  c.initializer = InitializerSpec::constant(2.5);
  CHECK(init_vector("k", c) == std::vector<float>(8, 2.5f));

  c.initializer = InitializerSpec::uniform(0.125);
  for (const float v : init_vector("k", c)) {
    CHECK(v >= -0.125f);
    CHECK(v <= 0.125f);
  }

  // Bias tables initialize the appended position too (value comes from the
  // same deterministic stream).
  c.has_bias = true;
  CHECK(init_vector("k", c).size() == 9);
}

TEST_CASE("default normal initializer has the advertised spread") {
  // make_table_config picks normal(0, 1/sqrt(dim)); over many keys the
  // sample std should land near it (loose 15% band, deterministic keys).
  const TableConfig c = base_config();
  REQUIRE(c.initializer.kind == InitializerKind::kNormal);
  CHECK(c.initializer.param == doctest::Approx(1.0 / std::sqrt(8.0)));
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < 2000; ++i) {
    for (const float v : init_vector("key-" + std::to_string(i), c)) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double stddev = std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(mean) < 0.01);
  CHECK(stddev == doctest::Approx(1.0 / std::sqrt(8.0)).epsilon(0.15));
}

TEST_CASE("DYNEMBED_SEED overrides per-table seeds at construction") {
  setenv("DYNEMBED_SEED", "424242", 1);
  const TableConfig c = make_table_config("t", 4, false, OptimizerSpec::sgd(0.1f), 7);
  unsetenv("DYNEMBED_SEED");
  CHECK(c.seed == 424242);
  const TableConfig after = make_table_config("t", 4, false, OptimizerSpec::sgd(0.1f), 7);
  CHECK(after.seed == 7);
}

}  // TEST_SUITE

}  // namespace
}  // namespace dynembed
