#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"

#include "cssl/codec.hpp"
#include "cssl/errors.hpp"
#include "cssl/logging.hpp"
#include "cssl/replay.hpp"

using namespace cssl;

namespace {

Example tagged(int label, std::int64_t id) {
  auto e = Example::vector({static_cast<double>(id)}, label);
  e.group_id = id;
  return e;
}

Example image(std::mt19937_64& rng, ImageShape shape, int label) {
  Example e;
  e.shape = shape;
  e.kind = FeatureKind::kPixels;
  e.features = oracle::random_pixels(rng, shape.count());
  e.label = label;
  return e;
}

std::size_t max_count(const std::map<int, std::size_t>& counts) {
  std::size_t m = 0;
  for (const auto& [label, n] : counts) m = std::max(m, n);
  return m;
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("quantization formula") {
    CHECK(dequantize_level(quantize_level(137, 8), 8) == 137);
    CHECK(quantize_level(255, 4) == 15);
    CHECK(dequantize_level(15, 4) == 240);
    CHECK(dequantize_level(quantize_level(200, 1), 1) == 128);
    CHECK_THROWS_AS(quantize_level(10, 0), ConfigError);
    CHECK_THROWS_AS(quantize_level(10, 9), ConfigError);
  }

  TEST_CASE("quantization error bound holds for every bit depth") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> u(0, 255);
    for (int b = 1; b <= 8; ++b) {
      std::vector<std::uint8_t> px(1000);
      for (auto& p : px) p = static_cast<std::uint8_t>(u(rng));
      const auto back = dequantize(quantize(px, b), b);
      for (std::size_t i = 0; i < px.size(); ++i) {
        CHECK(std::abs(int(back[i]) - int(px[i])) < (1 << (8 - b)));
        CHECK(back[i] <= px[i]);
      }
      if (b == 8) CHECK(back == px);
    }
  }

  TEST_CASE("bit packing round trip") {
    std::mt19937_64 rng(3);
    for (int b = 1; b <= 8; ++b) {
      std::uniform_int_distribution<int> u(0, (1 << b) - 1);
      std::vector<std::uint8_t> v(37);
      for (auto& x : v) x = static_cast<std::uint8_t>(u(rng));
      const auto packed = pack_bits(v, b);
      CHECK(packed.size() == (37 * static_cast<std::size_t>(b) + 7) / 8);
      CHECK(unpack_bits(packed, b, v.size()) == v);
    }
    CHECK(pack_bits(std::vector<std::uint8_t>{0xA, 0x5}, 4) == std::vector<std::uint8_t>{0xA5});
  }

  TEST_CASE("resize geometry and round trips") {
    CHECK(resized_shape({32, 32, 3}, 0.66).height == 26);
    CHECK(resized_shape({32, 32, 3}, 0.66).width == 26);
    CHECK(resized_shape({1, 1, 1}, 0.01).height == 1);
    CHECK(resized_shape({28, 28, 1}, 1.0) == ImageShape{28, 28, 1});
    CHECK_THROWS_AS(resized_shape({4, 4, 1}, 0.0), ConfigError);

    std::mt19937_64 rng(5);
    const ImageShape s{9, 7, 2};
    const auto img = oracle::random_pixels(rng, s.count());
    CHECK(resize_bilinear(img, s, s) == img);
    const std::vector<double> flat(s.count(), 77.0);
    const auto small = resize_bilinear(flat, s, resized_shape(s, 0.4));
    for (double v : resize_bilinear(small, resized_shape(s, 0.4), s)) CHECK(v == doctest::Approx(77.0).epsilon(1e-12));
  }

  TEST_CASE("encode and decode preserve shape for every codec") {
    std::mt19937_64 rng(8);
    for (int b : {1, 3, 4, 8}) {
      for (double r : {1.0, 0.66, 0.25}) {
        const Codec c{b, r};
        const auto e = image(rng, {12, 10, 3}, 2);
        const auto d = decode(encode(e, c));
        CHECK(d.shape == e.shape);
        CHECK(d.features.size() == e.features.size());
        CHECK(d.label == e.label);
        if (r == 1.0) {
          for (std::size_t i = 0; i < e.features.size(); ++i) {
            CHECK(std::abs(d.features[i] - e.features[i]) < std::ldexp(1.0, 8 - b));
          }
        }
        for (double v : d.features) {
          CHECK(v >= 0.0);
          CHECK(v <= 255.0);
        }
      }
    }
    const auto v = Example::vector({0.6, 0.8}, 1);
    CHECK(decode(encode(v, Codec{})) == v);
    CHECK_THROWS_AS(encode(v, Codec{4, 1.0}), StorageError);
  }

  TEST_CASE("payload accounting") {
    std::mt19937_64 rng(1);
    ReplayBuffer empty(10, Codec{}, EvictionPolicy::kClassBalanced, 0);
    CHECK(empty.payload_bytes() == 0);
    CHECK(empty.memory_footprint() == 0);

    ReplayBuffer full(10, Codec{}, EvictionPolicy::kClassBalanced, 0);
    full.store(image(rng, {32, 32, 3}, 0));
    CHECK(full.payload_bytes() == 3072);
    CHECK(full.memory_footprint() == 3072 + kEntryOverheadBytes);

    ReplayBuffer half(10, Codec{4, 1.0}, EvictionPolicy::kClassBalanced, 0);
    half.store(image(rng, {32, 32, 3}, 0));
    CHECK(half.payload_bytes() == 1536);
    CHECK(encoded_payload_bytes({32, 32, 3}, FeatureKind::kPixels, Codec{4, 0.66}) == 26 * 26 * 3 / 2);

    CHECK(capacity_for_budget(30000, {32, 32, 3}, FeatureKind::kPixels, Codec{}) == 9);
    CHECK_THROWS_AS(capacity_for_budget(100, {32, 32, 3}, FeatureKind::kPixels, Codec{}), ConfigError);
  }
}

TEST_SUITE("replay") {
  TEST_CASE("storing below capacity never evicts") {
    ReplayBuffer b(5, Codec{}, EvictionPolicy::kClassBalanced, 1);
    for (int i = 0; i < 5; ++i) {
      CHECK(b.store(tagged(i % 2, i)) == StoreOutcome::kStored);
      CHECK(b.size() == static_cast<std::size_t>(i + 1));
    }
    CHECK(b.store(tagged(0, 5)) == StoreOutcome::kStoredAfterEviction);
    CHECK(b.size() == 5);
  }

  TEST_CASE("store evicts from the most populous class") {
    ReplayBuffer b(4, Codec{}, EvictionPolicy::kClassBalanced, 2);
    for (int i = 0; i < 3; ++i) b.store(tagged(0, i));
    b.store(tagged(1, 3));
    b.store(tagged(1, 4));
    CHECK(b.class_counts() == std::map<int, std::size_t>{{0, 2}, {1, 2}});
  }

  TEST_CASE("class balanced eviction") {
    Rng rng(4);
    SUBCASE("largest class loses") {
      ReplayBuffer b(100, Codec{}, EvictionPolicy::kClassBalanced, 0);
      for (int i = 0; i < 5; ++i) b.store(tagged(7, i));
      for (int i = 0; i < 2; ++i) b.store(tagged(3, 10 + i));
      CHECK(b.evict_class_balanced(rng).label == 7);
      CHECK(b.class_counts().at(7) == 4);
    }
    SUBCASE("ties are split uniformly") {
      std::map<int, int> hits;
      for (int trial = 0; trial < 2000; ++trial) {
        ReplayBuffer b(100, Codec{}, EvictionPolicy::kClassBalanced, 0);
        b.store(tagged(1, 0));
        b.store(tagged(1, 1));
        b.store(tagged(2, 2));
        b.store(tagged(2, 3));
        ++hits[b.evict_class_balanced(rng).label];
      }
      CHECK(hits.size() == 2);
      CHECK(std::abs(hits[1] - 1000) < 3 * std::sqrt(500.0));
    }
    SUBCASE("singleton and empty") {
      ReplayBuffer b(3, Codec{}, EvictionPolicy::kClassBalanced, 0);
      b.store(tagged(5, 0));
      CHECK(b.evict_class_balanced(rng).label == 5);
      CHECK(b.empty());
      CHECK_THROWS_AS(b.evict_class_balanced(rng), StateError);
    }
    SUBCASE("uniform members inside the chosen class") {
      std::map<std::int64_t, int> hits;
      for (int trial = 0; trial < 3000; ++trial) {
        ReplayBuffer b(100, Codec{}, EvictionPolicy::kClassBalanced, 0);
        for (int i = 0; i < 3; ++i) b.store(tagged(0, i));
        b.store(tagged(1, 9));
        b.evict_class_balanced(rng);
        std::set<std::int64_t> left;
        for (const auto& e : b.entries()) left.insert(*e.group_id);
        for (std::int64_t i = 0; i < 3; ++i) {
          if (!left.count(i)) ++hits[i];
        }
      }
      for (std::int64_t i = 0; i < 3; ++i) CHECK(std::abs(hits[i] - 1000) < 3 * std::sqrt(3000 * (1.0 / 3) * (2.0 / 3)));
    }
  }

  TEST_CASE("sampling") {
    Rng rng(6);
    ReplayBuffer b(20, Codec{}, EvictionPolicy::kClassBalanced, 0);
    CHECK(b.sample(4, rng).empty());
    b.store(tagged(3, 42));
    CHECK(b.sample(0, rng).empty());
    const auto five = b.sample(5, rng);
    REQUIRE(five.size() == 5);
    for (const auto& e : five) CHECK(e == five.front());
    CHECK(five.front().group_id == 42);

    ReplayBuffer ten(10, Codec{}, EvictionPolicy::kClassBalanced, 0);
    for (int i = 0; i < 10; ++i) ten.store(tagged(i, i));
    std::vector<std::size_t> counts(10, 0);
    for (int draw = 0; draw < 10000; ++draw) {
      for (const auto& e : ten.sample(10, rng)) ++counts[static_cast<std::size_t>(*e.group_id)];
    }
    CHECK(oracle::chi2(counts, 10000.0) < oracle::chi2_critical_01(9));
  }

  TEST_CASE("reservoir inclusion probability") {
    const std::size_t C = 100, n = 10000, trials = 200, buckets = 10;
    std::vector<std::size_t> per_bucket(buckets, 0);
    std::size_t first = 0, last = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      ReplayBuffer b(C, Codec{}, EvictionPolicy::kReservoir, trial);
      for (std::size_t i = 0; i < n; ++i) {
        b.store(tagged(0, static_cast<std::int64_t>(i)));
        if (i < C) CHECK(b.size() == i + 1);
      }
      REQUIRE(b.size() == C);
      for (const auto& e : b.entries()) {
        const auto id = static_cast<std::size_t>(*e.group_id);
        ++per_bucket[id * buckets / n];
        first += id < C;
        last += id + C >= n;
      }
    }
    const double p = static_cast<double>(C) / n;
    const double per = static_cast<double>(trials * n / buckets);
    for (auto c : per_bucket) CHECK(std::abs(static_cast<double>(c) - per * p) < 3 * std::sqrt(per * p * (1 - p)));
    const double edge = static_cast<double>(trials * C);
    CHECK(std::abs(first - edge * p) < 3 * std::sqrt(edge * p * (1 - p)));
    CHECK(std::abs(last - edge * p) < 3 * std::sqrt(edge * p * (1 - p)));
  }

  TEST_CASE("randomised store fuzz keeps the invariants") {
    std::mt19937_64 rng(31);
    for (auto policy : {EvictionPolicy::kClassBalanced, EvictionPolicy::kUniformRandom, EvictionPolicy::kReservoir}) {
      const std::size_t C = 1 + rng() % 40;
      ReplayBuffer b(C, Codec{}, policy, rng());
      for (int i = 0; i < 3000; ++i) {
        const auto before = b.class_counts();
        const bool full = b.size() == C;
        b.store(tagged(static_cast<int>(rng() % 6), i));
        CHECK(b.size() <= C);
        b.check_invariants();
        if (policy == EvictionPolicy::kClassBalanced && full) {
          CHECK(b.size() == C);
          CHECK(max_count(b.class_counts()) <= max_count(before));
        }
      }
    }
  }

  TEST_CASE("buffer state is a pure function of offers and seed") {
    auto fill = [](std::uint64_t seed) {
      ReplayBuffer b(16, Codec{}, EvictionPolicy::kClassBalanced, seed);
      for (int i = 0; i < 200; ++i) b.store(tagged(i % 5, i));
      return b;
    };
    CHECK(fill(3) == fill(3));
    CHECK_FALSE(fill(3) == fill(4));
  }

  TEST_CASE("codec failures drop the example") {
    set_log_level(LogLevel::kError);
    ReplayBuffer b(4, Codec{4, 1.0}, EvictionPolicy::kClassBalanced, 0);
    CHECK(b.store(Example::vector({0.6, 0.8}, 0)) == StoreOutcome::kDropped);
    CHECK(b.empty());
    CHECK(b.seen_count() == 0);
    set_log_level(LogLevel::kInfo);
  }

  TEST_CASE("snapshot round trip is bit exact") {
    const auto dir = oracle::temp_dir("snapshot");
    std::mt19937_64 rng(2);
    ReplayBuffer b(6, Codec{3, 0.5}, EvictionPolicy::kClassBalanced, 9);
    for (int i = 0; i < 20; ++i) {
      auto e = image(rng, {8, 8, 3}, i % 3);
      if (i % 2) e.group_id = i;
      b.store(e);
    }
    b.save_snapshot(dir / "b.snap");
    auto c = ReplayBuffer::load_snapshot(dir / "b.snap");
    CHECK(c == b);
    c.check_invariants();
    for (int i = 0; i < 10; ++i) {
      const auto e = image(rng, {8, 8, 3}, i % 4);
      b.store(e);
      c.store(e);
    }
    CHECK(c == b);

    auto bytes = oracle::read_file(dir / "b.snap");
    std::ofstream(dir / "cut.snap", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(ReplayBuffer::load_snapshot(dir / "cut.snap"), DataError);
  }

  TEST_CASE("invalid configuration") {
    CHECK_THROWS_AS(ReplayBuffer(0, Codec{}, EvictionPolicy::kClassBalanced, 0), ConfigError);
    CHECK_THROWS_AS(ReplayBuffer(4, Codec{0, 1.0}, EvictionPolicy::kClassBalanced, 0), ConfigError);
    CHECK_THROWS_AS(ReplayBuffer(4, Codec{8, 1.5}, EvictionPolicy::kClassBalanced, 0), ConfigError);
  }
}
