#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"

#include "cssl/errors.hpp"
#include "cssl/netcore.hpp"

using namespace cssl;

namespace {

double sample_variance(const Matrix& w) {
  double mean = 0.0;
  for (double v : w.data()) mean += v;
  mean /= static_cast<double>(w.size());
  double s = 0.0;
  for (double v : w.data()) s += (v - mean) * (v - mean);
  return s / static_cast<double>(w.size() - 1);
}

NetworkParams hand_net() {
  NetworkParams p;
  p.dims = {2, 2, 3, 1};
  p.mode = Mode::kPractical;
  p.layers = {Matrix(2, 2), Matrix(2, 2), Matrix(1, 2)};
  p.layers[0](0, 0) = 1;
  p.layers[0](1, 1) = 1;
  p.layers[1](0, 0) = 1;
  p.layers[1](0, 1) = 1;
  p.layers[1](1, 1) = 1;
  p.layers[2](0, 0) = 1;
  p.layers[2](0, 1) = 1;
  p.trainable = {true, true, true};
  return p;
}

GradientSet random_grads(const NetworkParams& p, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  auto g = GradientSet::zeros_like(p);
  for (auto& m : g.layers) {
    for (auto& v : m.data()) v = n(rng);
  }
  return g;
}

}  // namespace

TEST_SUITE("netcore") {
  TEST_CASE("initial weight variances match the scheme") {
    const auto p = init_params({4, 4096, 3, 1}, 7);
    const double m = 4096;
    const double mid = sample_variance(p.layers[1]);
    CHECK(mid >= 1.9 / m);
    CHECK(mid <= 2.1 / m);
    const double last = sample_variance(p.layers[2]);
    CHECK(last >= 0.9 / m);
    CHECK(last <= 1.1 / m);
    const double first = sample_variance(p.layers[0]);
    CHECK(first >= 1.9 / m);
    CHECK(first <= 2.1 / m);
  }

  TEST_CASE("initialisation is deterministic and seed dependent") {
    CHECK(init_params({5, 16, 4, 3}, 11, Mode::kPractical) == init_params({5, 16, 4, 3}, 11, Mode::kPractical));
    CHECK_FALSE(init_params({5, 16, 4, 3}, 11) == init_params({5, 16, 4, 3}, 12));
  }

  TEST_CASE("invalid dimensions are configuration errors") {
    CHECK_THROWS_AS(init_params({4, 0, 3, 1}, 0), ConfigError);
    CHECK_THROWS_AS(init_params({4, 8, 1, 1}, 0), ConfigError);
    CHECK_THROWS_AS(init_params({0, 8, 3, 1}, 0), ConfigError);
    CHECK_THROWS_AS(init_params({4, 8, 3, 0}, 0), ConfigError);
  }

  TEST_CASE("trainability mask per mode") {
    const auto t = init_params({3, 8, 4, 1}, 1, Mode::kTheory);
    CHECK(t.trainable == std::vector<bool>{false, true, true, false});
    const auto p = init_params({3, 8, 4, 2}, 1, Mode::kPractical);
    CHECK(p.trainable == std::vector<bool>{true, true, true, true});
  }

  TEST_CASE("forward on the hand network gives sqrt 2") {
    const auto p = hand_net();
    const std::vector<double> x{1.0, 0.0};
    const auto t = forward(p, x);
    CHECK(t.output[0] == doctest::Approx(std::numbers::sqrt2).epsilon(1e-15));
    CHECK(t.hidden[1] == std::vector<double>{1.0, 0.0});
    CHECK(t.hidden[2] == std::vector<double>{1.0, 0.0});
  }

  TEST_CASE("zero input and dead preactivations give zero output") {
    auto p = init_params({4, 16, 3, 2}, 3, Mode::kPractical);
    const std::vector<double> zero(4, 0.0);
    for (double v : forward(p, zero).output) CHECK(v == 0.0);

    auto q = hand_net();
    q.layers[0](0, 0) = -1;
    q.layers[0](1, 1) = -1;
    const std::vector<double> x{0.3, 0.7};
    CHECK(forward(q, x).output[0] == 0.0);
  }

  TEST_CASE("trace invariants and agreement with the loop oracle") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t L = 2 + trial % 3;
      const NetworkDims dims{6, 12, L, static_cast<std::size_t>(1 + trial % 4)};
      const auto p = init_params(dims, static_cast<std::uint64_t>(trial), Mode::kPractical);
      const auto x = oracle::random_unit(rng, 6);
      const auto t = forward(p, x);
      const auto ref = oracle::forward(p, x);
      REQUIRE(t.output.size() == ref.size());
      for (std::size_t k = 0; k < ref.size(); ++k) CHECK(t.output[k] == doctest::Approx(ref[k]).epsilon(1e-12));
      for (std::size_t l = 1; l < L; ++l) {
        for (std::size_t i = 0; i < t.preact[l].size(); ++i) {
          CHECK(t.active[l][i] == (t.preact[l][i] > 0.0 ? 1 : 0));
          CHECK(t.hidden[l][i] == (t.active[l][i] ? t.preact[l][i] : 0.0));
        }
      }
    }
  }

  TEST_CASE("output is positively homogeneous in the input") {
    std::mt19937_64 rng(9);
    const auto p = init_params({5, 32, 4, 1}, 2);
    const auto x = oracle::random_unit(rng, 5);
    const double base = forward(p, x).output[0];
    for (double c : {0.25, 0.5, 3.0}) {
      std::vector<double> y = x;
      for (auto& v : y) v *= c;
      CHECK(forward(p, y).output[0] == doctest::Approx(c * base).epsilon(1e-12));
    }
  }

  TEST_CASE("wrong input length is a shape error") {
    const auto p = init_params({4, 8, 3, 1}, 0);
    const std::vector<double> x(5, 0.1);
    CHECK_THROWS_AS(forward(p, x), ShapeError);
  }

  TEST_CASE("binary loss values") {
    CHECK(loss_binary(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double far = loss_binary(100.0, 1);
    CHECK(far > 0.0);
    CHECK(far == doctest::Approx(std::exp(-100.0)).epsilon(1e-12));
    CHECK(loss_binary(-1e4, 1) == doctest::Approx(1e4));
    CHECK(std::isfinite(loss_binary(1e4, -1)));
    CHECK(loss_binary(700.0, 1) > 0.0);
    CHECK_THROWS_AS(loss_binary(0.0, 0), InputError);
  }

  TEST_CASE("zero-one loss is bounded by four times the logistic loss") {
    for (int i = 0; i <= 20000; ++i) {
      const double z = -100.0 + 100.0 * i / 20000.0;
      CHECK(1.0 <= 4.0 * logistic_loss(z));
    }
  }

  TEST_CASE("multiclass loss values") {
    const std::vector<double> uniform(7, 0.3);
    CHECK(loss_multiclass(uniform, 2) == doctest::Approx(std::log(7.0)).epsilon(1e-14));
    const std::vector<double> logits{1.5, -0.2, 0.7, 3.0};
    CHECK(loss_multiclass(logits, oracle::one_hot(2, 4)) == doctest::Approx(loss_multiclass(logits, 2)).epsilon(1e-15));
    const double lam = 0.3;
    const std::vector<double> soft{0.0, lam, 0.0, 1.0 - lam};
    const double mixed = lam * loss_multiclass(logits, 1) + (1 - lam) * loss_multiclass(logits, 3);
    CHECK(loss_multiclass(logits, soft) == doctest::Approx(mixed).epsilon(1e-14));
    CHECK(loss_multiclass(logits, soft) == doctest::Approx(oracle::cross_entropy(logits, soft)).epsilon(1e-14));
    const std::vector<double> bad{0.5, 0.4, 0.0, 0.0};
    CHECK_THROWS_AS(loss_multiclass(logits, bad), InputError);
    const std::vector<double> huge{1e4, -1e4, 0.0, 0.0};
    CHECK(std::isfinite(loss_multiclass(huge, 1)));
  }

  TEST_CASE("backward matches central differences") {
    std::mt19937_64 rng(21);
    SUBCASE("theory mode") {
      const auto p = init_params({3, 8, 3, 1}, 4, Mode::kTheory);
      const auto x = oracle::random_unit(rng, 3);
      const auto g = backward(p, forward(p, x), BinaryLabel{-1});
      const auto r = oracle::compare_fd(p, x, {-1.0}, g);
      CHECK(r.max_rel_error <= 1e-4);
      for (double v : g.layers[0].data()) CHECK(v == 0.0);
      for (double v : g.layers[2].data()) CHECK(v == 0.0);
    }
    SUBCASE("practical mode, hard and soft labels") {
      const auto p = init_params({3, 8, 3, 4}, 6, Mode::kPractical);
      const auto x = oracle::random_unit(rng, 3);
      const auto g = backward(p, forward(p, x), ClassLabel{2});
      CHECK(oracle::compare_fd(p, x, oracle::one_hot(2, 4), g).max_rel_error <= 1e-4);
      const std::vector<double> soft{0.1, 0.0, 0.6, 0.3};
      const auto gs = backward(p, forward(p, x), SoftLabel{soft});
      CHECK(oracle::compare_fd(p, x, soft, gs).max_rel_error <= 1e-4);
    }
  }

  TEST_CASE("backward trivial cases") {
    const auto p = init_params({4, 8, 3, 3}, 2, Mode::kPractical);
    const std::vector<double> zero(4, 0.0);
    const auto g0 = backward(p, forward(p, zero), ClassLabel{1});
    for (const auto& m : g0.layers) {
      for (double v : m.data()) CHECK(v == 0.0);
    }
    std::mt19937_64 rng(1);
    const auto x = oracle::random_unit(rng, 4);
    const auto t = forward(p, x);
    const auto g1 = backward(p, t, ClassLabel{0}, 1.0);
    const auto g2 = backward(p, t, ClassLabel{0}, 2.0);
    for (std::size_t l = 0; l < g1.layers.size(); ++l) {
      for (std::size_t i = 0; i < g1.layers[l].size(); ++i) CHECK(g2.layers[l].data()[i] == 2.0 * g1.layers[l].data()[i]);
    }
    const auto other = init_params({4, 9, 3, 3}, 2, Mode::kPractical);
    CHECK_THROWS_AS(backward(other, t, ClassLabel{0}), ShapeError);
  }

  TEST_CASE("apply_update arithmetic") {
    std::mt19937_64 rng(3);
    const auto p0 = init_params({3, 6, 3, 2}, 8, Mode::kPractical);
    const auto g = random_grads(p0, rng);

    auto p = p0;
    apply_update(p, g, 0.0);
    CHECK(p == p0);

    apply_update(p, g, 1.0);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      for (std::size_t i = 0; i < p.layers[l].size(); ++i) {
        CHECK(p.layers[l].data()[i] == p0.layers[l].data()[i] - g.layers[l].data()[i]);
      }
    }

    const auto h = random_grads(p0, rng);
    const double eta = 0.037;
    auto together = p0;
    const std::vector<GradientSet> both{g, h};
    apply_update(together, both, eta);
    auto summed = GradientSet::zeros_like(p0);
    for (std::size_t l = 0; l < summed.layers.size(); ++l) {
      for (std::size_t i = 0; i < summed.layers[l].size(); ++i) {
        summed.layers[l].data()[i] = g.layers[l].data()[i] + h.layers[l].data()[i];
      }
    }
    auto once = p0;
    apply_update(once, summed, eta);
    CHECK(together == once);
  }

  TEST_CASE("non-finite gradients abort the update untouched") {
    std::mt19937_64 rng(4);
    auto p = init_params({3, 6, 3, 2}, 8, Mode::kPractical);
    const auto before = p;
    auto g = random_grads(p, rng);
    g.layers[1](0, 0) = std::nan("");
    CHECK_THROWS_AS(apply_update(p, g, 0.1), NumericError);
    CHECK(p == before);
  }

  TEST_CASE("theory mode never moves the edge layers") {
    std::mt19937_64 rng(12);
    auto p = init_params({4, 16, 4, 1}, 5, Mode::kTheory);
    const auto first = p.layers.front();
    const auto last = p.layers.back();
    for (int t = 0; t < 200; ++t) {
      const auto x = oracle::random_unit(rng, 4);
      apply_update(p, backward(p, forward(p, x), BinaryLabel{t % 2 ? 1 : -1}), 0.05);
    }
    CHECK(p.layers.front() == first);
    CHECK(p.layers.back() == last);
    CHECK_FALSE(p.layers[1] == init_params({4, 16, 4, 1}, 5, Mode::kTheory).layers[1]);
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    const auto dir = oracle::temp_dir("ckpt");
    auto p = init_params({5, 7, 4, 3}, 99, Mode::kPractical);
    p.layers[1](2, 3) = -0.0;
    p.layers[2](0, 0) = 1e-310;
    save_checkpoint(dir / "a.ckpt", p);
    const auto q = load_checkpoint(dir / "a.ckpt");
    CHECK(q == p);
    CHECK(std::signbit(q.layers[1](2, 3)));
    CHECK(std::filesystem::file_size(dir / "a.ckpt") == 8 + 4 + 4 * 8 + 1 + 8 + (35 + 49 + 49 + 21) * 8);

    auto bytes = oracle::read_file(dir / "a.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
    bytes[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), DataError);
  }
}
