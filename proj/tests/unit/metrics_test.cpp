#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "cssl/errors.hpp"
#include "cssl/metrics.hpp"

using namespace cssl;

TEST_SUITE("metrics") {
  TEST_CASE("omega_all values") {
    CHECK(omega_all(std::vector{0.5, 0.4}, std::vector{1.0, 0.8}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(omega_all(std::vector{1.1}, std::vector{1.0}) == doctest::Approx(1.1).epsilon(1e-15));
    const std::vector<double> a{0.3, 0.7, 0.9};
    CHECK(omega_all(a, a) == 1.0);
    CHECK_THROWS_AS(omega_all(std::vector{0.5}, std::vector{0.5, 0.5}), InputError);
    CHECK_THROWS_AS(omega_all(std::vector{0.5}, std::vector{0.0}), InputError);
    CHECK_THROWS_AS(omega_all(std::vector<double>{}, std::vector<double>{}), InputError);
  }

  TEST_CASE("omega_all is linear and scale equivariant") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t T = 1 + rng() % 12;
      std::vector<double> a(T), off(T);
      for (std::size_t t = 0; t < T; ++t) {
        a[t] = u(rng);
        off[t] = u(rng);
      }
      const double base = omega_all(a, off);
      CHECK(base == doctest::Approx(oracle::omega_all(a, off)).epsilon(1e-13));
      auto sa = a, so = off;
      for (std::size_t t = 0; t < T; ++t) {
        sa[t] *= 0.37;
        so[t] *= 0.37;
      }
      CHECK(omega_all(sa, so) == doctest::Approx(base).epsilon(1e-13));
      auto bumped = a;
      bumped[0] += 0.1;
      CHECK(omega_all(bumped, off) - base == doctest::Approx(0.1 / off[0] / static_cast<double>(T)).epsilon(1e-10));
    }
  }

  TEST_CASE("ece anchor cases") {
    std::vector<Prediction> right(10, Prediction{1, 1.0, 1});
    CHECK(ece(right) == 0.0);
    std::vector<Prediction> wrong(10, Prediction{0, 1.0, 1});
    CHECK(ece(wrong) == 1.0);
    std::vector<Prediction> ninety(4, Prediction{2, 0.9, 2});
    CHECK(ece(ninety, 15) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK_THROWS_AS(ece(std::vector<Prediction>{{0, 1.2, 0}}), InputError);
    CHECK_THROWS_AS(ece(std::vector<Prediction>{}), InputError);
  }

  TEST_CASE("bin boundaries") {
    CHECK(ece_bin(1.0, 15) == 14);
    CHECK(ece_bin(0.0, 15) == 0);
    CHECK(ece_bin(0.5, 2) == 1);
    CHECK(ece_bin(0.25, 4) == 1);
    CHECK(ece_bin(0.2499999, 4) == 0);
  }

  TEST_CASE("ece matches the per-bin scan") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Prediction> preds(1 + rng() % 300);
      for (auto& p : preds) {
        p.label = static_cast<int>(rng() % 4);
        p.predicted = static_cast<int>(rng() % 4);
        p.confidence = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      }
      const std::size_t bins = 1 + rng() % 20;
      CHECK(ece(preds, bins) == doctest::Approx(oracle::ece(preds, bins)).epsilon(1e-12));
    }
  }

  TEST_CASE("top-k accuracy") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> rows(100, std::vector<double>(6));
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (auto& v : rows[i]) v = std::round(n(rng) * 2) / 2;
      labels[i] = static_cast<int>(rng() % 6);
    }
    for (std::size_t k = 1; k <= 6; ++k) {
      double hits = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) hits += oracle::in_topk(rows[i], labels[i], k);
      CHECK(topk_accuracy(rows, labels, k) == doctest::Approx(hits / 100.0).epsilon(1e-15));
    }
    CHECK(topk_accuracy(rows, labels, 6) == 1.0);
    CHECK_THROWS_AS(topk_accuracy(rows, labels, 7), InputError);
    CHECK_THROWS_AS(topk_accuracy(std::vector<std::vector<double>>{}, std::vector<int>{}, 1), InputError);
  }

  TEST_CASE("confusion matrix") {
    const std::vector<int> y{0, 1, 2, 2, 1};
    const auto perfect = confusion(y, y, 3);
    CHECK(perfect == std::vector<std::vector<std::size_t>>{{1, 0, 0}, {0, 2, 0}, {0, 0, 2}});
    const std::vector<int> p{1, 1, 0, 2, 1};
    CHECK(confusion(p, y, 3) == std::vector<std::vector<std::size_t>>{{0, 1, 0}, {0, 2, 0}, {1, 0, 1}});
    CHECK_THROWS_AS(confusion(std::vector<int>{}, std::vector<int>{}, 3), InputError);
    CHECK_THROWS_AS(confusion(std::vector<int>{3}, std::vector<int>{0}, 3), InputError);
  }

  TEST_CASE("predictions file") {
    const auto dir = oracle::temp_dir("preds");
    std::ofstream(dir / "p.csv") << "# cssl 1.0.0\npred,conf,label\n1,0.75,1\n0,1,2\n\n";
    const auto preds = load_predictions_csv(dir / "p.csv");
    REQUIRE(preds.size() == 2);
    CHECK(preds[0].confidence == 0.75);
    CHECK(preds[1].label == 2);
    std::ofstream(dir / "empty.csv") << "";
    CHECK(load_predictions_csv(dir / "empty.csv").empty());
    std::ofstream(dir / "bad.csv") << "1,0.5\n";
    CHECK_THROWS_AS(load_predictions_csv(dir / "bad.csv"), DataError);
    std::ofstream(dir / "range.csv") << "1,1.5,1\n";
    CHECK_THROWS_AS(load_predictions_csv(dir / "range.csv"), DataError);
    CHECK_THROWS_AS(load_predictions_csv(dir / "missing.csv"), DataError);
  }
}
