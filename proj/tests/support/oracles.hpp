#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// None of these call into the library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cssl/metrics.hpp"
#include "cssl/netcore.hpp"
#include "cssl/rng.hpp"

namespace oracle {

// Explicit triple loops over the layer list.
inline std::vector<double> forward(const cssl::NetworkParams& p, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l];
    std::vector<double> g(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j) * h[j];
      g[i] = s;
    }
    if (l + 1 < p.layers.size()) {
      for (auto& v : g) v = v > 0.0 ? v : 0.0;
    } else {
      for (auto& v : g) v *= std::sqrt(static_cast<double>(p.dims.m));
    }
    h = std::move(g);
  }
  return h;
}

inline double softplus_neg(double z) { return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

// Cross entropy written out from the definition (log-sum-exp with max shift).
inline double cross_entropy(const std::vector<double>& logits, const std::vector<double>& target) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) loss += target[k] * (lse - logits[k]);
  return loss;
}

// target: +-1 for K = 1, otherwise a probability vector.
inline double loss(const cssl::NetworkParams& p, const std::vector<double>& x, const std::vector<double>& target) {
  const auto out = forward(p, x);
  if (out.size() == 1) return softplus_neg(target[0] * out[0]);
  return cross_entropy(out, target);
}

struct FdResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central differences for every trainable entry; relative error uses max(|a|, |n|, floor).
inline FdResult compare_fd(const cssl::NetworkParams& p, const std::vector<double>& x,
                           const std::vector<double>& target, const cssl::GradientSet& analytic, double step = 1e-4,
                           double floor = 1e-3) {
  FdResult r;
  auto q = p;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].rows(); ++i) {
      for (std::size_t j = 0; j < p.layers[l].cols(); ++j) {
        double numeric = 0.0;
        if (p.trainable[l]) {
          const double w0 = p.layers[l](i, j);
          q.layers[l](i, j) = w0 + step;
          const double up = loss(q, x, target);
          q.layers[l](i, j) = w0 - step;
          const double dn = loss(q, x, target);
          q.layers[l](i, j) = w0;
          numeric = (up - dn) / (2.0 * step);
        }
        const double a = analytic.layers[l](i, j);
        const double err = std::abs(a - numeric);
        r.max_abs_error = std::max(r.max_abs_error, err);
        r.max_rel_error = std::max(r.max_rel_error, err / std::max({std::abs(a), std::abs(numeric), floor}));
      }
    }
  }
  return r;
}

// (1/T) sum alpha_t / offline_t, one event at a time.
inline double omega_all(const std::vector<double>& a, const std::vector<double>& off) {
  long double total = 0.0L;
  for (std::size_t t = 0; t < a.size(); ++t) total += static_cast<long double>(a[t]) / off[t];
  return static_cast<double>(total / a.size());
}

// For every bin scan all samples, membership by interval comparison.
inline double ece(const std::vector<cssl::Prediction>& preds, std::size_t bins) {
  const double n = static_cast<double>(preds.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    double count = 0.0, correct = 0.0, conf = 0.0;
    for (const auto& p : preds) {
      const bool in = b + 1 == bins ? p.confidence >= lo : (p.confidence >= lo && p.confidence < hi);
      if (!in) continue;
      count += 1.0;
      correct += p.predicted == p.label ? 1.0 : 0.0;
      conf += p.confidence;
    }
    if (count > 0) total += count / n * std::abs(correct / count - conf / count);
  }
  return total;
}

// Label is in the top k iff fewer than k entries beat it (ties go to the lower index).
inline bool in_topk(const std::vector<double>& row, int label, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  for (std::size_t i = 0; i < k; ++i) {
    if (static_cast<int>(idx[i]) == label) return true;
  }
  return false;
}

// Upper 1% points of the chi-square distribution.
inline double chi2_critical_01(std::size_t df) {
  switch (df) {
    case 9: return 21.666;
    case 80: return 112.329;
    default: return 0.0;
  }
}

inline double chi2(const std::vector<std::size_t>& counts, double expected) {
  double s = 0.0;
  for (auto c : counts) s += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return s;
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

inline std::vector<double> random_pixels(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> u(0, 255);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline std::vector<double> one_hot(int label, std::size_t k) {
  std::vector<double> v(k, 0.0);
  v[static_cast<std::size_t>(label)] = 1.0;
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cssl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
