#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cssl/example.hpp"
#include "cssl/netcore.hpp"
#include "cssl/rng.hpp"

namespace cssl {

struct NtrfProbe {
  std::vector<std::size_t> m_sweep{256, 1024};        // static probes
  std::vector<std::size_t> drift_m_sweep{256, 1024};  // streaming drift runs
  std::vector<std::size_t> L_sweep{3};
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double omega = 0.1;
  double R = 1.0;  // NTRF radius scale, recorded only
  double delta = 0.05;
  std::size_t n = 500;
  std::size_t B = 4;
  std::size_t capacity = 100;
  double kappa = 0.1;  // eta = kappa * m^(-3/2)
  double lambda_sep = 0.05;
  std::size_t d = 16;
  std::size_t inputs = 100;
  double xi_sq = 0.0;  // ||xi||^2 for the static probes and the stream perturbation budget
  std::size_t workers = 1;

  void validate() const;
  friend bool operator==(const NtrfProbe&, const NtrfProbe&) = default;
};

// W'_l = W_l + omega * U_l / ||U_l||_F with Gaussian U_l, for every layer.
NetworkParams perturb_params(const NetworkParams& w, double omega, Rng& rng);

// <grad_W f_W(x), W' - W> over all layers, via u_l^T (W'_l - W_l) h_{l-1}.
double directional_derivative(const NetworkParams& w, const NetworkParams& w2, std::span<const double> x);

// |f_W'(x+xi) - f_W(x+xi) - <grad_W f_W(x+xi), W' - W>|; K must be 1.
double taylor_residual(const NetworkParams& w, const NetworkParams& w2, std::span<const double> x,
                       std::span<const double> xi);

// <grad L(W), W' - W> - (L(W') - L(W)) with L = logistic loss of y f(x+xi); label 1 is y = +1.
double convexity_gap(const NetworkParams& w, const NetworkParams& w2, const Example& example,
                     std::span<const double> xi);

struct HiddenNormResult {
  double pass_rate = 0.0;
  std::size_t pairs = 0;
  double slack = 0.0;
  double min_sq = 0.0;
  double max_sq = 0.0;
};

// Fraction of (input, hidden layer) pairs with ||h_l||^2 in [1 - |xi|^2 - eps, 1 + |xi|^2 + eps],
// eps = 4 sqrt(L/m). Inputs must be unit norm (InputError otherwise).
HiddenNormResult hidden_norm_check(const NetworkParams& w0, std::span<const Example> inputs,
                                   std::span<const double> xi);

struct GradNormResult {
  double forward_ratio = 0.0;  // max_l ||grad_{W_l} f||_F / sqrt(m (1 + |xi|^2))
  double loss_ratio = 0.0;     // same for the logistic loss gradient
};

GradNormResult grad_norm_check(const NetworkParams& w, std::span<const Example> inputs, std::span<const double> xi);

struct DriftResult {
  double max_drift = 0.0;              // max over t and trainable l of ||W_l(t) - W_l(0)||_F
  std::vector<double> layer_drift;     // per layer, maximum over t
  double scaled = 0.0;                 // max_drift * sqrt(m)
  double bound_proxy = 0.0;            // n B sqrt(1 + Xi)
  double xi_sup_sq = 0.0;
  double avg_train_loss = 0.0;
  std::size_t n = 0;
};

// Theory-mode stream over `data` at width m, eta = kappa m^(-3/2), iid ordering.
DriftResult iterate_drift(const std::vector<Example>& data, std::size_t m, std::size_t L, std::size_t B,
                          std::size_t capacity, double kappa, double xi_sq, std::uint64_t seed);

struct TheoremTerms {
  double green = 0.0;           // sqrt(2 log(1/delta) / n)
  double blue_monitor = 0.0;    // (1 + Xi)^(3/4) B^(1/2) n / (L^2 log^(3/2) m)
  double avg_train_loss = 0.0;
};

TheoremTerms theorem_terms(std::size_t n, std::size_t B, std::size_t L, std::size_t m, double xi_sup,
                           double delta, double avg_train_loss);

struct SweepRow {
  std::string probe;
  std::size_t m = 0;
  std::size_t L = 0;
  double omega = 0.0;
  std::uint64_t seed = 0;
  double value = 0.0;
};

struct TrendCheck {
  std::string name;
  std::optional<bool> passed;  // empty: recorded, not asserted
  std::string detail;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<TrendCheck> trends;
  bool all_passed() const;
};

double median(std::vector<double> values);

// Every (m, L, seed) grid point runs independently on up to probe.workers threads.
SweepReport ntrf_sweep(const NtrfProbe& probe);

void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report, const std::string& header);
void write_sweep_summary(const std::filesystem::path& path, const SweepReport& report, const NtrfProbe& probe,
                         const std::string& header_hash);

}  // namespace cssl
