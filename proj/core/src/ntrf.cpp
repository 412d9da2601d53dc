#include "cssl/ntrf.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <limits>

#include "cssl/data.hpp"
#include "cssl/errors.hpp"
#include "cssl/stream.hpp"

namespace cssl {
namespace {

constexpr std::uint64_t kPerturbStream = 0x7e57;
constexpr std::uint64_t kXiStream = 0x71;

std::vector<double> shifted(std::span<const double> x, std::span<const double> xi) {
  std::vector<double> z(x.begin(), x.end());
  if (!xi.empty()) {
    if (xi.size() != x.size()) throw InputError("perturbation length does not match the input");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += xi[i];
  }
  return z;
}

void check_pair(const NetworkParams& w, const NetworkParams& w2) {
  if (!(w.dims == w2.dims) || w.layers.size() != w2.layers.size()) {
    throw InputError("weight sets have different dimensions");
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    if (!w.layers[l].same_shape(w2.layers[l])) throw InputError("weight sets are not shape-congruent");
  }
  if (w.dims.K != 1) throw InputError("probes need a scalar-output network");
}

double directional(const NetworkParams& w, const NetworkParams& w2, const ForwardTrace& trace) {
  const std::vector<double> one{1.0};
  const auto u = backprop_factors(w, trace, one);
  double total = 0.0;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    Matrix delta = w2.layers[l];
    delta.axpy(-1.0, w.layers[l]);
    total += bilinear(u[l], delta, trace.hidden[l]);
  }
  return total;
}

std::vector<double> random_xi(std::size_t d, double sq_norm, Rng& rng) {
  if (sq_norm <= 0.0) return {};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double n = 0.0;
  while (n < 1e-12) {
    for (double& x : v) x = normal(rng);
    n = norm2(v);
  }
  for (double& x : v) x *= std::sqrt(sq_norm) / n;
  return v;
}

std::vector<Example> probe_inputs(const NtrfProbe& probe, std::size_t count, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kTwoClassMargin;
  spec.d = probe.d;
  spec.classes = 2;
  spec.per_class = (count + 1) / 2;
  spec.test_per_class = 0;
  spec.lambda_sep = probe.lambda_sep;
  spec.seed = seed;
  auto data = gen_synthetic(spec).train;
  data.resize(count);
  return data;
}

struct StaticPoint {
  std::size_t m, L;
  std::uint64_t seed;
};

std::vector<SweepRow> run_static(const NtrfProbe& probe, const StaticPoint& p) {
  std::vector<SweepRow> rows;
  auto add = [&](const std::string& name, double omega, double v) {
    rows.push_back({name, p.m, p.L, omega, p.seed, v});
  };
  const auto inputs = probe_inputs(probe, probe.inputs, p.seed);
  const auto w0 = init_params({probe.d, p.m, p.L, 1}, p.seed, Mode::kTheory);
  Rng rng = make_rng(p.seed, kPerturbStream + p.m);
  Rng xi_rng = make_rng(p.seed, kXiStream);
  const auto xi = random_xi(probe.d, probe.xi_sq, xi_rng);
  const Example& e = inputs.front();
  for (double omega : {probe.omega, probe.omega / 4.0}) {
    const auto w2 = perturb_params(w0, omega, rng);
    const auto z = shifted(e.features, xi);
    const double f = forward(w0, z).output[0];
    const double f2 = forward(w2, z).output[0];
    add("taylor_residual", omega, taylor_residual(w0, w2, e.features, xi));
    add("output_change", omega, std::abs(f2 - f));
    add("convexity_gap", omega, convexity_gap(w0, w2, e, xi));
  }
  const auto h = hidden_norm_check(w0, inputs, xi);
  add("hidden_norm_pass_rate", 0.0, h.pass_rate);
  const auto g = grad_norm_check(w0, inputs, xi);
  add("grad_norm_forward", 0.0, g.forward_ratio);
  add("grad_norm_loss", 0.0, g.loss_ratio);
  return rows;
}

std::vector<SweepRow> run_drift(const NtrfProbe& probe, const StaticPoint& p) {
  std::vector<SweepRow> rows;
  auto add = [&](const std::string& name, double v) { rows.push_back({name, p.m, p.L, 0.0, p.seed, v}); };
  const auto data = probe_inputs(probe, probe.n, p.seed);
  const auto r = iterate_drift(data, p.m, p.L, probe.B, probe.capacity, probe.kappa, probe.xi_sq, p.seed);
  add("drift", r.max_drift);
  add("drift_scaled", r.scaled);
  add("drift_bound_proxy", r.bound_proxy);
  const auto r2 = iterate_drift(data, p.m, p.L, 2 * probe.B, probe.capacity, probe.kappa, probe.xi_sq, p.seed);
  add("drift_double_B", r2.max_drift);
  const auto terms = theorem_terms(r.n, probe.B, p.L, p.m, r.xi_sup_sq, probe.delta, r.avg_train_loss);
  add("green", terms.green);
  add("blue_monitor", terms.blue_monitor);
  add("avg_train_loss", terms.avg_train_loss);
  return rows;
}

template <typename Job>
std::vector<std::vector<SweepRow>> run_grid(const std::vector<StaticPoint>& points, std::size_t workers, Job job) {
  std::vector<std::vector<SweepRow>> out(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        out[i] = job(points[i]);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, points.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

void NtrfProbe::validate() const {
  if (!(omega > 0.0)) throw ConfigError("omega must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(lambda_sep > 0.0)) throw ConfigError("lambda_sep must be > 0");
  if (m_sweep.empty() && drift_m_sweep.empty()) throw ConfigError("m sweep is empty");
  for (auto m : m_sweep) {
    if (m < 2) throw ConfigError("m sweep entries must be >= 2");
  }
  for (auto m : drift_m_sweep) {
    if (m < 2) throw ConfigError("drift m sweep entries must be >= 2");
  }
  if (L_sweep.empty()) throw ConfigError("L sweep is empty");
  for (auto L : L_sweep) {
    if (L < 2) throw ConfigError("L sweep entries must be >= 2");
  }
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  if (inputs < 1) throw ConfigError("inputs must be >= 1");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be > 0");
  if (!(xi_sq >= 0.0)) throw ConfigError("xi_sq must be >= 0");
  if (d < 1) throw ConfigError("d must be >= 1");
}

NetworkParams perturb_params(const NetworkParams& w, double omega, Rng& rng) {
  NetworkParams out = w;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& layer : out.layers) {
    Matrix u(layer.rows(), layer.cols());
    for (double& v : u.data()) v = normal(rng);
    const double n = u.frobenius_norm();
    if (n > 0.0) layer.axpy(omega / n, u);
  }
  return out;
}

double directional_derivative(const NetworkParams& w, const NetworkParams& w2, std::span<const double> x) {
  check_pair(w, w2);
  return directional(w, w2, forward(w, x));
}

double taylor_residual(const NetworkParams& w, const NetworkParams& w2, std::span<const double> x,
                       std::span<const double> xi) {
  check_pair(w, w2);
  const auto z = shifted(x, xi);
  const auto trace = forward(w, z);
  const double f = trace.output[0];
  const double f2 = forward(w2, z).output[0];
  return std::abs(f2 - f - directional(w, w2, trace));
}

double convexity_gap(const NetworkParams& w, const NetworkParams& w2, const Example& example,
                     std::span<const double> xi) {
  check_pair(w, w2);
  const double y = example.label == 1 ? 1.0 : -1.0;
  const auto z = shifted(example.features, xi);
  const auto trace = forward(w, z);
  const double f = trace.output[0];
  const double f2 = forward(w2, z).output[0];
  const double linear = logistic_loss_derivative(y * f) * y * directional(w, w2, trace);
  return linear - (logistic_loss(y * f2) - logistic_loss(y * f));
}

HiddenNormResult hidden_norm_check(const NetworkParams& w0, std::span<const Example> inputs,
                                   std::span<const double> xi) {
  HiddenNormResult r;
  const auto L = static_cast<double>(w0.dims.L);
  const auto m = static_cast<double>(w0.dims.m);
  r.slack = 4.0 * std::sqrt(L / m);
  const double xs = squared_norm(xi);
  const double lo = 1.0 - xs - r.slack;
  const double hi = 1.0 + xs + r.slack;
  r.min_sq = std::numeric_limits<double>::infinity();
  r.max_sq = -std::numeric_limits<double>::infinity();
  std::size_t pass = 0;
  for (const auto& e : inputs) {
    check_unit_norm(e);
    const auto trace = forward(w0, shifted(e.features, xi));
    for (std::size_t l = 1; l < w0.dims.L; ++l) {
      const double s = squared_norm(trace.hidden[l]);
      r.min_sq = std::min(r.min_sq, s);
      r.max_sq = std::max(r.max_sq, s);
      if (s >= lo && s <= hi) ++pass;
      ++r.pairs;
    }
  }
  r.pass_rate = r.pairs > 0 ? static_cast<double>(pass) / static_cast<double>(r.pairs) : 0.0;
  return r;
}

GradNormResult grad_norm_check(const NetworkParams& w, std::span<const Example> inputs, std::span<const double> xi) {
  GradNormResult r;
  const double norm = std::sqrt(static_cast<double>(w.dims.m) * (1.0 + squared_norm(xi)));
  const std::vector<double> one{1.0};
  for (const auto& e : inputs) {
    const auto trace = forward(w, shifted(e.features, xi));
    const auto u = backprop_factors(w, trace, one);
    double best = 0.0;
    for (std::size_t l = 0; l < w.dims.L; ++l) {
      // ||u h^T||_F = ||u|| ||h||, so the gradient itself is never formed.
      best = std::max(best, norm2(u[l]) * norm2(trace.hidden[l]));
    }
    const double y = e.label == 1 ? 1.0 : -1.0;
    const double lprime = std::abs(logistic_loss_derivative(y * trace.output[0]));
    r.forward_ratio = std::max(r.forward_ratio, best / norm);
    r.loss_ratio = std::max(r.loss_ratio, lprime * best / norm);
  }
  return r;
}

DriftResult iterate_drift(const std::vector<Example>& data, std::size_t m, std::size_t L, std::size_t B,
                          std::size_t capacity, double kappa, double xi_sq, std::uint64_t seed) {
  DriftResult r;
  r.n = data.size();
  r.layer_drift.assign(L, 0.0);
  if (data.empty()) return r;
  StreamConfig cfg;
  cfg.mode = Mode::kTheory;
  cfg.m = m;
  cfg.L = L;
  cfg.eta.kind = EtaKind::kConstant;
  cfg.eta.eta = kappa * std::pow(static_cast<double>(m), -1.5);
  cfg.replay_samples = B;
  cfg.capacity = capacity;
  cfg.eviction = EvictionPolicy::kUniformRandom;
  cfg.ordering = Ordering::kIid;
  cfg.seed = seed;
  if (xi_sq > 0.0) {
    cfg.augment.theory_perturb.enabled = true;
    cfg.augment.theory_perturb.budget = xi_sq;
  }
  TaskData task{"drift", 2, data, {}};
  const auto w0 = init_params({data.front().features.size(), m, L, 1}, seed, Mode::kTheory);
  RunHooks hooks;
  hooks.after_step = [&](const StreamState& s) {
    const auto& p = s.net.params();
    for (std::size_t l = 0; l < L; ++l) {
      if (!p.trainable[l]) continue;
      Matrix diff = p.layers[l];
      diff.axpy(-1.0, w0.layers[l]);
      r.layer_drift[l] = std::max(r.layer_drift[l], diff.frobenius_norm());
    }
  };
  std::ostringstream sink;
  const auto result = run(cfg, {std::move(task)}, sink, {}, hooks);
  r.max_drift = *std::max_element(r.layer_drift.begin(), r.layer_drift.end());
  r.scaled = r.max_drift * std::sqrt(static_cast<double>(m));
  r.xi_sup_sq = result.state.tracker.sup_sq_norm;
  r.bound_proxy = static_cast<double>(r.n * B) * std::sqrt(1.0 + r.xi_sup_sq);
  r.avg_train_loss = result.avg_train_loss;
  return r;
}

TheoremTerms theorem_terms(std::size_t n, std::size_t B, std::size_t L, std::size_t m, double xi_sup,
                           double delta, double avg_train_loss) {
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must lie in (0, 1)");
  if (n == 0) throw InputError("theorem terms need n >= 1");
  if (m < 2) throw InputError("theorem terms need m >= 2");
  if (L == 0) throw InputError("theorem terms need L >= 1");
  TheoremTerms t;
  const double nd = static_cast<double>(n);
  t.green = std::sqrt(2.0 * std::log(1.0 / delta) / nd);
  const double Ld = static_cast<double>(L);
  t.blue_monitor = std::pow(1.0 + xi_sup, 0.75) * std::sqrt(static_cast<double>(B)) * nd /
                   (Ld * Ld * std::pow(std::log(static_cast<double>(m)), 1.5));
  t.avg_train_loss = avg_train_loss;
  return t;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool SweepReport::all_passed() const {
  return std::all_of(trends.begin(), trends.end(), [](const TrendCheck& c) { return c.passed.value_or(true); });
}

SweepReport ntrf_sweep(const NtrfProbe& probe) {
  probe.validate();
  std::vector<StaticPoint> static_points;
  std::vector<StaticPoint> drift_points;
  for (auto L : probe.L_sweep) {
    for (auto m : probe.m_sweep) {
      for (std::size_t s = 0; s < probe.seeds; ++s) static_points.push_back({m, L, probe.base_seed + s});
    }
    for (auto m : probe.drift_m_sweep) {
      for (std::size_t s = 0; s < probe.seeds; ++s) drift_points.push_back({m, L, probe.base_seed + s});
    }
  }
  SweepReport report;
  for (auto& chunk : run_grid(static_points, probe.workers, [&](const StaticPoint& p) { return run_static(probe, p); })) {
    report.rows.insert(report.rows.end(), chunk.begin(), chunk.end());
  }
  for (auto& chunk : run_grid(drift_points, probe.workers, [&](const StaticPoint& p) { return run_drift(probe, p); })) {
    report.rows.insert(report.rows.end(), chunk.begin(), chunk.end());
  }

  // (probe, L, m, omega) -> values over seeds
  std::map<std::tuple<std::string, std::size_t, std::size_t, double>, std::vector<double>> groups;
  for (const auto& r : report.rows) groups[{r.probe, r.L, r.m, r.omega}].push_back(r.value);
  auto med = [&](const std::string& probe_name, std::size_t L, std::size_t m, double omega) {
    return median(groups.at({probe_name, L, m, omega}));
  };
  auto abs_med = [&](const std::string& probe_name, std::size_t L, std::size_t m, double omega) {
    auto v = groups.at({probe_name, L, m, omega});
    for (double& x : v) x = std::abs(x);
    return median(v);
  };
  const double w = probe.omega;
  const double wq = probe.omega / 4.0;
  for (auto L : probe.L_sweep) {
    const std::string tag = " L=" + std::to_string(L);
    std::vector<double> grad_meds;
    for (auto m : probe.m_sweep) {
      const std::string at = tag + " m=" + std::to_string(m);
      const double r_full = med("taylor_residual", L, m, w);
      const double r_quarter = med("taylor_residual", L, m, wq);
      report.trends.push_back({"taylor_residual_omega_scaling" + at, r_quarter <= r_full / 3.0,
                               "median at omega/4 " + fmt(r_quarter) + " vs median at omega " + fmt(r_full)});
      const double change = med("output_change", L, m, w);
      report.trends.push_back({"taylor_linear_term_helps" + at, r_full <= change,
                               "median residual " + fmt(r_full) + " vs median |f' - f| " + fmt(change)});
      const double g_full = abs_med("convexity_gap", L, m, w);
      const double g_quarter = abs_med("convexity_gap", L, m, wq);
      report.trends.push_back({"convexity_gap_omega_scaling" + at, g_quarter <= g_full / 2.0,
                               "median |gap| at omega/4 " + fmt(g_quarter) + " vs at omega " + fmt(g_full)});
      const double rate = med("hidden_norm_pass_rate", L, m, 0.0);
      std::optional<bool> asserted;
      if (m >= 2048) asserted = rate >= 0.95;
      report.trends.push_back({"hidden_norm_pass_rate" + at, asserted, "median pass rate " + fmt(rate)});
      grad_meds.push_back(med("grad_norm_forward", L, m, 0.0));
      const auto& fwd = groups.at({"grad_norm_forward", L, m, 0.0});
      const auto& lss = groups.at({"grad_norm_loss", L, m, 0.0});
      bool ok = true;
      for (std::size_t i = 0; i < fwd.size(); ++i) ok = ok && lss[i] <= fwd[i];
      report.trends.push_back({"grad_norm_loss_below_forward" + at, ok,
                               "median loss ratio " + fmt(med("grad_norm_loss", L, m, 0.0)) + " vs forward " +
                                   fmt(med("grad_norm_forward", L, m, 0.0))});
    }
    if (!probe.m_sweep.empty()) {
      std::string detail;
      for (std::size_t i = 0; i < probe.m_sweep.size(); ++i) {
        detail += "m=" + std::to_string(probe.m_sweep[i]) + ":" + fmt(abs_med("convexity_gap", L, probe.m_sweep[i], w)) + " ";
      }
      report.trends.push_back({"convexity_gap_vs_m" + tag, std::nullopt, detail});
      const auto [lo, hi] = std::minmax_element(grad_meds.begin(), grad_meds.end());
      report.trends.push_back({"grad_norm_ratio_stable" + tag, *lo > 0.0 && *hi / *lo <= 3.0,
                               "median ratio range [" + fmt(*lo) + ", " + fmt(*hi) + "]"});
    }
    const auto& dm = probe.drift_m_sweep;
    for (std::size_t i = 0; i < dm.size(); ++i) {
      const std::string at = tag + " m=" + std::to_string(dm[i]);
      const double d1 = med("drift", L, dm[i], 0.0);
      const double d2 = med("drift_double_B", L, dm[i], 0.0);
      const double ratio = d1 > 0.0 ? d2 / d1 : 0.0;
      report.trends.push_back({"drift_doubling_B" + at, ratio >= 2.0 / 1.5 && ratio <= 2.0 * 1.5,
                               "median drift ratio " + fmt(ratio)});
      if (i + 1 < dm.size()) {
        const double next = med("drift", L, dm[i + 1], 0.0);
        const double limit = 1.5 * std::sqrt(static_cast<double>(dm[i]) / static_cast<double>(dm[i + 1]));
        const double r = d1 > 0.0 ? next / d1 : 0.0;
        report.trends.push_back({"drift_width_scaling" + tag + " m=" + std::to_string(dm[i]) + "->" +
                                     std::to_string(dm[i + 1]),
                                 r <= limit, "median drift ratio " + fmt(r) + " limit " + fmt(limit)});
        const double b1 = med("blue_monitor", L, dm[i], 0.0);
        const double b2 = med("blue_monitor", L, dm[i + 1], 0.0);
        report.trends.push_back({"blue_monitor_decreasing" + tag, dm[i + 1] > dm[i] ? b2 < b1 : b2 > b1,
                                 fmt(b1) + " -> " + fmt(b2)});
      }
    }
  }
  return report;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write '" + path.string() + "'");
  out << "# " << header << '\n';
  out << "probe,m,L,omega,seed,value\n";
  out.precision(17);
  for (const auto& r : report.rows) {
    out << r.probe << ',' << r.m << ',' << r.L << ',' << r.omega << ',' << r.seed << ',' << r.value << '\n';
  }
  if (!out) throw StorageError("write failed for '" + path.string() + "'");
}

void write_sweep_summary(const std::filesystem::path& path, const SweepReport& report, const NtrfProbe& probe,
                         const std::string& header_hash) {
  nlohmann::ordered_json j;
  j["version"] = kArtifactVersion;
  j["config_hash"] = header_hash;
  j["probe"] = {{"m_sweep", probe.m_sweep},   {"drift_m_sweep", probe.drift_m_sweep},
                {"L_sweep", probe.L_sweep},   {"seeds", probe.seeds},
                {"omega", probe.omega},       {"R", probe.R},
                {"delta", probe.delta},       {"n", probe.n},
                {"B", probe.B},               {"kappa", probe.kappa},
                {"lambda_sep", probe.lambda_sep}, {"xi_sq", probe.xi_sq}};
  auto trends = nlohmann::ordered_json::array();
  for (const auto& t : report.trends) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    if (t.passed) {
      e["passed"] = *t.passed;
    } else {
      e["passed"] = nullptr;
    }
    e["detail"] = t.detail;
    trends.push_back(e);
  }
  j["trends"] = trends;
  j["all_passed"] = report.all_passed();
  j["red_term"] = "not computed";
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace cssl
