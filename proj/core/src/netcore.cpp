#include "cssl/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "cssl/errors.hpp"
#include "cssl/rng.hpp"

namespace cssl {
namespace {

constexpr std::uint64_t kInitStream = 0x1417;

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

std::pair<std::size_t, std::size_t> expected_shape(const NetworkDims& dims, std::size_t l) {
  const std::size_t rows = (l + 1 == dims.L) ? dims.K : dims.m;
  const std::size_t cols = (l == 0) ? dims.d : dims.m;
  return {rows, cols};
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_sign(int y) {
  if (y != 1 && y != -1) throw InputError("binary label must be -1 or +1, got " + std::to_string(y));
}

void check_soft_label(std::span<const double> soft, std::size_t k) {
  if (soft.size() != k) {
    throw InputError("soft label has " + std::to_string(soft.size()) + " entries, expected " +
                     std::to_string(k));
  }
  double total = 0.0;
  for (double p : soft) {
    if (!(p >= 0.0)) throw InputError("soft label entries must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw InputError("soft label must sum to 1 (sum = " + std::to_string(total) + ")");
  }
}

double log_sum_exp(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - mx);
  return mx + std::log(s);
}

}  // namespace

void NetworkParams::check_consistent() const {
  if (dims.L < 2 || dims.m < 1 || dims.d < 1 || dims.K < 1) {
    throw ShapeError("invalid network dimensions");
  }
  if (layers.size() != dims.L || trainable.size() != dims.L) {
    throw ShapeError("expected " + std::to_string(dims.L) + " layers, found " +
                     std::to_string(layers.size()));
  }
  for (std::size_t l = 0; l < dims.L; ++l) {
    const auto [r, c] = expected_shape(dims, l);
    if (layers[l].rows() != r || layers[l].cols() != c) {
      throw ShapeError("layer " + std::to_string(l + 1) + " is " +
                       shape_str(layers[l].rows(), layers[l].cols()) + ", expected " +
                       shape_str(r, c));
    }
  }
}

GradientSet GradientSet::zeros_like(const NetworkParams& params) {
  GradientSet g;
  g.layers.reserve(params.layers.size());
  for (const auto& w : params.layers) g.layers.emplace_back(w.rows(), w.cols(), 0.0);
  return g;
}

bool GradientSet::congruent_with(const NetworkParams& params) const {
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].same_shape(params.layers[l])) return false;
  }
  return true;
}

void GradientSet::scale(double factor) {
  for (auto& g : layers) {
    for (double& v : g.data()) v *= factor;
  }
}

NetworkParams init_params(NetworkDims dims, std::uint64_t seed, Mode mode) {
  if (dims.m < 1 || dims.L < 2 || dims.d < 1 || dims.K < 1) {
    throw ConfigError("init_params requires m >= 1, L >= 2, d >= 1, K >= 1");
  }
  NetworkParams p;
  p.dims = dims;
  p.mode = mode;
  p.seed = seed;
  Rng rng = make_rng(seed, kInitStream);
  const double m = static_cast<double>(dims.m);
  std::normal_distribution<double> hidden_dist(0.0, std::sqrt(2.0 / m));
  std::normal_distribution<double> head_dist(0.0, std::sqrt(1.0 / m));
  for (std::size_t l = 0; l < dims.L; ++l) {
    const auto [r, c] = expected_shape(dims, l);
    Matrix w(r, c);
    auto& dist = (l + 1 == dims.L) ? head_dist : hidden_dist;
    for (double& v : w.data()) v = dist(rng);
    p.layers.push_back(std::move(w));
    const bool edge = (l == 0 || l + 1 == dims.L);
    p.trainable.push_back(mode == Mode::kPractical || !edge);
  }
  return p;
}

ForwardTrace forward(const NetworkParams& params, std::span<const double> x) {
  const auto& dims = params.dims;
  if (x.size() != dims.d) {
    throw ShapeError("input has length " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(dims.d));
  }
  if (params.layers.size() != dims.L) throw ShapeError("network has wrong layer count");
  ForwardTrace t;
  t.hidden.resize(dims.L);
  t.preact.resize(dims.L);
  t.active.resize(dims.L);
  t.hidden[0].assign(x.begin(), x.end());
  for (std::size_t l = 1; l < dims.L; ++l) {
    const Matrix& w = params.layers[l - 1];
    if (w.cols() != t.hidden[l - 1].size()) throw ShapeError("layer shape mismatch");
    t.preact[l] = matvec(w, t.hidden[l - 1]);
    auto& h = t.hidden[l];
    auto& a = t.active[l];
    h.resize(t.preact[l].size());
    a.resize(t.preact[l].size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const bool on = t.preact[l][i] > 0.0;
      a[i] = on ? 1 : 0;
      h[i] = on ? t.preact[l][i] : 0.0;
    }
  }
  const Matrix& head = params.layers.back();
  if (head.cols() != t.hidden.back().size()) throw ShapeError("head shape mismatch");
  t.output = matvec(head, t.hidden.back());
  const double scale = std::sqrt(static_cast<double>(dims.m));
  for (double& o : t.output) o *= scale;
  return t;
}

double logistic_loss(double z) { return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double logistic_loss_derivative(double z) {
  // -1 / (1 + e^z), evaluated without overflow.
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(z));
}

double loss_binary(double output, int y) {
  check_sign(y);
  return logistic_loss(static_cast<double>(y) * output);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

double loss_multiclass(std::span<const double> logits, int label) {
  if (logits.size() < 2) throw InputError("multiclass loss requires K >= 2");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw InputError("class label " + std::to_string(label) + " out of range");
  }
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

double loss_multiclass(std::span<const double> logits, std::span<const double> soft_label) {
  if (logits.size() < 2) throw InputError("multiclass loss requires K >= 2");
  check_soft_label(soft_label, logits.size());
  const double lse = log_sum_exp(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (soft_label[i] != 0.0) total += soft_label[i] * (lse - logits[i]);
  }
  return total;
}

double loss(std::span<const double> output, const Target& target) {
  return std::visit(
      Overloaded{
          [&](const BinaryLabel& b) {
            if (output.size() != 1) throw InputError("binary loss requires K = 1");
            return loss_binary(output[0], b.sign);
          },
          [&](const ClassLabel& c) { return loss_multiclass(output, c.index); },
          [&](const SoftLabel& s) { return loss_multiclass(output, s.probs); },
      },
      target);
}

std::vector<double> output_gradient(std::span<const double> output, const Target& target) {
  return std::visit(
      Overloaded{
          [&](const BinaryLabel& b) {
            if (output.size() != 1) throw InputError("binary loss requires K = 1");
            check_sign(b.sign);
            const double y = static_cast<double>(b.sign);
            return std::vector<double>{y * logistic_loss_derivative(y * output[0])};
          },
          [&](const ClassLabel& c) {
            if (output.size() < 2) throw InputError("multiclass loss requires K >= 2");
            if (c.index < 0 || static_cast<std::size_t>(c.index) >= output.size()) {
              throw InputError("class label " + std::to_string(c.index) + " out of range");
            }
            auto g = softmax(output);
            g[static_cast<std::size_t>(c.index)] -= 1.0;
            return g;
          },
          [&](const SoftLabel& s) {
            if (output.size() < 2) throw InputError("multiclass loss requires K >= 2");
            check_soft_label(s.probs, output.size());
            auto g = softmax(output);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s.probs[i];
            return g;
          },
      },
      target);
}

std::vector<std::vector<double>> backprop_factors(const NetworkParams& params,
                                                  const ForwardTrace& trace,
                                                  std::span<const double> output_grad) {
  const auto& dims = params.dims;
  if (trace.hidden.size() != dims.L || trace.output.size() != params.head().rows() ||
      output_grad.size() != params.head().rows()) {
    throw ShapeError("trace does not match network");
  }
  for (std::size_t l = 0; l + 1 < dims.L; ++l) {
    if (trace.hidden[l].size() != params.layers[l].cols()) {
      throw ShapeError("stale trace for layer " + std::to_string(l + 1));
    }
  }
  std::vector<std::vector<double>> u(dims.L);
  const double scale = std::sqrt(static_cast<double>(dims.m));
  u[dims.L - 1].resize(output_grad.size());
  for (std::size_t k = 0; k < output_grad.size(); ++k) u[dims.L - 1][k] = scale * output_grad[k];
  for (std::size_t l = dims.L - 1; l-- > 0;) {
    // Layer index l (0-based) produced hidden[l + 1].
    auto back = matvec_transposed(params.layers[l + 1], u[l + 1]);
    const auto& act = trace.active[l + 1];
    for (std::size_t i = 0; i < back.size(); ++i) {
      if (!act[i]) back[i] = 0.0;
    }
    u[l] = std::move(back);
  }
  return u;
}

void accumulate_gradient(const NetworkParams& params, const ForwardTrace& trace,
                         std::span<const double> output_grad, GradientSet& acc, double weight) {
  if (!acc.congruent_with(params)) throw ShapeError("gradient set not congruent with network");
  const auto u = backprop_factors(params, trace, output_grad);
  for (std::size_t l = 0; l < params.dims.L; ++l) {
    if (!params.trainable[l]) continue;
    acc.layers[l].add_outer(weight, u[l], trace.hidden[l]);
  }
}

GradientSet backward(const NetworkParams& params, const ForwardTrace& trace, const Target& target,
                     double weight) {
  auto g = GradientSet::zeros_like(params);
  const auto og = output_gradient(trace.output, target);
  accumulate_gradient(params, trace, og, g, weight);
  return g;
}

void apply_update(NetworkParams& params, std::span<const GradientSet> grads, double eta) {
  for (const auto& g : grads) {
    if (!g.congruent_with(params)) throw ShapeError("gradient set not congruent with network");
  }
  for (const auto& g : grads) {
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      if (!params.trainable[l]) continue;
      for (double v : g.layers[l].data()) {
        if (!std::isfinite(v)) {
          throw NumericError("non-finite gradient entry in layer " + std::to_string(l + 1));
        }
      }
    }
  }
  if (grads.empty()) return;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!params.trainable[l]) continue;
    if (grads.size() == 1) {
      params.layers[l].axpy(-eta, grads[0].layers[l]);
      continue;
    }
    Matrix total(params.layers[l].rows(), params.layers[l].cols(), 0.0);
    for (const auto& g : grads) total.axpy(1.0, g.layers[l]);
    params.layers[l].axpy(-eta, total);
  }
}

void apply_update(NetworkParams& params, const GradientSet& grad, double eta) {
  apply_update(params, std::span<const GradientSet>(&grad, 1), eta);
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params) {
  params.check_consistent();
  detail::ByteWriter w;
  w.magic("CSSLCKPT");
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(params.dims.d);
  w.uint<std::uint64_t>(params.dims.m);
  w.uint<std::uint64_t>(params.dims.L);
  w.uint<std::uint64_t>(params.dims.K);
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(params.mode));
  w.uint<std::uint64_t>(params.seed);
  for (const auto& layer : params.layers) {
    for (double v : layer.data()) w.f64(v);
  }
  w.write_file(path);
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  r.expect_magic("CSSLCKPT");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  NetworkDims dims;
  dims.d = r.uint<std::uint64_t>();
  dims.m = r.uint<std::uint64_t>();
  dims.L = r.uint<std::uint64_t>();
  dims.K = r.uint<std::uint64_t>();
  const auto mode_byte = r.u8();
  if (mode_byte > 1) r.fail("bad mode byte");
  const auto seed = r.uint<std::uint64_t>();
  if (dims.L < 2 || dims.m < 1 || dims.d < 1 || dims.K < 1) r.fail("invalid dimensions");
  NetworkParams p;
  p.dims = dims;
  p.mode = static_cast<Mode>(mode_byte);
  p.seed = seed;
  for (std::size_t l = 0; l < dims.L; ++l) {
    const auto [rows, cols] = expected_shape(dims, l);
    r.need(rows * cols * 8);
    Matrix w(rows, cols);
    for (double& v : w.data()) v = r.f64();
    p.layers.push_back(std::move(w));
    const bool edge = (l == 0 || l + 1 == dims.L);
    p.trainable.push_back(p.mode == Mode::kPractical || !edge);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last matrix");
  return p;
}

}  // namespace cssl
