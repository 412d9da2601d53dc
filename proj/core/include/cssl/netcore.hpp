#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "cssl/matrix.hpp"

namespace cssl {

// Theory mode: scalar output, logistic loss, first and last layers frozen.
// Practical mode: K-way softmax output, every layer trainable.
enum class Mode : std::uint8_t { kTheory = 0, kPractical = 1 };

struct NetworkDims {
  std::size_t d = 1;  // input dimension
  std::size_t m = 1;  // hidden width
  std::size_t L = 2;  // number of weight matrices
  std::size_t K = 1;  // output dimension

  friend bool operator==(const NetworkDims&, const NetworkDims&) = default;
};

// Bias-free fully connected ReLU network
//   f(x) = sqrt(m) * W_L relu(W_{L-1} ... relu(W_1 x)).
// layers[0] is W_1 (m x d), layers[L-1] is W_L (K x m).
struct NetworkParams {
  NetworkDims dims;
  Mode mode = Mode::kPractical;
  std::uint64_t seed = 0;
  std::vector<Matrix> layers;
  std::vector<bool> trainable;

  Matrix& head() { return layers.back(); }
  const Matrix& head() const { return layers.back(); }

  // Throws ShapeError if any matrix disagrees with dims.
  void check_consistent() const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct ForwardTrace {
  // hidden[0] is the input; hidden[l] = relu(preact[l]) for l = 1..L-1.
  std::vector<std::vector<double>> hidden;
  // preact[0] is unused (empty).
  std::vector<std::vector<double>> preact;
  // active[l][i] == 1 iff preact[l][i] > 0.
  std::vector<std::vector<unsigned char>> active;
  std::vector<double> output;
};

// One matrix per layer of the matching NetworkParams; frozen layers stay zero.
struct GradientSet {
  std::vector<Matrix> layers;

  static GradientSet zeros_like(const NetworkParams& params);
  bool congruent_with(const NetworkParams& params) const;
  void scale(double factor);
};

// Supervision targets. The alternative selects the loss:
// BinaryLabel -> logistic loss on y * f, ClassLabel / SoftLabel -> softmax cross-entropy.
struct BinaryLabel {
  int sign = 1;  // -1 or +1
};
struct ClassLabel {
  int index = 0;
};
struct SoftLabel {
  std::vector<double> probs;
};
using Target = std::variant<BinaryLabel, ClassLabel, SoftLabel>;

NetworkParams init_params(NetworkDims dims, std::uint64_t seed, Mode mode = Mode::kTheory);

ForwardTrace forward(const NetworkParams& params, std::span<const double> x);

// l(z) = log(1 + exp(-z)), evaluated as max(-z, 0) + log1p(exp(-|z|)).
double logistic_loss(double z);
// dl/dz
double logistic_loss_derivative(double z);

double loss_binary(double output, int y);
double loss_multiclass(std::span<const double> logits, int label);
double loss_multiclass(std::span<const double> logits, std::span<const double> soft_label);
double loss(std::span<const double> output, const Target& target);

std::vector<double> softmax(std::span<const double> logits);

// Gradient of the loss with respect to the network output.
std::vector<double> output_gradient(std::span<const double> output, const Target& target);

// Per-layer left factors u_l such that dLoss/dW_l = u_l h_{l-1}^T, given the
// gradient with respect to the output. Entry l-1 corresponds to layer l.
std::vector<std::vector<double>> backprop_factors(const NetworkParams& params,
                                                  const ForwardTrace& trace,
                                                  std::span<const double> output_grad);

GradientSet backward(const NetworkParams& params, const ForwardTrace& trace,
                     const Target& target, double weight = 1.0);

// acc += weight * dLoss/dW. Frozen layers are left untouched.
void accumulate_gradient(const NetworkParams& params, const ForwardTrace& trace,
                         std::span<const double> output_grad, GradientSet& acc,
                         double weight = 1.0);

// W <- W - eta * sum(grads) on trainable layers. Throws NumericError, leaving
// params untouched, if any gradient entry is non-finite.
void apply_update(NetworkParams& params, std::span<const GradientSet> grads, double eta);
void apply_update(NetworkParams& params, const GradientSet& grad, double eta);

// Binary checkpoint: magic "CSSLCKPT", u32 version, u64 d m L K, u8 mode,
// u64 seed, then every matrix row-major as little-endian IEEE-754 doubles.
void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params);
NetworkParams load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace cssl
