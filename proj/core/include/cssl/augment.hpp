#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cssl/example.hpp"
#include "cssl/netcore.hpp"
#include "cssl/rng.hpp"

namespace cssl {

// Image operations understood by policy files. Magnitudes in [0, 1] map linearly:
//   rotate       +-30 degrees           translate_x/y  +-0.3 * side
//   shear_x/y    +-0.3 shear factor     brightness     factor 1 +- 0.9
//   contrast     factor 1 +- 0.9        invert         magnitude ignored
//   cutout       square of side magnitude * 0.5 * min(H, W), zero filled
// The sign of signed ops is drawn uniformly.
enum class ImageOp {
  kRotate,
  kTranslateX,
  kTranslateY,
  kShearX,
  kShearY,
  kBrightness,
  kContrast,
  kInvert,
  kCutout,
};

std::string_view to_string(ImageOp op);
ImageOp image_op_from_string(std::string_view name);  // throws ConfigError

struct PolicyOp {
  ImageOp op = ImageOp::kInvert;
  double probability = 0.0;
  double magnitude = 0.0;

  friend bool operator==(const PolicyOp&, const PolicyOp&) = default;
};

struct SubPolicy {
  std::vector<PolicyOp> ops;

  friend bool operator==(const SubPolicy&, const SubPolicy&) = default;
};

using OpList = std::vector<SubPolicy>;

// One sub-policy per line: `op p m ; op p m`. '#' starts a comment.
OpList parse_oplist(std::string_view text, std::string_view source = "<policy>");
OpList load_oplist(const std::filesystem::path& path);
std::string format_oplist(const OpList& oplist);

enum class PerturbGenerator { kSphere, kGaussianClip };

struct AugPolicy {
  struct Crop {
    bool enabled = false;
    int pad = 4;
    friend bool operator==(const Crop&, const Crop&) = default;
  } crop;
  struct Flip {
    bool enabled = false;
    double p = 0.5;
    friend bool operator==(const Flip&, const Flip&) = default;
  } hflip;
  struct Mix {
    bool enabled = false;
    double alpha_mixup = 0.1;
    double alpha_cutmix = 0.8;
    double p_mixup = 0.5;
    friend bool operator==(const Mix&, const Mix&) = default;
  } mix;
  OpList oplist;
  struct Perturb {
    bool enabled = false;
    double budget = 0.0;  // ||xi||^2 target
    PerturbGenerator generator = PerturbGenerator::kSphere;
    friend bool operator==(const Perturb&, const Perturb&) = default;
  } theory_perturb;

  void validate() const;
  friend bool operator==(const AugPolicy&, const AugPolicy&) = default;
};

// Running supremum of ||xi||_2^2 over every emitted perturbation.
struct PerturbationTracker {
  double sup_sq_norm = 0.0;
  std::size_t draws = 0;

  void observe(std::span<const double> xi);
};

struct MixResult {
  std::vector<double> features;
  std::vector<double> label;
  double lambda = 1.0;  // weight on the first example's label
};

struct SoftLabeledBatch {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> labels;
  std::vector<int> task_ids;
};

std::vector<double> one_hot(int label, std::size_t num_classes);

double sample_beta(double alpha, double beta, Rng& rng);

MixResult mixup(std::span<const double> x1, int y1, std::span<const double> x2, int y2,
                double lambda, std::size_t num_classes);

// Pastes a box of relative area ~(1 - lambda) from x2 into x1. The returned
// lambda is corrected to the realised box area.
MixResult cutmix(std::span<const double> x1, int y1, std::span<const double> x2, int y2,
                 const ImageShape& shape, double lambda, std::size_t num_classes, Rng& rng);

struct CropFlipResult {
  std::vector<double> image;
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  bool flipped = false;
};

// Zero-pad by `pad`, take a random window of the original size, then flip
// horizontally with probability p_flip.
CropFlipResult crop_flip(std::span<const double> image, const ImageShape& shape, int pad,
                         double p_flip, Rng& rng);

std::vector<double> hflip(std::span<const double> image, const ImageShape& shape);

std::vector<double> apply_image_op(std::span<const double> image, const ImageShape& shape,
                                   ImageOp op, double magnitude, FeatureKind kind, Rng& rng);

// Picks one sub-policy uniformly and applies each of its ops with its probability.
std::vector<double> apply_oplist(std::span<const double> image, const ImageShape& shape,
                                 const OpList& oplist, FeatureKind kind, Rng& rng);

// Returns x + xi and records xi in the tracker. The result is not renormalised.
std::vector<double> perturb_theory(std::span<const double> x, const AugPolicy::Perturb& settings,
                                   Rng& rng, PerturbationTracker& tracker);

// crop/flip -> oplist -> (mixup xor cutmix with a partner from the batch);
// theory mode replaces all of that with perturb_theory.
SoftLabeledBatch augment_pipeline(std::span<const Example> batch, const AugPolicy& policy,
                                  std::size_t num_classes, Mode mode, Rng& rng,
                                  PerturbationTracker& tracker);

}  // namespace cssl
