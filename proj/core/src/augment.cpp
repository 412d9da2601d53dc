#include "cssl/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cssl/errors.hpp"
#include "cssl/matrix.hpp"

namespace cssl {
namespace {

constexpr std::array<std::pair<ImageOp, std::string_view>, 9> kOpNames{{
    {ImageOp::kRotate, "rotate"},
    {ImageOp::kTranslateX, "translate_x"},
    {ImageOp::kTranslateY, "translate_y"},
    {ImageOp::kShearX, "shear_x"},
    {ImageOp::kShearY, "shear_y"},
    {ImageOp::kBrightness, "brightness"},
    {ImageOp::kContrast, "contrast"},
    {ImageOp::kInvert, "invert"},
    {ImageOp::kCutout, "cutout"},
}};

void check_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("images to be mixed differ in size");
}

double random_sign(Rng& rng) { return bernoulli(rng, 0.5) ? 1.0 : -1.0; }

void clip_pixels(std::vector<double>& img, FeatureKind kind) {
  if (kind != FeatureKind::kPixels) return;
  for (double& v : img) v = std::clamp(v, 0.0, 255.0);
}

// Inverse-mapped affine warp: out(y, x) samples the input at
// (a00*y + a01*x + b0, a10*y + a11*x + b1) bilinearly, zero outside.
std::vector<double> warp_affine(std::span<const double> img, const ImageShape& s, double a00,
                                double a01, double b0, double a10, double a11, double b1) {
  const std::size_t c = s.channels;
  std::vector<double> out(img.size(), 0.0);
  auto at = [&](long yy, long xx, std::size_t ch) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.height) || xx >= static_cast<long>(s.width)) return 0.0;
    return img[(static_cast<std::size_t>(yy) * s.width + static_cast<std::size_t>(xx)) * c + ch];
  };
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const double yd = static_cast<double>(y);
      const double xd = static_cast<double>(x);
      const double sy = a00 * yd + a01 * xd + b0;
      const double sx = a10 * yd + a11 * xd + b1;
      const double fy = std::floor(sy);
      const double fx = std::floor(sx);
      const double wy = sy - fy;
      const double wx = sx - fx;
      const long y0 = static_cast<long>(fy);
      const long x0 = static_cast<long>(fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = (1.0 - wy) * (1.0 - wx) * at(y0, x0, ch);
        if (wx != 0.0) v += (1.0 - wy) * wx * at(y0, x0 + 1, ch);
        if (wy != 0.0) v += wy * (1.0 - wx) * at(y0 + 1, x0, ch);
        if (wy != 0.0 && wx != 0.0) v += wy * wx * at(y0 + 1, x0 + 1, ch);
        out[(y * s.width + x) * c + ch] = v;
      }
    }
  }
  return out;
}

}  // namespace

namespace {

std::vector<double> blend_labels(int y1, int y2, double lambda, std::size_t num_classes) {
  auto label = one_hot(y1, num_classes);
  const auto second = one_hot(y2, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) label[k] = lambda * label[k] + (1.0 - lambda) * second[k];
  return label;
}

}  // namespace

std::string_view to_string(ImageOp op) {
  for (const auto& [o, name] : kOpNames) {
    if (o == op) return name;
  }
  return "?";
}

ImageOp image_op_from_string(std::string_view name) {
  for (const auto& [o, n] : kOpNames) {
    if (n == name) return o;
  }
  throw ConfigError("unknown augmentation op '" + std::string(name) + "'");
}

OpList parse_oplist(std::string_view text, std::string_view source) {
  OpList out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(std::string(source) + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SubPolicy sub;
    std::istringstream parts(line);
    std::string chunk;
    while (std::getline(parts, chunk, ';')) {
      std::istringstream fields(chunk);
      std::string name;
      PolicyOp op;
      if (!(fields >> name >> op.probability >> op.magnitude)) fail("expected `op probability magnitude`");
      std::string extra;
      if (fields >> extra) fail("unexpected token '" + extra + "'");
      try {
        op.op = image_op_from_string(name);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
      if (!(op.probability >= 0.0 && op.probability <= 1.0)) fail("probability must be in [0, 1]");
      if (!(op.magnitude >= 0.0 && op.magnitude <= 1.0)) fail("magnitude must be in [0, 1]");
      sub.ops.push_back(op);
    }
    if (sub.ops.empty()) fail("empty sub-policy");
    out.push_back(std::move(sub));
  }
  return out;
}

OpList load_oplist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_oplist(ss.str(), path.string());
}

std::string format_oplist(const OpList& oplist) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& sub : oplist) {
    for (std::size_t i = 0; i < sub.ops.size(); ++i) {
      if (i) out << " ; ";
      out << to_string(sub.ops[i].op) << ' ' << sub.ops[i].probability << ' ' << sub.ops[i].magnitude;
    }
    out << '\n';
  }
  return out.str();
}

void AugPolicy::validate() const {
  if (crop.pad < 0) throw ConfigError("crop pad must be >= 0");
  if (!(hflip.p >= 0.0 && hflip.p <= 1.0)) throw ConfigError("flip probability must be in [0, 1]");
  if (!(mix.alpha_mixup > 0.0) || !(mix.alpha_cutmix > 0.0)) throw ConfigError("mix alphas must be > 0");
  if (!(mix.p_mixup >= 0.0 && mix.p_mixup <= 1.0)) throw ConfigError("mixup probability must be in [0, 1]");
  if (!(theory_perturb.budget >= 0.0)) throw ConfigError("perturbation budget must be >= 0");
  for (const auto& sub : oplist) {
    for (const auto& op : sub.ops) {
      if (!(op.probability >= 0.0 && op.probability <= 1.0) || !(op.magnitude >= 0.0 && op.magnitude <= 1.0)) {
        throw ConfigError("policy op probability and magnitude must lie in [0, 1]");
      }
    }
  }
}

void PerturbationTracker::observe(std::span<const double> xi) {
  sup_sq_norm = std::max(sup_sq_norm, squared_norm(xi));
  ++draws;
}

std::vector<double> one_hot(int label, std::size_t num_classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
    throw InputError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  std::vector<double> v(num_classes, 0.0);
  v[static_cast<std::size_t>(label)] = 1.0;
  return v;
}

double sample_beta(double alpha, double beta, Rng& rng) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("beta parameters must be positive");
  const double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
  const double y = std::gamma_distribution<double>(beta, 1.0)(rng);
  if (x + y == 0.0) return bernoulli(rng, 0.5) ? 1.0 : 0.0;
  return x / (x + y);
}

MixResult mixup(std::span<const double> x1, int y1, std::span<const double> x2, int y2, double lambda,
                std::size_t num_classes) {
  check_same_size(x1, x2);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("mixup lambda must lie in [0, 1]");
  MixResult r;
  r.lambda = lambda;
  r.features.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) r.features[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
  r.label = blend_labels(y1, y2, lambda, num_classes);
  return r;
}

MixResult cutmix(std::span<const double> x1, int y1, std::span<const double> x2, int y2,
                 const ImageShape& shape, double lambda, std::size_t num_classes, Rng& rng) {
  check_same_size(x1, x2);
  if (x1.size() != shape.count()) throw InputError("cutmix image does not match its shape");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("cutmix lambda must lie in [0, 1]");
  const double cut = std::sqrt(1.0 - lambda);
  const auto cut_h = static_cast<long>(static_cast<double>(shape.height) * cut);
  const auto cut_w = static_cast<long>(static_cast<double>(shape.width) * cut);
  const auto cy = static_cast<long>(uniform_index(rng, shape.height));
  const auto cx = static_cast<long>(uniform_index(rng, shape.width));
  const auto h = static_cast<long>(shape.height);
  const auto w = static_cast<long>(shape.width);
  const long ya = std::clamp(cy - cut_h / 2, 0L, h);
  const long yb = std::clamp(cy + cut_h / 2, 0L, h);
  const long xa = std::clamp(cx - cut_w / 2, 0L, w);
  const long xb = std::clamp(cx + cut_w / 2, 0L, w);

  one_hot(y1, num_classes);
  one_hot(y2, num_classes);
  MixResult r;
  r.features.assign(x1.begin(), x1.end());
  const std::size_t c = shape.channels;
  for (long y = ya; y < yb; ++y) {
    for (long x = xa; x < xb; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (static_cast<std::size_t>(y) * shape.width + static_cast<std::size_t>(x)) * c + ch;
        r.features[i] = x2[i];
      }
    }
  }
  const double area = static_cast<double>((yb - ya) * (xb - xa));
  r.lambda = 1.0 - area / static_cast<double>(shape.height * shape.width);
  r.label = blend_labels(y1, y2, r.lambda, num_classes);
  return r;
}

std::vector<double> hflip(std::span<const double> image, const ImageShape& s) {
  std::vector<double> out(image.size());
  const std::size_t c = s.channels;
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const std::size_t src = (y * s.width + (s.width - 1 - x)) * c;
      const std::size_t dst = (y * s.width + x) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out[dst + ch] = image[src + ch];
    }
  }
  return out;
}

CropFlipResult crop_flip(std::span<const double> image, const ImageShape& s, int pad, double p_flip,
                         Rng& rng) {
  if (image.size() != s.count()) throw InputError("image does not match its shape");
  if (pad < 0) throw ConfigError("crop pad must be >= 0");
  CropFlipResult r;
  const auto p = static_cast<std::size_t>(pad);
  if (p > 0) {
    r.offset_y = uniform_index(rng, 2 * p + 1);
    r.offset_x = uniform_index(rng, 2 * p + 1);
    r.image.assign(image.size(), 0.0);
    const std::size_t c = s.channels;
    for (std::size_t y = 0; y < s.height; ++y) {
      // Source row in the unpadded image: y + offset_y - pad.
      const long sy = static_cast<long>(y + r.offset_y) - pad;
      if (sy < 0 || sy >= static_cast<long>(s.height)) continue;
      for (std::size_t x = 0; x < s.width; ++x) {
        const long sx = static_cast<long>(x + r.offset_x) - pad;
        if (sx < 0 || sx >= static_cast<long>(s.width)) continue;
        const std::size_t src = (static_cast<std::size_t>(sy) * s.width + static_cast<std::size_t>(sx)) * c;
        const std::size_t dst = (y * s.width + x) * c;
        for (std::size_t ch = 0; ch < c; ++ch) r.image[dst + ch] = image[src + ch];
      }
    }
  } else {
    r.offset_y = r.offset_x = 0;
    r.image.assign(image.begin(), image.end());
  }
  if (bernoulli(rng, p_flip)) {
    r.flipped = true;
    r.image = hflip(r.image, s);
  }
  return r;
}

std::vector<double> apply_image_op(std::span<const double> image, const ImageShape& s, ImageOp op,
                                   double magnitude, FeatureKind kind, Rng& rng) {
  if (image.size() != s.count()) throw InputError("image does not match its shape");
  std::vector<double> out;
  const double cy = (static_cast<double>(s.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(s.width) - 1.0) / 2.0;
  switch (op) {
    case ImageOp::kRotate: {
      const double theta = random_sign(rng) * magnitude * 30.0 * std::numbers::pi / 180.0;
      const double co = std::cos(theta);
      const double si = std::sin(theta);
      // Inverse rotation about the centre.
      out = warp_affine(image, s, co, -si, cy - co * cy + si * cx, si, co, cx - si * cy - co * cx);
      break;
    }
    case ImageOp::kTranslateX: {
      const double shift = random_sign(rng) * magnitude * 0.3 * static_cast<double>(s.width);
      out = warp_affine(image, s, 1.0, 0.0, 0.0, 0.0, 1.0, -shift);
      break;
    }
    case ImageOp::kTranslateY: {
      const double shift = random_sign(rng) * magnitude * 0.3 * static_cast<double>(s.height);
      out = warp_affine(image, s, 1.0, 0.0, -shift, 0.0, 1.0, 0.0);
      break;
    }
    case ImageOp::kShearX: {
      const double k = random_sign(rng) * magnitude * 0.3;
      out = warp_affine(image, s, 1.0, 0.0, 0.0, k, 1.0, -k * cy);
      break;
    }
    case ImageOp::kShearY: {
      const double k = random_sign(rng) * magnitude * 0.3;
      out = warp_affine(image, s, 1.0, k, -k * cx, 0.0, 1.0, 0.0);
      break;
    }
    case ImageOp::kBrightness: {
      const double f = 1.0 + random_sign(rng) * 0.9 * magnitude;
      out.assign(image.begin(), image.end());
      for (double& v : out) v *= f;
      break;
    }
    case ImageOp::kContrast: {
      const double f = 1.0 + random_sign(rng) * 0.9 * magnitude;
      double mean = 0.0;
      for (double v : image) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(1, image.size()));
      out.assign(image.begin(), image.end());
      for (double& v : out) v = mean + f * (v - mean);
      break;
    }
    case ImageOp::kInvert: {
      out.assign(image.begin(), image.end());
      const double top = kind == FeatureKind::kPixels ? 255.0 : 0.0;
      for (double& v : out) v = top - v;
      break;
    }
    case ImageOp::kCutout: {
      out.assign(image.begin(), image.end());
      const auto side = static_cast<long>(
          std::lround(magnitude * 0.5 * static_cast<double>(std::min(s.height, s.width))));
      if (side <= 0) break;
      const auto y0 = static_cast<long>(uniform_index(rng, s.height)) - side / 2;
      const auto x0 = static_cast<long>(uniform_index(rng, s.width)) - side / 2;
      for (long y = std::max(0L, y0); y < std::min<long>(static_cast<long>(s.height), y0 + side); ++y) {
        for (long x = std::max(0L, x0); x < std::min<long>(static_cast<long>(s.width), x0 + side); ++x) {
          for (std::size_t ch = 0; ch < s.channels; ++ch) {
            out[(static_cast<std::size_t>(y) * s.width + static_cast<std::size_t>(x)) * s.channels + ch] = 0.0;
          }
        }
      }
      break;
    }
  }
  clip_pixels(out, kind);
  return out;
}

std::vector<double> apply_oplist(std::span<const double> image, const ImageShape& shape, const OpList& oplist,
                                 FeatureKind kind, Rng& rng) {
  std::vector<double> out(image.begin(), image.end());
  if (oplist.empty()) return out;
  const auto& sub = oplist[uniform_index(rng, oplist.size())];
  for (const auto& op : sub.ops) {
    if (bernoulli(rng, op.probability)) out = apply_image_op(out, shape, op.op, op.magnitude, kind, rng);
  }
  return out;
}

std::vector<double> perturb_theory(std::span<const double> x, const AugPolicy::Perturb& settings, Rng& rng,
                                   PerturbationTracker& tracker) {
  if (!(settings.budget >= 0.0)) throw ConfigError("perturbation budget must be >= 0");
  std::vector<double> xi(x.size(), 0.0);
  if (settings.budget > 0.0 && !x.empty()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : xi) v = normal(rng);
    const double radius = std::sqrt(settings.budget);
    if (settings.generator == PerturbGenerator::kSphere) {
      const double n = norm2(xi);
      for (double& v : xi) v *= radius / n;
    } else {
      const double sigma = std::sqrt(settings.budget / static_cast<double>(x.size()));
      for (double& v : xi) v *= sigma;
      const double n = norm2(xi);
      if (n > radius) {
        for (double& v : xi) v *= radius / n;
      }
    }
  }
  tracker.observe(xi);
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += xi[i];
  return out;
}

SoftLabeledBatch augment_pipeline(std::span<const Example> batch, const AugPolicy& policy, std::size_t num_classes,
                                  Mode mode, Rng& rng, PerturbationTracker& tracker) {
  if (batch.empty()) throw InputError("augmentation batch is empty");
  for (const auto& e : batch) {
    if (e.task_id != batch.front().task_id) throw InputError("augmentation batch mixes tasks");
  }
  SoftLabeledBatch out;
  out.inputs.reserve(batch.size());
  out.labels.reserve(batch.size());
  for (const auto& e : batch) out.task_ids.push_back(e.task_id);

  if (mode == Mode::kTheory) {
    for (const auto& e : batch) {
      if (policy.theory_perturb.enabled) {
        out.inputs.push_back(perturb_theory(e.features, policy.theory_perturb, rng, tracker));
      } else {
        out.inputs.push_back(e.features);
      }
      out.labels.push_back(one_hot(e.label, num_classes));
    }
    return out;
  }

  const bool crop_or_flip = policy.crop.enabled || policy.hflip.enabled;
  for (const auto& e : batch) {
    std::vector<double> x = e.features;
    if (crop_or_flip) {
      x = crop_flip(x, e.shape, policy.crop.enabled ? policy.crop.pad : 0,
                    policy.hflip.enabled ? policy.hflip.p : 0.0, rng)
              .image;
    }
    if (!policy.oplist.empty()) x = apply_oplist(x, e.shape, policy.oplist, e.kind, rng);
    out.inputs.push_back(std::move(x));
    out.labels.push_back(one_hot(e.label, num_classes));
  }
  if (!policy.mix.enabled) return out;

  const auto stage = out.inputs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t j = uniform_index(rng, batch.size());
    MixResult r;
    if (bernoulli(rng, policy.mix.p_mixup)) {
      const double lam = sample_beta(policy.mix.alpha_mixup, policy.mix.alpha_mixup, rng);
      r = mixup(stage[i], batch[i].label, stage[j], batch[j].label, lam, num_classes);
    } else {
      const double lam = sample_beta(policy.mix.alpha_cutmix, policy.mix.alpha_cutmix, rng);
      r = cutmix(stage[i], batch[i].label, stage[j], batch[j].label, batch[i].shape, lam, num_classes, rng);
    }
    clip_pixels(r.features, batch[i].kind);
    out.inputs[i] = std::move(r.features);
    out.labels[i] = std::move(r.label);
  }
  return out;
}

}  // namespace cssl
