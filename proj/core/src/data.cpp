#include "cssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "cssl/errors.hpp"
#include "cssl/matrix.hpp"
#include "cssl/rng.hpp"

namespace cssl {
namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double n = 0.0;
  while (n < 1e-12) {
    for (double& x : v) x = normal(rng);
    n = norm2(v);
  }
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> noisy_unit(std::span<const double> mean, double noise, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(mean.begin(), mean.end());
  for (double& x : v) x += noise * normal(rng);
  const double n = norm2(v);
  if (n < 1e-12) return {};
  for (double& x : v) x /= n;
  return v;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (d < 1) throw ConfigError("synthetic d must be >= 1");
  if (classes < 1) throw ConfigError("synthetic classes must be >= 1");
  if (kind == SyntheticKind::kTwoClassMargin && classes != 2) {
    throw ConfigError("two_class_margin generates exactly 2 classes");
  }
  if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be >= 0");
  if (!(lambda_sep >= 0.0)) throw ConfigError("lambda_sep must be >= 0");
  if (kind == SyntheticKind::kTwoClassMargin && !(margin >= 0.0 && margin < 1.0)) {
    throw ConfigError("margin must lie in [0, 1)");
  }
  if (groups_per_class > per_class) throw ConfigError("groups_per_class exceeds per_class");
  if (!(mean_cos >= 0.0 && mean_cos < 1.0)) throw ConfigError("mean_cos must lie in [0, 1)");
  if (mean_cos > 0.0 && d < 2) throw ConfigError("mean_cos needs d >= 2");
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 0x5e7);
  std::vector<std::vector<double>> means;
  if (spec.kind == SyntheticKind::kTwoClassMargin) {
    auto u = random_unit(spec.d, rng);
    auto neg = u;
    for (double& x : neg) x = -x;
    means = {neg, u};
  } else if (spec.mean_cos == 0.0) {
    for (std::size_t c = 0; c < spec.classes; ++c) means.push_back(random_unit(spec.d, rng));
  } else {
    // mu_k = sqrt(rho) s + sqrt(1 - rho) r_k with r_k orthogonal to the shared direction s.
    const auto shared = random_unit(spec.d, rng);
    const double a = std::sqrt(spec.mean_cos);
    const double b = std::sqrt(1.0 - spec.mean_cos);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      auto r = random_unit(spec.d, rng);
      const double proj = dot(r, shared);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] -= proj * shared[i];
      const double rn = norm2(r);
      std::vector<double> mu(spec.d);
      for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = a * shared[i] + b * r[i] / rn;
      const double n = norm2(mu);
      for (double& v : mu) v /= n;
      means.push_back(std::move(mu));
    }
  }

  std::size_t attempts = 0;
  auto draw = [&](std::span<const double> centre, std::size_t cls) -> std::vector<double> {
    while (true) {
      if (++attempts > spec.max_attempts) {
        throw DataError("synthetic generation exceeded its retry budget of " + std::to_string(spec.max_attempts));
      }
      auto x = noisy_unit(centre, spec.noise, rng);
      if (x.empty()) continue;
      if (spec.kind == SyntheticKind::kTwoClassMargin) {
        const double side = dot(x, means[1]) * (cls == 1 ? 1.0 : -1.0);
        if (side < spec.margin) continue;
      }
      return x;
    }
  };

  SyntheticData out;
  std::int64_t next_group = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<std::vector<double>> centres{means[c]};
    if (spec.groups_per_class > 0) {
      centres.clear();
      for (std::size_t g = 0; g < spec.groups_per_class; ++g) {
        auto sub = noisy_unit(means[c], spec.noise * 0.5, rng);
        centres.push_back(sub.empty() ? means[c] : sub);
      }
    }
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t g = centres.size() == 1 ? 0 : (i * centres.size()) / spec.per_class;
      std::vector<double> x;
      while (true) {
        x = draw(centres[g], c);
        bool ok = true;
        if (spec.lambda_sep > 0.0) {
          for (const auto& e : out.train) {
            if (distance(e.features, x) < spec.lambda_sep) {
              ok = false;
              break;
            }
          }
        }
        if (ok) break;
      }
      auto e = Example::vector(std::move(x), static_cast<int>(c));
      if (spec.groups_per_class > 0) e.group_id = next_group + static_cast<std::int64_t>(g);
      out.train.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      const std::size_t g = centres.size() == 1 ? 0 : (i * centres.size()) / std::max<std::size_t>(1, spec.test_per_class);
      out.test.push_back(Example::vector(draw(centres[g], c), static_cast<int>(c)));
    }
    next_group += static_cast<std::int64_t>(spec.groups_per_class);
  }
  return out;
}

double min_pairwise_distance(const std::vector<Example>& examples) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    for (std::size_t j = i + 1; j < examples.size(); ++j) {
      best = std::min(best, distance(examples[i].features, examples[j].features));
    }
  }
  return best;
}

std::vector<Example> load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = detail::ByteReader::from_file(images);
  const auto img_magic = img.u32_be();
  if (img_magic != 0x00000803) img.fail("expected IDX image magic 0x00000803");
  const auto n = img.u32_be();
  const auto rows = img.u32_be();
  const auto cols = img.u32_be();
  if (rows == 0 || cols == 0) img.fail("zero image dimension");

  auto lab = detail::ByteReader::from_file(labels);
  const auto lab_magic = lab.u32_be();
  if (lab_magic != 0x00000801) lab.fail("expected IDX label magic 0x00000801");
  const auto nl = lab.u32_be();
  if (nl != n) lab.fail("label count " + std::to_string(nl) + " does not match image count " + std::to_string(n));

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  img.need(static_cast<std::size_t>(n) * pixels);
  lab.need(n);
  std::vector<Example> out;
  out.reserve(n);
  std::vector<std::uint8_t> buf(pixels);
  for (std::uint32_t i = 0; i < n; ++i) {
    Example e;
    e.kind = FeatureKind::kPixels;
    e.shape = {rows, cols, 1};
    img.bytes(buf.data(), pixels);
    e.features.assign(buf.begin(), buf.end());
    e.label = lab.u8();
    out.push_back(std::move(e));
  }
  if (img.remaining() != 0) img.fail("trailing bytes after last image");
  if (lab.remaining() != 0) lab.fail("trailing bytes after last label");
  return out;
}

std::vector<Example> load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  auto fail = [&](const std::string& msg) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::vector<double> values;
    values.reserve(cells.size());
    bool numeric = true;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(c, &used));
        if (c.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (out.empty() && width == 0 && lineno == 1) continue;  // header
      fail("non-numeric cell");
    }
    const std::size_t lead = options.has_group ? 2 : 1;
    if (values.size() <= lead) fail("row has no feature columns");
    if (width == 0) width = values.size();
    if (values.size() != width) fail("row has " + std::to_string(values.size()) + " cells, expected " + std::to_string(width));
    Example e;
    const double label = values[0];
    if (label != std::floor(label) || label < 0) fail("label must be a nonnegative integer");
    e.label = static_cast<int>(label);
    if (options.num_classes > 0 && static_cast<std::size_t>(e.label) >= options.num_classes) {
      fail("label " + std::to_string(e.label) + " out of range [0, " + std::to_string(options.num_classes) + ")");
    }
    if (options.has_group) e.group_id = static_cast<std::int64_t>(values[1]);
    e.features.assign(values.begin() + static_cast<std::ptrdiff_t>(lead), values.end());
    e.kind = options.kind;
    const bool default_shape = options.shape == ImageShape{};
    e.shape = default_shape ? ImageShape{1, e.features.size(), 1} : options.shape;
    if (e.shape.count() != e.features.size()) fail("feature count does not match the configured image shape");
    if (e.kind == FeatureKind::kPixels) {
      try {
        check_pixel_range(e);
      } catch (const InputError& err) {
        fail(err.what());
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

void normalize_unit(std::vector<Example>& examples) {
  for (auto& e : examples) {
    const double n = norm2(e.features);
    if (n == 0.0) throw DataError("cannot unit-normalise an all-zero example");
    for (double& v : e.features) v /= n;
    e.kind = FeatureKind::kReal;
  }
}

}  // namespace cssl
