#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cssl/example.hpp"

namespace cssl {

enum class SyntheticKind {
  // Gaussian blobs around random unit class means, projected back onto the sphere.
  kSphereBlobs,
  // Two classes with antipodal means +-u and a hard margin on <u, x>.
  kTwoClassMargin,
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kSphereBlobs;
  std::size_t d = 16;
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t test_per_class = 100;
  double lambda_sep = 0.0;      // minimum pairwise distance inside the training stream
  double noise = 0.2;           // per-coordinate std of the Gaussian added to the mean
  double margin = 0.1;          // two_class_margin only
  double mean_cos = 0.0;        // sphere_blobs: target cosine between class means (0: independent means)
  std::size_t groups_per_class = 0;  // > 0 assigns instance ids (each group has its own sub-mean)
  std::uint64_t seed = 0;
  std::size_t max_attempts = 200000;

  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SyntheticData {
  std::vector<Example> train;
  std::vector<Example> test;
};

// Unit-norm examples (to 1e-12) emitted class by class, group by group.
// Throws DataError if rejection sampling exhausts max_attempts.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

// Smallest pairwise Euclidean distance (exact O(n^2) scan); +inf for n < 2.
double min_pairwise_distance(const std::vector<Example>& examples);

// IDX image file (magic 0x00000803, u8 pixels, big-endian dims) plus IDX label
// file (magic 0x00000801). Examples come back in file order as pixel images.
std::vector<Example> load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

struct CsvOptions {
  std::size_t num_classes = 0;  // 0 disables the label range check
  bool has_group = false;       // second column holds a group id
  FeatureKind kind = FeatureKind::kReal;
  ImageShape shape{};           // all-ones means {1, d, 1}
};

// Rows: label[,group],f1,...,fd. A non-numeric first row is treated as a header.
std::vector<Example> load_csv(const std::filesystem::path& path, const CsvOptions& options);

void normalize_unit(std::vector<Example>& examples);

}  // namespace cssl
