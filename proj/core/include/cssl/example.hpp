#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace cssl {

// Interleaved H x W x C layout; plain feature vectors use {1, d, 1}.
struct ImageShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t count() const noexcept { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// kReal: arbitrary real features (theory-mode unit vectors, synthetic blobs).
// kPixels: integer intensities in [0, 255].
enum class FeatureKind : std::uint8_t { kReal = 0, kPixels = 1 };

struct Example {
  std::vector<double> features;
  ImageShape shape;
  FeatureKind kind = FeatureKind::kReal;
  int label = 0;
  int task_id = 0;
  std::optional<std::int64_t> group_id;

  static Example vector(std::vector<double> features, int label, int task_id = 0) {
    Example e;
    e.shape = {1, features.size(), 1};
    e.features = std::move(features);
    e.label = label;
    e.task_id = task_id;
    return e;
  }

  friend bool operator==(const Example&, const Example&) = default;
};

// Throws InputError unless ||features||_2 = 1 within tol.
void check_unit_norm(const Example& e, double tol = 1e-9);
// Throws InputError unless every feature is an integer in [0, 255].
void check_pixel_range(const Example& e);

}  // namespace cssl
