#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "cssl/example.hpp"

namespace cssl {

// Data-independent compression applied before an example enters the buffer.
// bits == 8 disables quantization, area_ratio == 1 disables resizing.
struct Codec {
  int bits = 8;
  double area_ratio = 1.0;

  bool is_identity() const noexcept { return bits == 8 && area_ratio == 1.0; }
  void validate() const;

  friend bool operator==(const Codec&, const Codec&) = default;
};

struct StoredExample {
  // Real features are kept verbatim; pixel payloads are bit-packed quantization levels.
  std::variant<std::vector<double>, std::vector<std::uint8_t>> payload;
  Codec codec;
  ImageShape original_shape;
  ImageShape stored_shape;
  FeatureKind kind = FeatureKind::kReal;
  int label = 0;
  int task_id = 0;
  std::optional<std::int64_t> group_id;

  std::size_t payload_bytes() const;

  friend bool operator==(const StoredExample&, const StoredExample&) = default;
};

// level = floor(p / 2^(8-b)); reconstruction = level * 2^(8-b).
std::uint8_t quantize_level(std::uint8_t pixel, int bits);
std::uint8_t dequantize_level(std::uint8_t level, int bits);
std::vector<std::uint8_t> quantize(std::span<const std::uint8_t> pixels, int bits);
std::vector<std::uint8_t> dequantize(std::span<const std::uint8_t> levels, int bits);

// Packs values of `bits` significant bits each, MSB first, into ceil(n*bits/8) bytes.
std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> values, int bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, int bits, std::size_t count);

// Side lengths after resizing to `area_ratio` of the original area: round(side * sqrt(r)), min 1.
ImageShape resized_shape(const ImageShape& shape, double area_ratio);

// Bilinear resampling with the half-pixel-centre (align_corners = false) convention.
std::vector<double> resize_bilinear(std::span<const double> image, const ImageShape& from,
                                    const ImageShape& to);

std::size_t encoded_payload_bytes(const ImageShape& shape, FeatureKind kind, const Codec& codec);

StoredExample encode(const Example& example, const Codec& codec);
Example decode(const StoredExample& stored);

}  // namespace cssl
