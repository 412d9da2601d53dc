#include "cssl/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cssl/errors.hpp"

namespace cssl {
namespace {

std::vector<std::uint8_t> to_bytes(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(values[i]), 0L, 255L));
  }
  return out;
}

}  // namespace

void check_unit_norm(const Example& e, double tol) {
  double s = 0.0;
  for (double v : e.features) s += v * v;
  if (std::abs(std::sqrt(s) - 1.0) > tol) {
    throw InputError("example is not unit norm (norm = " + std::to_string(std::sqrt(s)) + ")");
  }
}

void check_pixel_range(const Example& e) {
  for (double v : e.features) {
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
      throw InputError("pixel value " + std::to_string(v) + " outside the integer range [0, 255]");
    }
  }
}

void Codec::validate() const {
  if (bits < 1 || bits > 8) throw ConfigError("quantization bits must be in 1..8, got " + std::to_string(bits));
  if (!(area_ratio > 0.0) || area_ratio > 1.0) {
    throw ConfigError("resize area ratio must be in (0, 1], got " + std::to_string(area_ratio));
  }
}

std::size_t StoredExample::payload_bytes() const {
  return std::visit(
      [](const auto& v) { return v.size() * sizeof(typename std::decay_t<decltype(v)>::value_type); },
      payload);
}

std::uint8_t quantize_level(std::uint8_t pixel, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("quantization bits must be in 1..8");
  return static_cast<std::uint8_t>(pixel >> (8 - bits));
}

std::uint8_t dequantize_level(std::uint8_t level, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("quantization bits must be in 1..8");
  return static_cast<std::uint8_t>(level << (8 - bits));
}

std::vector<std::uint8_t> quantize(std::span<const std::uint8_t> pixels, int bits) {
  std::vector<std::uint8_t> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = quantize_level(pixels[i], bits);
  return out;
}

std::vector<std::uint8_t> dequantize(std::span<const std::uint8_t> levels, int bits) {
  std::vector<std::uint8_t> out(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) out[i] = dequantize_level(levels[i], bits);
  return out;
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> values, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("pack width must be in 1..8");
  if (bits == 8) return {values.begin(), values.end()};
  const std::size_t total_bits = values.size() * static_cast<std::size_t>(bits);
  std::vector<std::uint8_t> out((total_bits + 7) / 8, 0);
  std::size_t bitpos = 0;
  for (std::uint8_t v : values) {
    for (int b = bits - 1; b >= 0; --b, ++bitpos) {
      if ((v >> b) & 1U) out[bitpos / 8] |= static_cast<std::uint8_t>(0x80U >> (bitpos % 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, int bits, std::size_t count) {
  if (bits < 1 || bits > 8) throw ConfigError("pack width must be in 1..8");
  const std::size_t need = (count * static_cast<std::size_t>(bits) + 7) / 8;
  if (packed.size() < need) throw StorageError("packed payload too short");
  if (bits == 8) return {packed.begin(), packed.begin() + static_cast<std::ptrdiff_t>(count)};
  std::vector<std::uint8_t> out(count, 0);
  std::size_t bitpos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t v = 0;
    for (int b = 0; b < bits; ++b, ++bitpos) {
      v = static_cast<std::uint8_t>((v << 1) | ((packed[bitpos / 8] >> (7 - bitpos % 8)) & 1U));
    }
    out[i] = v;
  }
  return out;
}

ImageShape resized_shape(const ImageShape& shape, double area_ratio) {
  if (!(area_ratio > 0.0)) throw ConfigError("resize area ratio must be positive");
  if (area_ratio == 1.0) return shape;
  const double s = std::sqrt(area_ratio);
  auto side = [s](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * s)));
  };
  return {side(shape.height), side(shape.width), shape.channels};
}

std::vector<double> resize_bilinear(std::span<const double> image, const ImageShape& from,
                                    const ImageShape& to) {
  if (image.size() != from.count()) throw ShapeError("image size does not match its shape");
  if (from.channels != to.channels) throw ShapeError("resize cannot change channel count");
  if (from == to) return {image.begin(), image.end()};
  const std::size_t c = from.channels;
  std::vector<double> out(to.count());
  const double sy = static_cast<double>(from.height) / static_cast<double>(to.height);
  const double sx = static_cast<double>(from.width) / static_cast<double>(to.width);
  for (std::size_t y = 0; y < to.height; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(from.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, from.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < to.width; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(from.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, from.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return image[(yy * from.width + xx) * c + ch]; };
        const double top = (1.0 - wx) * at(y0, x0) + wx * at(y0, x1);
        const double bottom = (1.0 - wx) * at(y1, x0) + wx * at(y1, x1);
        out[(y * to.width + x) * c + ch] = (1.0 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

std::size_t encoded_payload_bytes(const ImageShape& shape, FeatureKind kind, const Codec& codec) {
  codec.validate();
  if (kind == FeatureKind::kReal) return shape.count() * sizeof(double);
  const auto stored = resized_shape(shape, codec.area_ratio);
  return (stored.count() * static_cast<std::size_t>(codec.bits) + 7) / 8;
}

StoredExample encode(const Example& example, const Codec& codec) {
  codec.validate();
  if (example.features.size() != example.shape.count()) {
    throw StorageError("example features do not match its shape");
  }
  StoredExample s;
  s.codec = codec;
  s.original_shape = example.shape;
  s.kind = example.kind;
  s.label = example.label;
  s.task_id = example.task_id;
  s.group_id = example.group_id;
  if (example.kind == FeatureKind::kReal) {
    if (!codec.is_identity()) throw StorageError("only the identity codec applies to real-valued features");
    s.stored_shape = example.shape;
    s.payload = example.features;
    return s;
  }
  try {
    check_pixel_range(example);
  } catch (const InputError& e) {
    throw StorageError(e.what());
  }
  s.stored_shape = resized_shape(example.shape, codec.area_ratio);
  std::vector<std::uint8_t> pixels;
  if (s.stored_shape == example.shape) {
    pixels = to_bytes(example.features);
  } else {
    pixels = to_bytes(resize_bilinear(example.features, example.shape, s.stored_shape));
  }
  s.payload = pack_bits(quantize(pixels, codec.bits), codec.bits);
  return s;
}

Example decode(const StoredExample& stored) {
  Example e;
  e.shape = stored.original_shape;
  e.kind = stored.kind;
  e.label = stored.label;
  e.task_id = stored.task_id;
  e.group_id = stored.group_id;
  if (const auto* real = std::get_if<std::vector<double>>(&stored.payload)) {
    e.features = *real;
    return e;
  }
  const auto& packed = std::get<std::vector<std::uint8_t>>(stored.payload);
  const auto levels = unpack_bits(packed, stored.codec.bits, stored.stored_shape.count());
  const auto pixels = dequantize(levels, stored.codec.bits);
  std::vector<double> small(pixels.begin(), pixels.end());
  if (stored.stored_shape == stored.original_shape) {
    e.features = std::move(small);
  } else {
    auto up = resize_bilinear(small, stored.stored_shape, stored.original_shape);
    for (double& v : up) v = std::clamp(std::round(v), 0.0, 255.0);
    e.features = std::move(up);
  }
  return e;
}

}  // namespace cssl
