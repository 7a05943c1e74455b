#pragma once

#include <cstdint>
#include <vector>

namespace tilemark {

// 8-bit interleaved image, row-major H x W x C.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c = 3)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

// Single-channel row-major grid.
template <typename V>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<V> values;

  Plane() = default;
  Plane(int h, int w, V fill = V{})
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  V& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  const V& at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool operator==(const Plane&) const = default;
};

// Per-pixel drainage probability in [0, 1].
using ProbabilityMap = Plane<float>;
// Values in {0, 1}.
using BinaryMask = Plane<std::uint8_t>;

}  // namespace tilemark
