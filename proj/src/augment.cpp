#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tilemark/data.hpp"
#include "tilemark/error.hpp"

namespace tilemark {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void AugmentationSpec::validate() const {
  for (const auto& op : ops) {
    if (!std::isfinite(op.value)) throw ConfigError("augmentation parameter is not finite");
    if (op.kind == AugmentOp::Kind::kBrightness && std::abs(op.value) > 0.3) {
      throw ConfigError("brightness delta must lie in [-0.3, 0.3]");
    }
    if (op.kind == AugmentOp::Kind::kZoom && (op.value < 0.8 || op.value > 1.2)) {
      throw ConfigError("zoom scale must lie in [0.8, 1.2]");
    }
  }
}

namespace {

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

void flip(Sample& s, bool horizontal) {
  const int h = s.image.height, w = s.image.width, c = s.image.channels;
  Sample out = s;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = horizontal ? y : h - 1 - y;
      const int sx = horizontal ? w - 1 - x : x;
      for (int k = 0; k < c; ++k) out.image.at(y, x, k) = s.image.at(sy, sx, k);
      out.mask.at(y, x) = s.mask.at(sy, sx);
    }
  }
  s = std::move(out);
}

std::vector<std::uint8_t> mean_color(const Image& img) {
  std::vector<double> sum(img.channels, 0.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) sum[i % img.channels] += img.pixels[i];
  const double n = std::max<double>(1.0, static_cast<double>(img.height) * img.width);
  std::vector<std::uint8_t> out(img.channels);
  for (int k = 0; k < img.channels; ++k) {
    out[k] = static_cast<std::uint8_t>(std::lround(sum[k] / n));
  }
  return out;
}

// Inverse-mapped resampling; `source` maps an output pixel center to the
// input coordinates it samples.
template <typename Map>
void resample(Sample& s, Map source) {
  const int h = s.image.height, w = s.image.width, c = s.image.channels;
  const auto fill = mean_color(s.image);
  Sample out = s;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto [sx, sy] = source(x, y);
      sx = snap(sx);
      sy = snap(sy);
      if (sx < -0.5 || sx >= w - 0.5 || sy < -0.5 || sy >= h - 0.5) {
        for (int k = 0; k < c; ++k) out.image.at(y, x, k) = fill[k];
        out.mask.at(y, x) = 0;
        continue;
      }
      const int nx = std::clamp(static_cast<int>(std::floor(sx + 0.5)), 0, w - 1);
      const int ny = std::clamp(static_cast<int>(std::floor(sy + 0.5)), 0, h - 1);
      out.mask.at(y, x) = s.mask.at(ny, nx);

      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = std::clamp(static_cast<int>(fx), 0, w - 1);
      const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, w - 1);
      const int y0 = std::clamp(static_cast<int>(fy), 0, h - 1);
      const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, h - 1);
      for (int k = 0; k < c; ++k) {
        const double top = (1 - ax) * s.image.at(y0, x0, k) + ax * s.image.at(y0, x1, k);
        const double bot = (1 - ax) * s.image.at(y1, x0, k) + ax * s.image.at(y1, x1, k);
        const double v = (1 - ay) * top + ay * bot;
        out.image.at(y, x, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  s = std::move(out);
}

void rotate(Sample& s, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = snap(std::cos(rad)), sn = snap(std::sin(rad));
  const double cx = (s.image.width - 1) / 2.0, cy = (s.image.height - 1) / 2.0;
  resample(s, [&](int x, int y) {
    const double dx = x - cx, dy = y - cy;
    return std::pair{cx + cs * dx + sn * dy, cy - sn * dx + cs * dy};
  });
}

void zoom(Sample& s, double scale) {
  const double cx = (s.image.width - 1) / 2.0, cy = (s.image.height - 1) / 2.0;
  resample(s, [&](int x, int y) {
    return std::pair{cx + (x - cx) / scale, cy + (y - cy) / scale};
  });
}

void brightness(Sample& s, double delta) {
  const double shift = delta * 255.0;
  for (auto& p : s.image.pixels) {
    p = static_cast<std::uint8_t>(std::clamp(std::lround(p + shift), 0L, 255L));
  }
}

}  // namespace

Sample augment(const Sample& sample, const AugmentationSpec& spec) {
  spec.validate();
  if (sample.mask.height != sample.image.height || sample.mask.width != sample.image.width) {
    throw ShapeError("augment: image and mask sizes differ for " + sample.id);
  }
  Sample s = sample;
  for (const auto& op : spec.ops) {
    switch (op.kind) {
      case AugmentOp::Kind::kHFlip: flip(s, true); break;
      case AugmentOp::Kind::kVFlip: flip(s, false); break;
      case AugmentOp::Kind::kRotate: rotate(s, op.value); break;
      case AugmentOp::Kind::kBrightness: brightness(s, op.value); break;
      case AugmentOp::Kind::kZoom: zoom(s, op.value); break;
    }
  }
  return s;
}

Sample augment(const Sample& sample, std::uint64_t seed) {
  return augment(sample, draw_augmentation(seed));
}

AugmentationSpec draw_augmentation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip_h = unit(rng) < 0.5;
  const double angle = -30.0 + 60.0 * unit(rng);
  const double scale = 0.8 + 0.4 * unit(rng);
  const double delta = -0.3 + 0.6 * unit(rng);
  AugmentationSpec spec;
  if (flip_h) spec.ops.push_back(AugmentOp::hflip());
  spec.ops.push_back(AugmentOp::rotate(angle));
  spec.ops.push_back(AugmentOp::zoom(std::clamp(scale, 0.8, 1.2)));
  spec.ops.push_back(AugmentOp::brightness(std::clamp(delta, -0.3, 0.3)));
  return spec;
}

std::vector<Sample> expand_training_set(const std::vector<Sample>& samples, int factor,
                                        std::uint64_t seed) {
  if (factor < 1) throw ConfigError("augmentation factor must be >= 1");
  std::vector<Sample> out;
  out.reserve(samples.size() * factor);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int v = 0; v < factor; ++v) {
      AugmentationSpec spec;
      switch (v) {
        case 0: break;
        case 1: spec.ops = {AugmentOp::hflip()}; break;
        case 2: spec.ops = {AugmentOp::vflip()}; break;
        case 3: spec.ops = {AugmentOp::hflip(), AugmentOp::vflip()}; break;
        default: spec = draw_augmentation(mix_seed(mix_seed(seed, i), v));
      }
      Sample s = v == 0 ? samples[i] : augment(samples[i], spec);
      if (v > 0) s.id = samples[i].id + "_aug" + std::to_string(v);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace tilemark
