#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tilemark/data.hpp"
#include "tilemark/error.hpp"

namespace tilemark {

namespace {

constexpr double kSoilRgb[3] = {122.0, 96.0, 74.0};
constexpr double kLineLift = 30.0;     // brightness added on drainage bands at gain 1
constexpr double kRoadDarken = 42.0;
constexpr double kFieldAmplitude = 10.0;  // smoothed noise, at noise scale 1
constexpr double kGrainSigma = 4.0;       // per-pixel noise, at noise scale 1

// Separable box blur with edge clamping.
void box_blur(std::vector<double>& f, int size, int radius) {
  std::vector<double> tmp(f.size());
  const double norm = 1.0 / (2 * radius + 1);
  for (int pass = 0; pass < 2; ++pass) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          const int xx = std::clamp(x + d, 0, size - 1);
          acc += pass == 0 ? f[y * size + xx] : f[xx * size + y];
        }
        if (pass == 0) {
          tmp[y * size + x] = acc * norm;
        } else {
          tmp[x * size + y] = acc * norm;
        }
      }
    }
    f.swap(tmp);
  }
}

int pixel_count(const DrainLine& line, int size) {
  int n = 0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) n += line.contains(x + 0.5, y + 0.5);
  }
  return n;
}

DrainLine band(double ax, double ay, double nx, double ny, double width) {
  DrainLine l;
  l.anchor_x = ax;
  l.anchor_y = ay;
  l.normal_x = nx;
  l.normal_y = ny;
  l.width = width;
  return l;
}

}  // namespace

bool DrainLine::contains(double px, double py) const {
  const double d = normal_x * (px - anchor_x) + normal_y * (py - anchor_y);
  if (d < -width / 2 || d >= width / 2) return false;
  if (!half_plane) return true;
  return limit_normal_x * (px - limit_anchor_x) + limit_normal_y * (py - limit_anchor_y) >= 0;
}

std::string to_string(DrainPattern pattern) {
  return pattern == DrainPattern::kParallel ? "parallel" : "herringbone";
}

DrainPattern drain_pattern_from_string(const std::string& name) {
  if (name == "parallel") return DrainPattern::kParallel;
  if (name == "herringbone") return DrainPattern::kHerringbone;
  throw ConfigError("unknown drainage pattern '" + name + "' (parallel|herringbone)");
}

void SynthSceneConfig::validate() const {
  if (size < 16 || size % 16 != 0) throw ConfigError("scene size must be a positive multiple of 16");
  if (line_width < 1) throw ConfigError("line_width must be >= 1");
  if (line_spacing <= line_width) throw ConfigError("line_spacing must exceed line_width");
  if (!std::isfinite(orientation_deg)) throw ConfigError("orientation must be finite");
  if (!(line_brightness_gain >= 0.0) || !std::isfinite(line_brightness_gain)) {
    throw ConfigError("line_brightness_gain must be finite and >= 0");
  }
  if (!(background_noise_scale >= 0.0) || !std::isfinite(background_noise_scale)) {
    throw ConfigError("background_noise_scale must be finite and >= 0");
  }
  if (n_confounder_roads < 0) throw ConfigError("n_confounder_roads must be >= 0");
}

std::vector<DrainLine> drainage_layout(const SynthSceneConfig& config) {
  config.validate();
  const double rad = config.orientation_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(rad), dy = std::sin(rad);  // line direction
  const double nx = -dy, ny = dx;                       // unit normal
  const double s = config.size, w = config.line_width, sp = config.line_spacing;

  std::mt19937_64 rng(mix_seed(config.seed, 1));
  const double phase = std::uniform_int_distribution<int>(0, config.line_spacing - 1)(rng);

  std::vector<DrainLine> lines;
  if (config.pattern == DrainPattern::kParallel) {
    // Lines at normal offset phase + k * spacing from the origin.
    const double reach = std::abs(nx) * s + std::abs(ny) * s;
    const int kmax = static_cast<int>(std::ceil(reach / sp)) + 1;
    for (int k = -kmax; k <= kmax; ++k) {
      const double t = phase + k * sp;
      lines.push_back(band(t * nx, t * ny, nx, ny, w));
    }
  } else {
    // Main collector through the center, laterals at 45 degrees on each side
    // spaced so their perpendicular separation equals the line spacing.
    const double cx = s / 2, cy = s / 2;
    lines.push_back(band(cx, cy, nx, ny, w));
    const double step = sp * std::numbers::sqrt2;
    const int kmax = static_cast<int>(std::ceil(s / step)) + 1;
    for (int side : {1, -1}) {
      const double ldx = (dx + side * nx) / std::numbers::sqrt2;
      const double ldy = (dy + side * ny) / std::numbers::sqrt2;
      for (int k = -kmax; k <= kmax; ++k) {
        const double t = phase + k * step;
        DrainLine l = band(cx + t * dx, cy + t * dy, -ldy, ldx, w);
        l.half_plane = true;
        l.limit_anchor_x = cx;
        l.limit_anchor_y = cy;
        l.limit_normal_x = side * nx;
        l.limit_normal_y = side * ny;
        lines.push_back(l);
      }
    }
  }
  std::erase_if(lines, [&](const DrainLine& l) { return pixel_count(l, config.size) == 0; });
  return lines;
}

Sample generate_synthetic_scene(const SynthSceneConfig& config) {
  config.validate();
  const int n = config.size;
  const std::size_t area = static_cast<std::size_t>(n) * n;

  // Background: smoothed luminance field plus fine grain.
  std::mt19937_64 noise_rng(mix_seed(config.seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> field(area);
  for (auto& v : field) v = gauss(noise_rng);
  box_blur(field, n, 3);
  box_blur(field, n, 3);
  double var = 0.0;
  for (double v : field) var += v * v;
  const double field_scale = var > 0 ? 1.0 / std::sqrt(var / area) : 0.0;
  std::vector<double> lum(area);
  for (std::size_t i = 0; i < area; ++i) {
    lum[i] = config.background_noise_scale *
             (kFieldAmplitude * field[i] * field_scale + kGrainSigma * gauss(noise_rng));
  }

  // Roads: dark straight bands with random pose, independent of drainage.
  std::mt19937_64 road_rng(mix_seed(config.seed, 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < config.n_confounder_roads; ++r) {
    const double angle = unit(road_rng) * std::numbers::pi;
    const double px = unit(road_rng) * n, py = unit(road_rng) * n;
    const double width = 4.0 + std::floor(unit(road_rng) * 4.0);
    const DrainLine road = band(px, py, -std::sin(angle), std::cos(angle), width);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (road.contains(x + 0.5, y + 0.5)) lum[y * n + x] -= kRoadDarken;
      }
    }
  }

  Sample s;
  s.id = "scene";
  s.mask = BinaryMask(n, n);
  const auto lines = drainage_layout(config);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (const auto& l : lines) {
        if (l.contains(x + 0.5, y + 0.5)) {
          s.mask.at(y, x) = 1;
          break;
        }
      }
    }
  }

  s.image = Image(n, n, 3);
  const double lift = kLineLift * config.line_brightness_gain;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double l = lum[y * n + x] + (s.mask.at(y, x) ? lift : 0.0);
      for (int c = 0; c < 3; ++c) {
        s.image.at(y, x, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(kSoilRgb[c] + l), 0L, 255L));
      }
    }
  }
  return s;
}

}  // namespace tilemark
