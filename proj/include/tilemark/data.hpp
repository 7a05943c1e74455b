#pragma once

// Dataset I/O, paired image/mask augmentation, and procedural drainage
// scenes for desk-scale experiments.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tilemark/image.hpp"

namespace tilemark {

struct Sample {
  Image image;
  BinaryMask mask;
  std::string id;

  bool operator==(const Sample&) const = default;
};

// ---- PNG I/O --------------------------------------------------------------

Image read_rgb_png(const std::filesystem::path& path);
Plane<std::uint8_t> read_gray_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const Image& image);
void write_gray_png(const std::filesystem::path& path, const Plane<std::uint8_t>& plane);

// ---- Dataset layout ---------------------------------------------------------
//
//   <root>/images/<id>.png   RGB
//   <root>/masks/<id>.png    grayscale, >= 128 is positive
//   <root>/manifest.txt      optional, one id per line

// Samples sorted by id. ManifestError when an image has no mask (or the
// reverse, or a manifest id is missing); ShapeError on size mismatch.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

// Writes the layout above, masks as 0/255, manifest in the given order.
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

// ---- Augmentation -----------------------------------------------------------

struct AugmentOp {
  enum class Kind { kHFlip, kVFlip, kRotate, kBrightness, kZoom };
  Kind kind = Kind::kHFlip;
  // degrees for kRotate, delta in [-0.3, 0.3] (fraction of 255) for
  // kBrightness, scale in [0.8, 1.2] for kZoom; unused for flips.
  double value = 0.0;

  static AugmentOp hflip() { return {Kind::kHFlip, 0.0}; }
  static AugmentOp vflip() { return {Kind::kVFlip, 0.0}; }
  static AugmentOp rotate(double degrees) { return {Kind::kRotate, degrees}; }
  static AugmentOp brightness(double delta) { return {Kind::kBrightness, delta}; }
  static AugmentOp zoom(double scale) { return {Kind::kZoom, scale}; }
};

// Ops applied left to right; an empty list is the identity.
struct AugmentationSpec {
  std::vector<AugmentOp> ops;

  void validate() const;  // ConfigError on out-of-range parameters
};

// Geometric ops move image and mask together (image bilinear, mask nearest);
// pixels exposed by rotation or zoom take the image's mean color and mask 0.
// Brightness touches only the image and clamps to [0, 255].
Sample augment(const Sample& sample, const AugmentationSpec& spec);

// augment() with a composite drawn by draw_augmentation(seed).
Sample augment(const Sample& sample, std::uint64_t seed);

// Random composite: rotation in [-30, 30] degrees, brightness, zoom, and a
// horizontal flip with probability 1/2.
AugmentationSpec draw_augmentation(std::uint64_t seed);

// Per input, in order: original, hflip, vflip, hflip+vflip, then seeded
// random composites up to `factor` variants. Seeds depend only on (seed,
// sample index, variant index).
std::vector<Sample> expand_training_set(const std::vector<Sample>& samples, int factor,
                                        std::uint64_t seed);

// ---- Synthetic drainage scenes ----------------------------------------------

enum class DrainPattern { kParallel, kHerringbone };

std::string to_string(DrainPattern pattern);
DrainPattern drain_pattern_from_string(const std::string& name);

struct SynthSceneConfig {
  int size = 64;
  DrainPattern pattern = DrainPattern::kParallel;
  int line_spacing = 16;
  int line_width = 2;
  double orientation_deg = 0.0;
  double line_brightness_gain = 1.0;
  double background_noise_scale = 1.0;
  int n_confounder_roads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// A straight drainage band: pixel centers p with
//   -width/2 <= normal . (p - anchor) < width/2
// restricted to limit_normal . (p - limit_anchor) >= 0 when `half_plane`
// is set (herringbone laterals stop at the main line). Pixel (x, y) has its
// center at (x + 0.5, y + 0.5).
struct DrainLine {
  bool contains(double px, double py) const;

  double anchor_x = 0.0, anchor_y = 0.0;
  double normal_x = 0.0, normal_y = 1.0;
  double width = 1.0;
  bool half_plane = false;
  double limit_anchor_x = 0.0, limit_anchor_y = 0.0;
  double limit_normal_x = 0.0, limit_normal_y = 0.0;
};

// Line equations of the drainage network for a configuration; only lines
// covering at least one pixel are returned.
std::vector<DrainLine> drainage_layout(const SynthSceneConfig& config);

// Soil-toned smoothed noise, drainage bands brightened by the gain, and
// darker confounder roads that never enter the mask. Deterministic in
// config (including seed).
Sample generate_synthetic_scene(const SynthSceneConfig& config);

// SplitMix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace tilemark
