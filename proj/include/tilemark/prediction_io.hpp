#pragma once

// Prediction artifacts: an 8-bit PNG with round-half-up quantization and a
// lossless raw sidecar ("DPRED1", u32 height, u32 width, row-major f32,
// little-endian).

#include <cstdint>
#include <filesystem>

#include "tilemark/image.hpp"

namespace tilemark {

// floor(255 p + 0.5), with p clamped to [0, 1].
std::uint8_t quantize_probability(float p);
Plane<std::uint8_t> quantize_prediction(const ProbabilityMap& prob);

void write_raw_prediction(const std::filesystem::path& path, const ProbabilityMap& prob);
// Malformed or truncated files raise tilemark::Error.
ProbabilityMap read_raw_prediction(const std::filesystem::path& path);

// Loads `<stem>.dpred` when present, else `<stem>.png` scaled by 1/255.
ProbabilityMap read_prediction(const std::filesystem::path& dir, const std::string& id);

}  // namespace tilemark
