#include "tilemark/prediction_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tilemark/data.hpp"
#include "tilemark/error.hpp"

namespace tilemark {

namespace {

constexpr char kMagic[6] = {'D', 'P', 'R', 'E', 'D', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::uint8_t quantize_probability(float p) {
  const double clamped = std::clamp(static_cast<double>(p), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(255.0 * clamped + 0.5));
}

Plane<std::uint8_t> quantize_prediction(const ProbabilityMap& prob) {
  Plane<std::uint8_t> out(prob.height, prob.width);
  std::transform(prob.values.begin(), prob.values.end(), out.values.begin(), quantize_probability);
  return out;
}

void write_raw_prediction(const std::filesystem::path& path, const ProbabilityMap& prob) {
  std::string buf(kMagic, 6);
  put_u32(buf, static_cast<std::uint32_t>(prob.height));
  put_u32(buf, static_cast<std::uint32_t>(prob.width));
  for (float v : prob.values) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

ProbabilityMap read_raw_prediction(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 14 || buf.compare(0, 6, std::string(kMagic, 6)) != 0) {
    throw Error(path.string() + ": not a raw prediction file");
  }
  const auto h = get_u32(buf, 6), w = get_u32(buf, 10);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (buf.size() != 14 + 4 * n) throw Error(path.string() + ": size does not match header");
  ProbabilityMap out(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < n; ++i) out.values[i] = std::bit_cast<float>(get_u32(buf, 14 + 4 * i));
  return out;
}

ProbabilityMap read_prediction(const std::filesystem::path& dir, const std::string& id) {
  const auto raw = dir / (id + ".dpred");
  if (std::filesystem::exists(raw)) return read_raw_prediction(raw);
  const auto png = read_gray_png(dir / (id + ".png"));
  ProbabilityMap out(png.height, png.width);
  for (std::size_t i = 0; i < png.values.size(); ++i) out.values[i] = png.values[i] / 255.0f;
  return out;
}

}  // namespace tilemark
