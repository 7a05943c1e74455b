#include "tilemark/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "tilemark/error.hpp"

namespace tilemark {

namespace {

constexpr char kMagic[4] = {'T', 'M', 'C', 'K'};
constexpr char kTrailer[4] = {'K', 'C', 'M', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  std::vector<float> floats(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(Checkpoint::kFormatVersion);
  w.str(ck.config.serialize());
  w.u32(static_cast<std::uint32_t>(ck.epoch));
  w.f64(ck.best_val_loss);
  w.str(ck.rng_state);

  const auto& entries = ck.parameters.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.u8(e.kind == ParamKind::kTrainable ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.var.data()) w.f32(v);
  }

  w.u64(ck.optimizer.step);
  w.u32(static_cast<std::uint32_t>(ck.optimizer.slots.size()));
  for (const auto& [name, values] : ck.optimizer.slots) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(values.size()));
    for (float v : values) w.f32(v);
  }
  w.bytes(kTrailer, 4);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw Error("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  if (r.raw(4) != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint file: " + path.string());
  const auto version = r.u32();
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  Checkpoint ck;
  try {
    ck.config = KeyValueConfig::parse(r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is corrupt: ") + e.what());
  }
  ck.epoch = static_cast<std::int32_t>(r.u32());
  ck.best_val_loss = r.f64();
  ck.rng_state = r.str();

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto kind = r.u8();
    if (kind > 1) throw CheckpointError("bad parameter kind for " + name);
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("bad rank for " + name);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.u32();
      if (dim == 0 || dim > (1u << 30)) throw CheckpointError("bad dimension for " + name);
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    auto values = r.floats(numel);
    if (ck.parameters.contains(name)) throw CheckpointError("duplicate parameter " + name);
    ck.parameters.add_values(name, shape, kind == 0 ? ParamKind::kTrainable : ParamKind::kBuffer,
                             std::move(values));
  }

  ck.optimizer.step = r.u64();
  const auto slots = r.u32();
  for (std::uint32_t i = 0; i < slots; ++i) {
    std::string name = r.str();
    const auto n = r.u32();
    ck.optimizer.slots.emplace_back(std::move(name), r.floats(n));
  }
  if (r.raw(4) != std::string(kTrailer, 4)) throw CheckpointError("checkpoint trailer missing");
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

void restore_parameters(ParameterStore<float>& target, const ParameterStore<float>& source) {
  if (target.size() != source.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(source.size()) +
                          " arrays, model declares " + std::to_string(target.size()));
  }
  for (const auto& e : target.entries()) {
    if (!source.contains(e.name)) throw CheckpointError("checkpoint lacks " + e.name);
    const auto& s = source.entry(e.name);
    if (s.shape != e.shape || s.kind != e.kind) {
      throw CheckpointError("checkpoint entry " + e.name + " has shape " + shape_string(s.shape) +
                            ", model expects " + shape_string(e.shape));
    }
    Var<float> dst = e.var;
    std::copy(s.var.data().begin(), s.var.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace tilemark
