#include "tilemark/transunet.hpp"

#include <array>
#include <cmath>

#include "tilemark/error.hpp"

namespace tilemark {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_exact(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

}  // namespace

TransUNetConfig TransUNetConfig::full_size() {
  TransUNetConfig c;
  c.image_size = 256;
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.mlp_dim = 3072;
  c.patch_size = 2;
  c.stem_channels = {64, 128, 256};
  c.decoder_channels = {256, 128, 64, 16};
  return c;
}

TransUNetConfig TransUNetConfig::desk() { return {}; }

int TransUNetConfig::total_stride() const {
  return (1 << static_cast<int>(stem_channels.size())) * patch_size;
}

void TransUNetConfig::validate() const {
  if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim must be a positive multiple of num_heads");
  }
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (mlp_dim < 1) throw ConfigError("mlp_dim must be >= 1");
  if (!is_power_of_two(patch_size)) throw ConfigError("patch_size must be a power of two");
  if (stem_channels.empty()) throw ConfigError("stem_channels must be nonempty");
  for (int c : stem_channels) {
    if (c < 1) throw ConfigError("stem channel counts must be >= 1");
  }
  const std::size_t ups = stem_channels.size() + log2_exact(patch_size);
  if (decoder_channels.size() != ups) {
    throw ConfigError("decoder_channels needs " + std::to_string(ups) + " entries");
  }
  for (int c : decoder_channels) {
    if (c < 1) throw ConfigError("decoder channel counts must be >= 1");
  }
  if (image_size < total_stride() || image_size % total_stride() != 0) {
    throw ConfigError("image_size must be divisible by " + std::to_string(total_stride()));
  }
}

template <typename T>
PatchSequence<T> patchify(const Var<T>& plane, int patch_size) {
  if (plane.rank() != 4) throw ShapeError("patchify expects B x C x H x W");
  const int b = plane.dim(0), c = plane.dim(1), h = plane.dim(2), w = plane.dim(3);
  if (patch_size < 1 || h % patch_size || w % patch_size) {
    throw ShapeError("patchify: plane " + shape_string(plane.shape()) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
  const int gh = h / patch_size, gw = w / patch_size, p = patch_size;
  auto v = ops::reshape(plane, {b, c, gh, p, gw, p});
  static constexpr std::array<int, 6> kOrder{0, 2, 4, 3, 5, 1};
  v = ops::permute(v, std::span<const int>(kOrder));
  return {ops::reshape(v, {b, gh * gw, p * p * c}), gh, gw};
}

template <typename T>
Var<T> unpatchify(const PatchSequence<T>& seq, int patch_size, int channels) {
  const int b = seq.tokens.dim(0), p = patch_size;
  if (seq.tokens.dim(1) != seq.grid_h * seq.grid_w || seq.tokens.dim(2) != p * p * channels) {
    throw ShapeError("unpatchify: token shape does not match grid and patch size");
  }
  auto v = ops::reshape(seq.tokens, {b, seq.grid_h, seq.grid_w, p, p, channels});
  static constexpr std::array<int, 6> kOrder{0, 5, 1, 3, 2, 4};
  v = ops::permute(v, std::span<const int>(kOrder));
  return ops::reshape(v, {b, channels, seq.grid_h * p, seq.grid_w * p});
}

template <typename T>
Var<T> tokens_to_plane(const PatchSequence<T>& seq) {
  const int b = seq.tokens.dim(0), d = seq.tokens.dim(2);
  auto v = ops::reshape(seq.tokens, {b, seq.grid_h, seq.grid_w, d});
  static constexpr std::array<int, 4> kOrder{0, 3, 1, 2};
  return ops::permute(v, std::span<const int>(kOrder));
}

template <typename T>
CnnStem<T>::CnnStem(int in_channels, const std::vector<int>& channels, int patch)
    : patch_size(patch) {
  int prev = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    stages.emplace_back("stem" + std::to_string(i), prev, channels[i]);
    prev = channels[i];
  }
}

template <typename T>
void CnnStem<T>::declare(ParameterStore<T>& store) const {
  for (const auto& s : stages) s.declare(store);
}

template <typename T>
typename CnnStem<T>::Output CnnStem<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                                                const ForwardContext& ctx) const {
  if (x.rank() != 4) throw ShapeError("stem expects B x C x H x W input");
  const int factor = (1 << static_cast<int>(stages.size())) * patch_size;
  if (x.dim(2) % factor || x.dim(3) % factor || x.dim(2) < factor || x.dim(3) < factor) {
    throw ShapeError("stem: input " + shape_string(x.shape()) + " is not divisible by " +
                     std::to_string(factor));
  }
  Output out;
  Var<T> h = x;
  for (const auto& s : stages) {
    h = ops::max_pool2(s.forward(store, h, ctx));
    out.skips.push_back(h);
  }
  out.final_plane = h;
  return out;
}

template <typename T>
void PatchEmbedding<T>::declare(ParameterStore<T>& store) const {
  const int in = patch_size * patch_size * channels;
  store.add_normal("embed.weight", {in, hidden_dim}, std::sqrt(1.0 / in));
  store.add_constant("embed.bias", {hidden_dim}, T(0));
  store.add_constant("embed.position", {num_tokens, hidden_dim}, T(0));
}

template <typename T>
PatchSequence<T> PatchEmbedding<T>::forward(const ParameterStore<T>& store,
                                            const Var<T>& plane) const {
  auto seq = patchify(plane, patch_size);
  if (seq.tokens.dim(1) != num_tokens) {
    throw ShapeError("patch embedding: got " + std::to_string(seq.tokens.dim(1)) +
                     " tokens, configured for " + std::to_string(num_tokens));
  }
  const int in = patch_size * patch_size * channels;
  auto t = ops::linear(seq.tokens, store.get("embed.weight", {in, hidden_dim}),
                       store.get("embed.bias", {hidden_dim}));
  seq.tokens = ops::add_trailing(t, store.get("embed.position", {num_tokens, hidden_dim}));
  return seq;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::string n, int d, int heads)
    : name(std::move(n)), hidden_dim(d), num_heads(heads) {
  if (heads < 1 || d % heads != 0) {
    throw ConfigError(name + ": hidden size " + std::to_string(d) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
}

template <typename T>
void MultiHeadAttention<T>::declare(ParameterStore<T>& store) const {
  const double std = std::sqrt(1.0 / hidden_dim);
  for (const char* p : {".q", ".k", ".v", ".out"}) {
    store.add_normal(name + p + ".weight", {hidden_dim, hidden_dim}, std);
    store.add_constant(name + p + ".bias", {hidden_dim}, T(0));
  }
}

template <typename T>
typename MultiHeadAttention<T>::Output MultiHeadAttention<T>::forward(
    const ParameterStore<T>& store, const Var<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != hidden_dim) {
    throw ConfigError(name + ": tokens " + shape_string(tokens.shape()) +
                      " do not match hidden size " + std::to_string(hidden_dim));
  }
  const int b = tokens.dim(0), n = tokens.dim(1), h = num_heads, dh = hidden_dim / num_heads;
  const Shape wshape{hidden_dim, hidden_dim}, bshape{hidden_dim};
  static constexpr std::array<int, 4> kSwap{0, 2, 1, 3};
  auto heads = [&](const char* p) {
    auto y = ops::linear(tokens, store.get(name + p + ".weight", wshape),
                         store.get(name + p + ".bias", bshape));
    y = ops::permute(ops::reshape(y, {b, n, h, dh}), std::span<const int>(kSwap));
    return ops::reshape(y, {b * h, n, dh});
  };
  auto q = heads(".q"), k = heads(".k"), v = heads(".v");
  auto scores = ops::scale(ops::bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto weights = ops::softmax_last(scores);
  auto ctx = ops::reshape(ops::bmm(weights, v, false), {b, h, n, dh});
  ctx = ops::reshape(ops::permute(ctx, std::span<const int>(kSwap)), {b, n, hidden_dim});
  auto out = ops::linear(ctx, store.get(name + ".out.weight", wshape),
                         store.get(name + ".out.bias", bshape));
  return {out, weights};
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::string n, int d, int heads, int mlp, double e)
    : name(std::move(n)), hidden_dim(d), mlp_dim(mlp), eps(e),
      attention(name + ".attn", d, heads) {}

template <typename T>
void TransformerBlock<T>::declare(ParameterStore<T>& store) const {
  store.add_constant(name + ".ln1.gamma", {hidden_dim}, T(1));
  store.add_constant(name + ".ln1.beta", {hidden_dim}, T(0));
  attention.declare(store);
  store.add_constant(name + ".ln2.gamma", {hidden_dim}, T(1));
  store.add_constant(name + ".ln2.beta", {hidden_dim}, T(0));
  store.add_normal(name + ".mlp1.weight", {hidden_dim, mlp_dim}, std::sqrt(2.0 / hidden_dim));
  store.add_constant(name + ".mlp1.bias", {mlp_dim}, T(0));
  store.add_normal(name + ".mlp2.weight", {mlp_dim, hidden_dim}, std::sqrt(1.0 / mlp_dim));
  store.add_constant(name + ".mlp2.bias", {hidden_dim}, T(0));
}

template <typename T>
Var<T> TransformerBlock<T>::forward(const ParameterStore<T>& store, const Var<T>& x) const {
  const Shape d{hidden_dim};
  auto h = ops::layer_norm_last(x, store.get(name + ".ln1.gamma", d),
                                store.get(name + ".ln1.beta", d), eps);
  auto y = ops::add(x, attention.forward(store, h).tokens);
  h = ops::layer_norm_last(y, store.get(name + ".ln2.gamma", d),
                           store.get(name + ".ln2.beta", d), eps);
  h = ops::relu(ops::linear(h, store.get(name + ".mlp1.weight", {hidden_dim, mlp_dim}),
                            store.get(name + ".mlp1.bias", {mlp_dim})));
  h = ops::linear(h, store.get(name + ".mlp2.weight", {mlp_dim, hidden_dim}),
                  store.get(name + ".mlp2.bias", d));
  return ops::add(y, h);
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(int layers, int d, int heads, int mlp, double eps) {
  for (int i = 0; i < layers; ++i) {
    blocks.emplace_back("layer" + std::to_string(i), d, heads, mlp, eps);
  }
}

template <typename T>
void TransformerEncoder<T>::declare(ParameterStore<T>& store) const {
  for (const auto& b : blocks) b.declare(store);
}

template <typename T>
PatchSequence<T> TransformerEncoder<T>::forward(const ParameterStore<T>& store,
                                                const PatchSequence<T>& seq) const {
  PatchSequence<T> out = seq;
  for (const auto& b : blocks) out.tokens = b.forward(store, out.tokens);
  return out;
}

template <typename T>
TransUNet<T>::TransUNet(TransUNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const int stages = static_cast<int>(config_.stem_channels.size());
  stem_ = CnnStem<T>(config_.in_channels, config_.stem_channels, config_.patch_size);
  embedding_ = {config_.stem_channels.back(), config_.patch_size, config_.hidden_dim,
                config_.num_tokens()};
  encoder_ = TransformerEncoder<T>(config_.num_layers, config_.hidden_dim, config_.num_heads,
                                   config_.mlp_dim, config_.layer_norm_eps);
  const auto& dec = config_.decoder_channels;
  bridge_ = ConvBnRelu<T>("bridge", config_.hidden_dim, dec.front());
  // Block j doubles the resolution to image / 2^(ups - j - 1); stem stage k
  // sits at image / 2^(k + 1).
  const int ups = static_cast<int>(dec.size());
  int prev = dec.front();
  for (int j = 0; j < ups; ++j) {
    const int k = ups - j - 2;
    const int skip = (k >= 0 && k < stages) ? k : -1;
    skip_index_.push_back(skip);
    const int in = prev + (skip >= 0 ? config_.stem_channels[skip] : 0);
    decoder_.emplace_back("up" + std::to_string(j), in, dec[j]);
    prev = dec[j];
  }
  head_ = Conv2d<T>{"head", dec.back(), config_.out_channels, 1, 1, true};
}

template <typename T>
void TransUNet<T>::declare(ParameterStore<T>& store) const {
  stem_.declare(store);
  embedding_.declare(store);
  encoder_.declare(store);
  store.add_constant("encoder_norm.gamma", {config_.hidden_dim}, T(1));
  store.add_constant("encoder_norm.beta", {config_.hidden_dim}, T(0));
  bridge_.declare(store);
  for (const auto& d : decoder_) d.declare(store);
  head_.declare(store);
}

template <typename T>
void TransUNet<T>::check_input(int height, int width) const {
  if (height != config_.image_size || width != config_.image_size) {
    throw ShapeError("TransUNet is configured for " + std::to_string(config_.image_size) +
                     "x" + std::to_string(config_.image_size) + " input, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

template <typename T>
PatchSequence<T> TransUNet<T>::encode(const ParameterStore<T>& store, const Var<T>& x,
                                      const ForwardContext& ctx,
                                      std::vector<Var<T>>* skips) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw ShapeError("TransUNet: expected N x " + std::to_string(config_.in_channels) +
                     " x H x W input, got " + shape_string(x.shape()));
  }
  auto stem = stem_.forward(store, x, ctx);
  check_input(x.dim(2), x.dim(3));
  auto seq = encoder_.forward(store, embedding_.forward(store, stem.final_plane));
  const Shape d{config_.hidden_dim};
  seq.tokens = ops::layer_norm_last(seq.tokens, store.get("encoder_norm.gamma", d),
                                    store.get("encoder_norm.beta", d), config_.layer_norm_eps);
  if (skips) *skips = std::move(stem.skips);
  return seq;
}

template <typename T>
Var<T> TransUNet<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                             const ForwardContext& ctx) const {
  std::vector<Var<T>> skips;
  auto seq = encode(store, x, ctx, &skips);
  auto h = bridge_.forward(store, tokens_to_plane(seq), ctx);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    h = ops::upsample_nearest2(h);
    if (skip_index_[j] >= 0) h = ops::concat_channels(h, skips[skip_index_[j]]);
    h = decoder_[j].forward(store, h, ctx);
  }
  return ops::sigmoid(head_.forward(store, h));
}

#define TILEMARK_INSTANTIATE_TRANSUNET(T)                                  \
  template PatchSequence<T> patchify(const Var<T>&, int);                  \
  template Var<T> unpatchify(const PatchSequence<T>&, int, int);           \
  template Var<T> tokens_to_plane(const PatchSequence<T>&);                \
  template struct CnnStem<T>;                                              \
  template struct PatchEmbedding<T>;                                       \
  template struct MultiHeadAttention<T>;                                   \
  template struct TransformerBlock<T>;                                     \
  template struct TransformerEncoder<T>;                                   \
  template class TransUNet<T>;

TILEMARK_INSTANTIATE_TRANSUNET(float)
TILEMARK_INSTANTIATE_TRANSUNET(double)

}  // namespace tilemark
