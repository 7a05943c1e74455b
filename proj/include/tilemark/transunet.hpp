#pragma once

// Hybrid CNN + transformer segmentation network: a residual CNN stem
// extracts low-level features (kept as skips), the stem's last feature plane
// is cut into P x P patches that a transformer encoder processes as a token
// sequence, and a skip-connected upscaling decoder restores full resolution.

#include <vector>

#include "tilemark/model.hpp"

namespace tilemark {

struct TransUNetConfig {
  int in_channels = 3;
  int out_channels = 1;
  int image_size = 64;  // square input side; fixes the token count
  int hidden_dim = 64;
  int num_layers = 4;
  int num_heads = 4;
  int mlp_dim = 128;
  int patch_size = 2;  // on the stem's final plane; a power of two
  std::vector<int> stem_channels{16, 32, 64};
  // One entry per 2x upsampling stage: stem stages + log2(patch_size).
  std::vector<int> decoder_channels{64, 32, 16, 8};
  double layer_norm_eps = 1e-6;

  // Hybrid ResNet/ViT-B geometry at 256 x 256: D = 768, 12 layers, 12 heads.
  static TransUNetConfig full_size();
  static TransUNetConfig desk();

  int total_stride() const;  // 2^stages * patch_size
  int grid_side() const { return image_size / total_stride(); }
  int num_tokens() const { return grid_side() * grid_side(); }
  void validate() const;
};

template <typename T>
struct PatchSequence {
  Var<T> tokens;  // B x N x D, row-major patch order
  int grid_h = 0;
  int grid_w = 0;
};

// Rearranges a B x C x H x W plane into B x N x (P*P*C) patch vectors, each
// flattened in (row, column, channel) order. N = H*W / P^2.
template <typename T>
PatchSequence<T> patchify(const Var<T>& plane, int patch_size);

// Inverse of patchify for raw patch vectors.
template <typename T>
Var<T> unpatchify(const PatchSequence<T>& seq, int patch_size, int channels);

// B x N x D tokens back to a B x D x grid_h x grid_w plane.
template <typename T>
Var<T> tokens_to_plane(const PatchSequence<T>& seq);

template <typename T>
struct CnnStem {
  std::vector<ResidualBlock<T>> stages;
  int patch_size = 1;

  struct Output {
    std::vector<Var<T>> skips;  // stage k at H / 2^(k+1)
    Var<T> final_plane;
  };

  CnnStem() = default;
  CnnStem(int in_channels, const std::vector<int>& channels, int patch_size);
  void declare(ParameterStore<T>& store) const;
  // Raises ShapeError unless H and W are divisible by 2^stages * patch_size.
  Output forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const;
};

// Linear projection of flattened patches plus learned per-token position
// embeddings (zero-initialized).
template <typename T>
struct PatchEmbedding {
  int channels = 0;
  int patch_size = 1;
  int hidden_dim = 0;
  int num_tokens = 0;

  void declare(ParameterStore<T>& store) const;
  PatchSequence<T> forward(const ParameterStore<T>& store, const Var<T>& plane) const;
};

template <typename T>
struct MultiHeadAttention {
  std::string name;
  int hidden_dim = 0;
  int num_heads = 1;

  struct Output {
    Var<T> tokens;
    Var<T> weights;  // (B * heads) x N x N, rows sum to 1
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(std::string name, int hidden_dim, int num_heads);
  void declare(ParameterStore<T>& store) const;
  Output forward(const ParameterStore<T>& store, const Var<T>& tokens) const;
};

// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)) with a ReLU MLP.
template <typename T>
struct TransformerBlock {
  std::string name;
  int hidden_dim = 0;
  int mlp_dim = 0;
  double eps = 1e-6;
  MultiHeadAttention<T> attention;

  TransformerBlock() = default;
  TransformerBlock(std::string name, int hidden_dim, int num_heads, int mlp_dim, double eps);
  void declare(ParameterStore<T>& store) const;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& tokens) const;
};

template <typename T>
struct TransformerEncoder {
  std::vector<TransformerBlock<T>> blocks;

  TransformerEncoder() = default;
  TransformerEncoder(int layers, int hidden_dim, int num_heads, int mlp_dim, double eps);
  void declare(ParameterStore<T>& store) const;
  PatchSequence<T> forward(const ParameterStore<T>& store, const PatchSequence<T>& seq) const;
};

template <typename T>
class TransUNet final : public SegmentationModel<T> {
 public:
  explicit TransUNet(TransUNetConfig config);

  ModelKind kind() const override { return ModelKind::kTransUNet; }
  int in_channels() const override { return config_.in_channels; }
  const TransUNetConfig& config() const { return config_; }
  void declare(ParameterStore<T>& store) const override;
  void check_input(int height, int width) const override;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const override;

  // Stem, embedding, encoder and final norm: the tokens fed to the decoder.
  PatchSequence<T> encode(const ParameterStore<T>& store, const Var<T>& x,
                          const ForwardContext& ctx, std::vector<Var<T>>* skips) const;

 private:
  TransUNetConfig config_;
  CnnStem<T> stem_;
  PatchEmbedding<T> embedding_;
  TransformerEncoder<T> encoder_;
  ConvBnRelu<T> bridge_;
  std::vector<DoubleConv<T>> decoder_;
  std::vector<int> skip_index_;  // stem stage feeding decoder block j, or -1
  Conv2d<T> head_;
};

}  // namespace tilemark
