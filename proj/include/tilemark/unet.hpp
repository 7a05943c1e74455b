#pragma once

#include <vector>

#include "tilemark/model.hpp"

namespace tilemark {

struct ImprovedUNetConfig {
  int in_channels = 3;
  int out_channels = 1;
  int depth = 4;
  int base_channels = 16;
  int channel_multiplier = 2;
  std::vector<int> aspp_dilation_rates{1, 2, 4, 8};
  // Width of each dilated branch; 0 means an eighth of the bottleneck width.
  int aspp_branch_channels = 0;
  bool use_attention_gates = true;
  bool use_residual_blocks = true;

  static ImprovedUNetConfig full_size();
  static ImprovedUNetConfig desk();

  // Channel count per encoder level.
  std::vector<int> level_channels() const;
  int branch_channels() const;
  void validate() const;
};

// Four-level residual U-Net with an ASPP bottleneck and attention-gated skip
// connections. Encoder: residual block then 2x max-pool per level.
// Decoder: nearest 2x upsample, 3x3 conv-bn-relu, gated skip concat,
// residual block. Head: 1x1 conv + sigmoid.
template <typename T>
class ImprovedUNet final : public SegmentationModel<T> {
 public:
  explicit ImprovedUNet(ImprovedUNetConfig config);

  ModelKind kind() const override { return ModelKind::kImprovedUNet; }
  int in_channels() const override { return config_.in_channels; }
  const ImprovedUNetConfig& config() const { return config_; }
  void declare(ParameterStore<T>& store) const override;
  void check_input(int height, int width) const override;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const override;

 private:
  struct Stage {
    ResidualBlock<T> residual;
    DoubleConv<T> plain;
  };
  Var<T> run_stage(const Stage& stage, const ParameterStore<T>& store, const Var<T>& x,
                   const ForwardContext& ctx) const;
  void declare_stage(const Stage& stage, ParameterStore<T>& store) const;

  ImprovedUNetConfig config_;
  std::vector<Stage> encoder_;
  Aspp<T> bottleneck_;
  std::vector<ConvBnRelu<T>> up_;
  std::vector<AttentionGate<T>> gates_;
  std::vector<Stage> decoder_;  // index 0 is the full-resolution level
  Conv2d<T> head_;
};

struct BasicUNetConfig {
  int in_channels = 3;
  int out_channels = 1;
  // Encoder widths; the last entry is the bottleneck.
  std::vector<int> widths{8, 16, 32, 64, 128};

  static BasicUNetConfig full_size();
  static BasicUNetConfig desk();
  void validate() const;
};

// Baseline U-Net: double-conv stages, 2x max-pool, skip concatenation.
template <typename T>
class BasicUNet final : public SegmentationModel<T> {
 public:
  explicit BasicUNet(BasicUNetConfig config);

  ModelKind kind() const override { return ModelKind::kBasicUNet; }
  int in_channels() const override { return config_.in_channels; }
  const BasicUNetConfig& config() const { return config_; }
  void declare(ParameterStore<T>& store) const override;
  void check_input(int height, int width) const override;
  Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                 const ForwardContext& ctx) const override;

 private:
  BasicUNetConfig config_;
  std::vector<DoubleConv<T>> encoder_;
  std::vector<ConvBnRelu<T>> up_;
  std::vector<DoubleConv<T>> decoder_;
  Conv2d<T> head_;
};

}  // namespace tilemark
