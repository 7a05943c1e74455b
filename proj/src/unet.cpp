#include "tilemark/unet.hpp"

#include <algorithm>

#include "tilemark/error.hpp"

namespace tilemark {

namespace {

void check_divisible(const char* model, int height, int width, int factor) {
  if (height < factor || width < factor || height % factor || width % factor) {
    throw ShapeError(std::string(model) + ": input " + std::to_string(height) + "x" +
                     std::to_string(width) + " is not divisible by " + std::to_string(factor));
  }
}

}  // namespace

ImprovedUNetConfig ImprovedUNetConfig::full_size() { return {}; }

ImprovedUNetConfig ImprovedUNetConfig::desk() {
  ImprovedUNetConfig c;
  c.base_channels = 8;
  return c;
}

std::vector<int> ImprovedUNetConfig::level_channels() const {
  std::vector<int> out;
  int c = base_channels;
  for (int i = 0; i < depth; ++i) {
    out.push_back(c);
    c *= channel_multiplier;
  }
  return out;
}

int ImprovedUNetConfig::branch_channels() const {
  if (aspp_branch_channels > 0) return aspp_branch_channels;
  return std::max(1, level_channels().back() / 8);
}

void ImprovedUNetConfig::validate() const {
  if (depth != 4) throw ConfigError("improved U-Net depth must be 4");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (channel_multiplier < 1) throw ConfigError("channel_multiplier must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be >= 1");
  if (aspp_dilation_rates.empty()) throw ConfigError("aspp_dilation_rates must be nonempty");
  if (aspp_dilation_rates.front() != 1) {
    throw ConfigError("aspp_dilation_rates must start at 1");
  }
  for (std::size_t i = 1; i < aspp_dilation_rates.size(); ++i) {
    if (aspp_dilation_rates[i] <= aspp_dilation_rates[i - 1]) {
      throw ConfigError("aspp_dilation_rates must be strictly increasing");
    }
  }
}

template <typename T>
ImprovedUNet<T>::ImprovedUNet(ImprovedUNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto ch = config_.level_channels();
  int prev = config_.in_channels;
  for (int i = 0; i < config_.depth; ++i) {
    const std::string n = "enc" + std::to_string(i);
    encoder_.push_back({ResidualBlock<T>(n, prev, ch[i]), DoubleConv<T>(n, prev, ch[i])});
    prev = ch[i];
  }
  const int bottom = ch.back();
  bottleneck_ = Aspp<T>("aspp", bottom, config_.branch_channels(), bottom,
                        config_.aspp_dilation_rates);
  decoder_.resize(config_.depth);
  up_.resize(config_.depth);
  gates_.resize(config_.depth);
  prev = bottom;
  for (int i = config_.depth - 1; i >= 0; --i) {
    const std::string n = "dec" + std::to_string(i);
    up_[i] = ConvBnRelu<T>(n + ".up", prev, ch[i]);
    gates_[i] = AttentionGate<T>(n + ".gate", ch[i], prev, std::max(1, ch[i] / 2));
    decoder_[i] = {ResidualBlock<T>(n, 2 * ch[i], ch[i]), DoubleConv<T>(n, 2 * ch[i], ch[i])};
    prev = ch[i];
  }
  head_ = Conv2d<T>{"head", ch.front(), config_.out_channels, 1, 1, true};
}

template <typename T>
void ImprovedUNet<T>::declare_stage(const Stage& stage, ParameterStore<T>& store) const {
  if (config_.use_residual_blocks) {
    stage.residual.declare(store);
  } else {
    stage.plain.declare(store);
  }
}

template <typename T>
Var<T> ImprovedUNet<T>::run_stage(const Stage& stage, const ParameterStore<T>& store,
                                  const Var<T>& x, const ForwardContext& ctx) const {
  return config_.use_residual_blocks ? stage.residual.forward(store, x, ctx)
                                     : stage.plain.forward(store, x, ctx);
}

template <typename T>
void ImprovedUNet<T>::declare(ParameterStore<T>& store) const {
  for (const auto& s : encoder_) declare_stage(s, store);
  bottleneck_.declare(store);
  for (int i = config_.depth - 1; i >= 0; --i) {
    up_[i].declare(store);
    if (config_.use_attention_gates) gates_[i].declare(store);
    declare_stage(decoder_[i], store);
  }
  head_.declare(store);
}

template <typename T>
void ImprovedUNet<T>::check_input(int height, int width) const {
  check_divisible("improved U-Net", height, width, 1 << config_.depth);
}

template <typename T>
Var<T> ImprovedUNet<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                                const ForwardContext& ctx) const {
  if (x.rank() != 4) throw ShapeError("improved U-Net expects N x C x H x W input");
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("improved U-Net: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
  }
  check_input(x.dim(2), x.dim(3));

  std::vector<Var<T>> skips;
  Var<T> h = x;
  for (const auto& stage : encoder_) {
    h = run_stage(stage, store, h, ctx);
    skips.push_back(h);
    h = ops::max_pool2(h);
  }
  h = bottleneck_.forward(store, h, ctx);
  for (int i = config_.depth - 1; i >= 0; --i) {
    auto up = up_[i].forward(store, ops::upsample_nearest2(h), ctx);
    auto skip = config_.use_attention_gates ? gates_[i].forward(store, skips[i], h).gated
                                            : skips[i];
    h = run_stage(decoder_[i], store, ops::concat_channels(skip, up), ctx);
  }
  return ops::sigmoid(head_.forward(store, h));
}

BasicUNetConfig BasicUNetConfig::full_size() { return {}; }

BasicUNetConfig BasicUNetConfig::desk() {
  BasicUNetConfig c;
  c.widths = {4, 8, 16, 32, 64};
  return c;
}

void BasicUNetConfig::validate() const {
  if (widths.size() != 5) throw ConfigError("basic U-Net needs 5 widths (4 levels + bottleneck)");
  for (int w : widths) {
    if (w < 1) throw ConfigError("basic U-Net widths must be >= 1");
  }
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be >= 1");
}

template <typename T>
BasicUNet<T>::BasicUNet(BasicUNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& w = config_.widths;
  int prev = config_.in_channels;
  for (std::size_t i = 0; i < w.size(); ++i) {
    encoder_.emplace_back("enc" + std::to_string(i), prev, w[i]);
    prev = w[i];
  }
  const int levels = static_cast<int>(w.size()) - 1;
  up_.resize(levels);
  decoder_.resize(levels);
  for (int i = levels - 1; i >= 0; --i) {
    const std::string n = "dec" + std::to_string(i);
    up_[i] = ConvBnRelu<T>(n + ".up", w[i + 1], w[i]);
    decoder_[i] = DoubleConv<T>(n, 2 * w[i], w[i]);
  }
  head_ = Conv2d<T>{"head", w.front(), config_.out_channels, 1, 1, true};
}

template <typename T>
void BasicUNet<T>::declare(ParameterStore<T>& store) const {
  for (const auto& e : encoder_) e.declare(store);
  for (int i = static_cast<int>(decoder_.size()) - 1; i >= 0; --i) {
    up_[i].declare(store);
    decoder_[i].declare(store);
  }
  head_.declare(store);
}

template <typename T>
void BasicUNet<T>::check_input(int height, int width) const {
  check_divisible("basic U-Net", height, width, 1 << (config_.widths.size() - 1));
}

template <typename T>
Var<T> BasicUNet<T>::forward(const ParameterStore<T>& store, const Var<T>& x,
                             const ForwardContext& ctx) const {
  if (x.rank() != 4) throw ShapeError("basic U-Net expects N x C x H x W input");
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("basic U-Net: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
  }
  check_input(x.dim(2), x.dim(3));

  const int levels = static_cast<int>(decoder_.size());
  std::vector<Var<T>> skips;
  Var<T> h = x;
  for (int i = 0; i < levels; ++i) {
    h = encoder_[i].forward(store, h, ctx);
    skips.push_back(h);
    h = ops::max_pool2(h);
  }
  h = encoder_.back().forward(store, h, ctx);
  for (int i = levels - 1; i >= 0; --i) {
    auto up = up_[i].forward(store, ops::upsample_nearest2(h), ctx);
    h = decoder_[i].forward(store, ops::concat_channels(skips[i], up), ctx);
  }
  return ops::sigmoid(head_.forward(store, h));
}

template class ImprovedUNet<float>;
template class ImprovedUNet<double>;
template class BasicUNet<float>;
template class BasicUNet<double>;

}  // namespace tilemark
