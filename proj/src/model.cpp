#include "tilemark/model.hpp"


#include "tilemark/error.hpp"
#include "tilemark/model_config.hpp"

namespace tilemark {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBasicUNet:
      return "basic_unet";
    case ModelKind::kImprovedUNet:
      return "improved_unet";
    case ModelKind::kTransUNet:
      return "transunet";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "basic_unet") return ModelKind::kBasicUNet;
  if (name == "improved_unet") return ModelKind::kImprovedUNet;
  if (name == "transunet") return ModelKind::kTransUNet;
  throw ConfigError("unknown model kind '" + name + "'");
}

template <typename T>
Var<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0].height, w = images[0].width, c = images[0].channels;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<T> values(images.size() * c * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != h || img.width != w || img.channels != c) {
      throw ShapeError("images_to_tensor: images in a batch must share dimensions");
    }
    for (int ch = 0; ch < c; ++ch) {
      T* dst = values.data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<T>(img.pixels[i * c + ch]) / T(255);
      }
    }
  }
  return Var<T>::leaf({static_cast<int>(images.size()), c, h, w}, std::move(values));
}

template <typename T>
ProbabilityMap predict(const SegmentationModel<T>& model, const ParameterStore<T>& store,
                       const Image& image) {
  NoGradGuard no_grad;
  const auto out = model.forward(store, images_to_tensor<T>(std::span(&image, 1)), {});
  ProbabilityMap map(image.height, image.width);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    map.values[i] = static_cast<float>(out.data()[i]);
  }
  return map;
}

template Var<float> images_to_tensor(std::span<const Image>);
template Var<double> images_to_tensor(std::span<const Image>);
template ProbabilityMap predict(const SegmentationModel<float>&, const ParameterStore<float>&,
                                const Image&);
template ProbabilityMap predict(const SegmentationModel<double>&, const ParameterStore<double>&,
                                const Image&);

void ModelConfig::validate() const {
  switch (kind) {
    case ModelKind::kBasicUNet:
      basic.validate();
      break;
    case ModelKind::kImprovedUNet:
      improved.validate();
      break;
    case ModelKind::kTransUNet:
      transunet.validate();
      break;
  }
}

template <typename T>
std::unique_ptr<SegmentationModel<T>> make_model(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::kBasicUNet:
      return std::make_unique<BasicUNet<T>>(config.basic);
    case ModelKind::kImprovedUNet:
      return std::make_unique<ImprovedUNet<T>>(config.improved);
    case ModelKind::kTransUNet:
      return std::make_unique<TransUNet<T>>(config.transunet);
  }
  throw ConfigError("unknown model kind");
}

template std::unique_ptr<SegmentationModel<float>> make_model(const ModelConfig&);
template std::unique_ptr<SegmentationModel<double>> make_model(const ModelConfig&);

void write_model_config(const ModelConfig& config, KeyValueConfig& out) {
  out.set("model.kind", to_string(config.kind));
  switch (config.kind) {
    case ModelKind::kBasicUNet: {
      const auto& c = config.basic;
      out.set("model.in_channels", std::to_string(c.in_channels));
      out.set("model.out_channels", std::to_string(c.out_channels));
      out.set("model.widths", format_int_list(c.widths));
      break;
    }
    case ModelKind::kImprovedUNet: {
      const auto& c = config.improved;
      out.set("model.in_channels", std::to_string(c.in_channels));
      out.set("model.out_channels", std::to_string(c.out_channels));
      out.set("model.base_channels", std::to_string(c.base_channels));
      out.set("model.channel_multiplier", std::to_string(c.channel_multiplier));
      out.set("model.aspp_rates", format_int_list(c.aspp_dilation_rates));
      out.set("model.aspp_branch_channels", std::to_string(c.aspp_branch_channels));
      out.set("model.attention_gates", c.use_attention_gates ? "true" : "false");
      out.set("model.residual_blocks", c.use_residual_blocks ? "true" : "false");
      break;
    }
    case ModelKind::kTransUNet: {
      const auto& c = config.transunet;
      out.set("model.in_channels", std::to_string(c.in_channels));
      out.set("model.out_channels", std::to_string(c.out_channels));
      out.set("model.image_size", std::to_string(c.image_size));
      out.set("model.hidden_dim", std::to_string(c.hidden_dim));
      out.set("model.num_layers", std::to_string(c.num_layers));
      out.set("model.num_heads", std::to_string(c.num_heads));
      out.set("model.mlp_dim", std::to_string(c.mlp_dim));
      out.set("model.patch_size", std::to_string(c.patch_size));
      out.set("model.stem_channels", format_int_list(c.stem_channels));
      out.set("model.decoder_channels", format_int_list(c.decoder_channels));
      break;
    }
  }
}

ModelConfig read_model_config(const KeyValueConfig& in) {
  ModelConfig config;
  if (auto kind = in.get("model.kind")) config.kind = model_kind_from_string(*kind);
  config.basic = BasicUNetConfig::full_size();
  config.improved = ImprovedUNetConfig::full_size();
  config.transunet = TransUNetConfig::full_size();

  for (const auto& [key, value] : in.items()) {
    if (key.rfind("model.", 0) != 0 || key == "model.kind") continue;
    const std::string k = key.substr(6);
    bool known = true;
    switch (config.kind) {
      case ModelKind::kBasicUNet: {
        auto& c = config.basic;
        if (k == "in_channels") c.in_channels = parse_int(key, value);
        else if (k == "out_channels") c.out_channels = parse_int(key, value);
        else if (k == "widths") c.widths = parse_int_list(key, value);
        else known = false;
        break;
      }
      case ModelKind::kImprovedUNet: {
        auto& c = config.improved;
        if (k == "in_channels") c.in_channels = parse_int(key, value);
        else if (k == "out_channels") c.out_channels = parse_int(key, value);
        else if (k == "base_channels") c.base_channels = parse_int(key, value);
        else if (k == "channel_multiplier") c.channel_multiplier = parse_int(key, value);
        else if (k == "aspp_rates") c.aspp_dilation_rates = parse_int_list(key, value);
        else if (k == "aspp_branch_channels") c.aspp_branch_channels = parse_int(key, value);
        else if (k == "attention_gates") c.use_attention_gates = parse_bool(key, value);
        else if (k == "residual_blocks") c.use_residual_blocks = parse_bool(key, value);
        else known = false;
        break;
      }
      case ModelKind::kTransUNet: {
        auto& c = config.transunet;
        if (k == "in_channels") c.in_channels = parse_int(key, value);
        else if (k == "out_channels") c.out_channels = parse_int(key, value);
        else if (k == "image_size") c.image_size = parse_int(key, value);
        else if (k == "hidden_dim") c.hidden_dim = parse_int(key, value);
        else if (k == "num_layers") c.num_layers = parse_int(key, value);
        else if (k == "num_heads") c.num_heads = parse_int(key, value);
        else if (k == "mlp_dim") c.mlp_dim = parse_int(key, value);
        else if (k == "patch_size") c.patch_size = parse_int(key, value);
        else if (k == "stem_channels") c.stem_channels = parse_int_list(key, value);
        else if (k == "decoder_channels") c.decoder_channels = parse_int_list(key, value);
        else known = false;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + key + "' for model kind " + to_string(config.kind));
    }
  }
  config.validate();
  return config;
}

}  // namespace tilemark
