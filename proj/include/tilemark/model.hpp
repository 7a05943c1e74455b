#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tilemark/image.hpp"
#include "tilemark/model_blocks.hpp"

namespace tilemark {

enum class ModelKind { kBasicUNet, kImprovedUNet, kTransUNet };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// Common surface of the three segmentation networks: N x C x H x W input in
// [0, 1], N x 1 x H x W sigmoid probabilities out.
template <typename T>
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;

  virtual ModelKind kind() const = 0;
  virtual int in_channels() const = 0;
  virtual void declare(ParameterStore<T>& store) const = 0;
  // Raises ShapeError for spatial sizes the architecture cannot process.
  virtual void check_input(int height, int width) const = 0;
  virtual Var<T> forward(const ParameterStore<T>& store, const Var<T>& x,
                         const ForwardContext& ctx) const = 0;

  ParameterStore<T> make_parameters(std::uint64_t seed, bool allocate = true) const {
    ParameterStore<T> store(seed, allocate);
    declare(store);
    return store;
  }
};

// Stacks images into an N x C x H x W tensor scaled to [0, 1].
template <typename T>
Var<T> images_to_tensor(std::span<const Image> images);

// Inference-mode forward on a single image.
template <typename T>
ProbabilityMap predict(const SegmentationModel<T>& model, const ParameterStore<T>& store,
                       const Image& image);

}  // namespace tilemark
