#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tilemark/parameters.hpp"

namespace tilemark {

enum class OptimizerKind { kAdam, kSgdMomentum };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;

  static OptimizerSpec adam() { return {}; }
  static OptimizerSpec sgd_momentum(double momentum = 0.9) {
    OptimizerSpec s;
    s.kind = OptimizerKind::kSgdMomentum;
    s.momentum = momentum;
    return s;
  }
  void validate() const;
};

// Named per-parameter moment buffers ("<param>#m", "<param>#v" for Adam,
// "<param>#velocity" for SGD) plus the step counter.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, std::vector<float>>> slots;

  bool operator==(const OptimizerState&) const = default;
};

// Updates trainable entries of a store in place from their accumulated
// gradients; buffers and entries without a gradient are skipped.
//
//   Adam: m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
//         p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//   SGD:  u = mu u + g,  p -= lr * u
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec);

  void step(ParameterStore<T>& store, double lr);

  const OptimizerSpec& spec() const { return spec_; }
  std::uint64_t steps() const { return steps_; }
  OptimizerState state() const;
  void load_state(const OptimizerState& state);

 private:
  std::vector<float>& slot(const std::string& name, std::size_t size);

  OptimizerSpec spec_;
  std::uint64_t steps_ = 0;
  std::vector<std::string> order_;
  // Moments are kept in single precision so saved state resumes exactly.
  std::unordered_map<std::string, std::vector<float>> slots_;
};

}  // namespace tilemark
