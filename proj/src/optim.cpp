#include "tilemark/optim.hpp"

#include <cmath>

#include "tilemark/error.hpp"

namespace tilemark {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgdMomentum;
  throw ConfigError("unknown optimizer '" + name + "' (adam|sgd)");
}

void OptimizerSpec::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerSpec spec) : spec_(spec) {
  spec_.validate();
}

template <typename T>
std::vector<float>& Optimizer<T>::slot(const std::string& name, std::size_t size) {
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    order_.push_back(name);
    it = slots_.emplace(name, std::vector<float>(size, 0.0f)).first;
  }
  if (it->second.size() != size) throw CheckpointError("optimizer slot size mismatch: " + name);
  return it->second;
}

template <typename T>
void Optimizer<T>::step(ParameterStore<T>& store, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and >= 0");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(spec_.beta1, t);
  const double c2 = 1.0 - std::pow(spec_.beta2, t);
  for (const auto& e : store.entries()) {
    if (e.kind != ParamKind::kTrainable) continue;
    Var<T> p = e.var;
    if (!p.has_grad()) continue;
    auto values = p.mutable_data();
    const auto grad = p.grad();
    if (spec_.kind == OptimizerKind::kAdam) {
      auto& m = slot(e.name + "#m", values.size());
      auto& v = slot(e.name + "#v", values.size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(spec_.beta1 * m[i] + (1.0 - spec_.beta1) * g);
        v[i] = static_cast<float>(spec_.beta2 * v[i] + (1.0 - spec_.beta2) * g * g);
        values[i] -= static_cast<T>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + spec_.epsilon));
      }
    } else {
      auto& u = slot(e.name + "#velocity", values.size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        u[i] = static_cast<float>(spec_.momentum * u[i] + grad[i]);
        values[i] -= static_cast<T>(lr * u[i]);
      }
    }
  }
}

template <typename T>
OptimizerState Optimizer<T>::state() const {
  OptimizerState s;
  s.step = steps_;
  for (const auto& name : order_) {
    s.slots.emplace_back(name, slots_.at(name));
  }
  return s;
}

template <typename T>
void Optimizer<T>::load_state(const OptimizerState& state) {
  steps_ = state.step;
  order_.clear();
  slots_.clear();
  for (const auto& [name, values] : state.slots) {
    order_.push_back(name);
    slots_.emplace(name, values);
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace tilemark
