#include "tilemark/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "tilemark/error.hpp"

namespace tilemark {

template <typename T>
ParameterStore<T>::ParameterStore(std::uint64_t seed, bool allocate)
    : rng_(seed), allocate_(allocate) {}

template <typename T>
void ParameterStore<T>::insert(const std::string& name, Shape shape, ParamKind kind,
                               std::vector<T> values) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Entry e{name, shape, kind, {}};
  if (allocate_) {
    e.var = Var<T>::leaf(std::move(shape), std::move(values), kind == ParamKind::kTrainable);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
}

template <typename T>
void ParameterStore<T>::add_he_normal(const std::string& name, Shape shape, int fan_in) {
  add_normal(name, std::move(shape), std::sqrt(2.0 / std::max(fan_in, 1)));
}

template <typename T>
void ParameterStore<T>::add_normal(const std::string& name, Shape shape, double stddev) {
  std::vector<T> values;
  if (allocate_) {
    values.resize(shape_numel(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : values) v = static_cast<T>(dist(rng_));
  }
  insert(name, std::move(shape), ParamKind::kTrainable, std::move(values));
}

template <typename T>
void ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value,
                                     ParamKind kind) {
  std::vector<T> values;
  if (allocate_) values.assign(shape_numel(shape), value);
  insert(name, std::move(shape), kind, std::move(values));
}

template <typename T>
void ParameterStore<T>::add_values(const std::string& name, Shape shape, ParamKind kind,
                                   std::vector<T> values) {
  insert(name, std::move(shape), kind, std::move(values));
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

template <typename T>
const typename ParameterStore<T>::Entry& ParameterStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter: " + name);
  return entries_[it->second];
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name) const {
  const Entry& e = entry(name);
  if (!allocate_) throw ConfigError("parameter store holds shapes only: " + name);
  return e.var;
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name, const Shape& expected) const {
  const Entry& e = entry(name);
  if (e.shape != expected) {
    throw ConfigError("parameter " + name + " has shape " + shape_string(e.shape) +
                      ", expected " + shape_string(expected));
  }
  return get(name);
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  if (!allocate_) return;
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
std::size_t count_parameters(const ParameterStore<T>& store) {
  std::size_t total = 0;
  for (const auto& e : store.entries()) {
    if (e.kind == ParamKind::kTrainable) total += shape_numel(e.shape);
  }
  return total;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template std::size_t count_parameters(const ParameterStore<float>&);
template std::size_t count_parameters(const ParameterStore<double>&);

}  // namespace tilemark
