#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tilemark/autograd.hpp"

namespace tilemark {

enum class ParamKind {
  kTrainable,
  kBuffer,  // batch-norm running statistics; never touched by the optimizer
};

// Named model arrays in declaration order. A store built with allocate=false
// records names and shapes only, which is enough to count the parameters of
// configurations too large to materialize.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    ParamKind kind = ParamKind::kTrainable;
    Var<T> var;
  };

  explicit ParameterStore(std::uint64_t seed = 0, bool allocate = true);

  // He fan-in normal: N(0, 2 / fan_in).
  void add_he_normal(const std::string& name, Shape shape, int fan_in);
  void add_normal(const std::string& name, Shape shape, double stddev);
  void add_constant(const std::string& name, Shape shape, T value,
                    ParamKind kind = ParamKind::kTrainable);
  // Inserts an entry with explicit contents (used when loading checkpoints).
  void add_values(const std::string& name, Shape shape, ParamKind kind, std::vector<T> values);

  bool contains(const std::string& name) const;
  const Var<T>& get(const std::string& name) const;
  // As get(), but raises ConfigError when the stored shape differs.
  const Var<T>& get(const std::string& name, const Shape& expected) const;
  const Entry& entry(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool allocated() const { return allocate_; }

  void zero_grad();

  // Same names, shapes, and values at another precision.
  template <typename U>
  ParameterStore<U> convert() const {
    ParameterStore<U> out(0, allocate_);
    for (const auto& e : entries_) {
      std::vector<U> values;
      if (allocate_) values.assign(e.var.data().begin(), e.var.data().end());
      out.add_values(e.name, e.shape, e.kind, std::move(values));
    }
    return out;
  }

 private:
  void insert(const std::string& name, Shape shape, ParamKind kind, std::vector<T> values);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
  bool allocate_;
};

// Scalar count over trainable arrays; batch-norm running statistics excluded.
template <typename T>
std::size_t count_parameters(const ParameterStore<T>& store);

}  // namespace tilemark
