#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "stnet/tensor.hpp"

namespace stnet {

// Named parameter arrays. Non-trainable entries hold buffers such as
// batch-norm running statistics. Iteration order is lexicographic by name,
// which fixes serialization and optimizer update order.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable = true);
  void set(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return entries_.contains(name); }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool trainable(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Number of scalar values; trainable entries only unless `all`.
  std::int64_t count(bool all = false) const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [name, e] : a.entries_) {
      auto it = b.entries_.find(name);
      if (it == b.entries_.end() || it->second.trainable != e.trainable || !bitwise_equal(it->second.value, e.value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::map<std::string, Entry> entries_;
};

template <typename T>
using GradSet = std::map<std::string, Tensor<T>>;

// Directory layout: manifest.json mapping name -> {dtype, shape, file,
// trainable}, plus one raw little-endian row-major blob per parameter.
template <typename T>
void save_params(const ParamSet<T>& params, const std::filesystem::path& dir);

// Loads into dtype T, converting when the stored dtype differs.
template <typename T>
ParamSet<T> load_params(const std::filesystem::path& dir);

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace stnet
