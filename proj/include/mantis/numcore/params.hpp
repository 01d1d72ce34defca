#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/numcore/tensor.hpp"

namespace mantis {

// Ordered, named collection of learnable tensors. Order is insertion order
// and is the order used by optimizers and serialization.
template <class T = float>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T>& add(std::string name, Shape shape, T fill = T(0), bool trainable = true) {
    if (index_.contains(name)) throw ArgumentError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), Tensor<T>(std::move(shape), fill, trainable)});
    return entries_.back().tensor;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  Tensor<T>& get(std::string_view name) { return entries_[index_of(name)].tensor; }
  const Tensor<T>& get(std::string_view name) const { return entries_[index_of(name)].tensor; }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw LookupError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& e : entries_) e.tensor.requires_grad = on;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      auto& t = out.add(e.name, e.tensor.shape, U(0), e.tensor.requires_grad);
      t.data.assign(e.tensor.data.begin(), e.tensor.data.end());
    }
    return out;
  }

  // Zero tensors shaped like each parameter.
  std::vector<Tensor<T>> zeros_like() const {
    std::vector<Tensor<T>> z;
    z.reserve(entries_.size());
    for (const auto& e : entries_) z.emplace_back(e.tensor.shape);
    return z;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || !(a[i].tensor == b[i].tensor)) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mantis
