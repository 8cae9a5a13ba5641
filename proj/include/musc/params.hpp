#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "musc/tensor.hpp"

namespace musc {

// Named, ordered collection of trainable tensors. Registration order is the
// checkpoint order and the gradient reduction order.
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> init, std::string group = {}) {
    require(!index_.contains(name), "ParamStore: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(group), std::move(init), false});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  const std::string& group(std::size_t i) const { return entries_.at(i).group; }
  Tensor<T>& tensor(std::size_t i) { return entries_.at(i).value; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_.at(i).value; }
  bool frozen(std::size_t i) const { return entries_.at(i).frozen; }
  void set_frozen(std::size_t i, bool f) { entries_.at(i).frozen = f; }

  // Freezes every parameter whose group equals `group`.
  void freeze_group(const std::string& group, bool f = true) {
    for (auto& e : entries_)
      if (e.group == group) e.frozen = f;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  struct Entry {
    std::string name;
    std::string group;
    Tensor<T> value;
    bool frozen;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One gradient slot per parameter, same shapes as the store.
template <class T>
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore<T>& store) {
    slots_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) slots_.emplace_back(store.tensor(i).size(), T(0));
  }

  std::size_t size() const { return slots_.size(); }
  std::vector<T>& operator[](std::size_t i) { return slots_[i]; }
  const std::vector<T>& operator[](std::size_t i) const { return slots_[i]; }

  void zero() {
    for (auto& s : slots_) std::fill(s.begin(), s.end(), T(0));
  }

  void add(const GradBuffer& other) {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      for (std::size_t j = 0; j < slots_[i].size(); ++j) slots_[i][j] += other.slots_[i][j];
  }

  void scale(T c) {
    for (auto& s : slots_)
      for (T& v : s) v *= c;
  }

  double norm(std::size_t i) const {
    double acc = 0;
    for (T v : slots_[i]) acc += double(v) * double(v);
    return std::sqrt(acc);
  }

 private:
  std::vector<std::vector<T>> slots_;
};

}  // namespace musc
