#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drift/nn/tensor.hpp"

namespace drift::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;  // false for buffers such as batch-norm running stats
};

// Ordered, named parameter collection. Indices are stable for the lifetime of
// the store and double as parameter ids in Gradients and AdamState.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool trainable = true) {
    require(!find(name).has_value(), ErrorKind::Config, "duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_.at(i); }
  const Parameter<T>& operator[](std::size_t i) const { return entries_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    auto idx = find(name);
    if (!idx) fail(ErrorKind::Config, "unknown parameter: " + std::string(name));
    return *idx;
  }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (!trainable_only || e.trainable) n += e.value.size();
    }
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

 private:
  std::vector<Parameter<T>> entries_;
};

// Parameter id -> gradient tensor. Entries for buffers stay empty.
template <typename T>
struct Gradients {
  std::vector<Tensor<T>> by_param;

  Tensor<T>& operator[](std::size_t i) { return by_param.at(i); }
  const Tensor<T>& operator[](std::size_t i) const { return by_param.at(i); }
  std::size_t size() const noexcept { return by_param.size(); }
};

}  // namespace drift::nn
