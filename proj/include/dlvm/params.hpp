// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dlvm/tensor.hpp"

namespace dlvm {

// Named, ordered collection of trainable tensors. Insertion order is the
// canonical parameter order used by the optimizer, gradient checks and
// checkpoint files. Tensor addresses are stable for the store's lifetime.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (by_name_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    auto owned = std::make_unique<Tensor>(std::move(t));
    owned->require_grad();
    Tensor& ref = *owned;
    by_name_.emplace(name, std::move(owned));
    names_.push_back(name);
    return ref;
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return names_.size(); }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& name : names_) n += get(name).size();
    return n;
  }

  void zero_grad() {
    for (const auto& name : names_) get(name).zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::unique_ptr<Tensor>> by_name_;
};

}  // namespace dlvm
