#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "physattn/tensor.hpp"

namespace physattn {

/// A trainable tensor with its gradient slot. `has_grad` is set whenever a
/// backward pass reaches the parameter, even if the gradient is zero.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
};

/// Named, insertion-ordered parameter collection. Iteration order is the
/// insertion order and is what the checkpoint format serializes.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  /// Total number of scalar entries over all parameters.
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  void zero_grad();

  /// Values and names equal, gradients ignored.
  bool same_values(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace physattn
