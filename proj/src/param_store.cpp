#include "physattn/param_store.hpp"

#include "physattn/error.hpp"

namespace physattn {

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Tensor grad(value.shape());
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), false});
  return params_.back();
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

Parameter& ParamStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return params_[it->second];
}

const Parameter& ParamStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(0.0);
    p.has_grad = false;
  }
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || !(params_[i].value == other.params_[i].value)) return false;
  }
  return true;
}

}  // namespace physattn
