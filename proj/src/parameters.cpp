#include "elegant/parameters.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

std::size_t ParameterSet::add(std::string name, Shape shape) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  Tensor value(shape);
  Tensor grad(std::move(shape));
  params_.push_back({std::move(name), std::move(value), std::move(grad)});
  return params_.size() - 1;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name != other.params_[i].name || !(params_[i].value == other.params_[i].value)) return false;
  return true;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
