#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "elegant/tensor.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named, ordered parameters of one network. Order is the checkpoint order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;

  // Value equality (names, shapes, bits); gradients ignored.
  bool same_values(const ParameterSet& other) const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace ELEGANT_ABI
}  // namespace elegant
