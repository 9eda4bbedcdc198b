#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lightner/tensor.hpp"

namespace lightner {

struct Parameter {
  Parameter(std::string name_, Tensor value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), trainable(trainable_) {}

  std::string name;
  Tensor value;
  // Empty until a backward pass reaches this parameter while it is trainable.
  Tensor grad;
  bool trainable = true;

  bool has_grad() const noexcept { return !grad.empty(); }
  void zero_grad() { grad = Tensor(); }
  std::size_t numel() const noexcept { return value.size(); }
};

// Name-indexed owner of parameters. Addresses are stable for the store's
// lifetime, so layers keep raw Parameter* handles.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  // Throws DUPLICATE_PARAMETER if the name is taken.
  Parameter& add(std::string name, Tensor value, bool trainable = true);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);

  std::size_t size() const noexcept { return params_.size(); }
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lightner
