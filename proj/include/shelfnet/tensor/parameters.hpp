#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shelfnet/tensor/ops.hpp"
#include "shelfnet/tensor/tensor.hpp"

namespace shelfnet {

// A named trainable tensor. Parameters registered under the same sharing
// group alias one tensor, so every use site accumulates into one gradient.
template <typename T>
struct Parameter {
  std::string id;
  Tensor<T> tensor;
  std::optional<std::string> sharing_group;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Running statistics are state, not parameters: they are checkpointed but
// never touched by the optimizer.
template <typename T>
struct NamedBatchNormState {
  std::string name;
  BatchNormState<T>* state;
};

template <typename T>
class ParameterStore {
 public:
  // Registers `id`. When `group` names an existing group the returned tensor
  // aliases that group's storage (shapes must agree).
  Tensor<T> create(const std::string& id, Shape shape, std::optional<std::string> group = std::nullopt);

  const std::vector<Parameter<T>>& registrations() const { return params_; }
  // One entry per distinct storage, keyed by the group name when shared.
  std::vector<NamedTensor<T>> unique() const;
  const Parameter<T>& find(const std::string& id) const;
  std::int64_t unique_count() const;  // total scalar count over distinct storage
  void zero_grad();

  BatchNormState<T>& create_state(const std::string& name, std::int64_t channels);
  std::vector<NamedBatchNormState<T>> states();

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, std::size_t> group_owner_;
  std::vector<std::pair<std::string, std::unique_ptr<BatchNormState<T>>>> states_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace shelfnet
