#include "shelfnet/tensor/parameters.hpp"

#include <algorithm>
#include <set>

#include "shelfnet/errors.hpp"

namespace shelfnet {

template <typename T>
Tensor<T> ParameterStore<T>::create(const std::string& id, Shape shape, std::optional<std::string> group) {
  if (by_id_.count(id)) throw ConfigError("duplicate parameter id '" + id + "'");
  Tensor<T> tensor;
  if (group) {
    auto it = group_owner_.find(*group);
    if (it != group_owner_.end()) {
      tensor = params_[it->second].tensor;
      if (!(tensor.shape() == shape))
        throw ShapeError("sharing group '" + *group + "' holds " + tensor.shape().str() + ", requested " +
                         shape.str());
    }
  }
  if (!tensor.defined()) {
    tensor = Tensor<T>(shape);
    tensor.set_requires_grad(true);
    if (group) group_owner_[*group] = params_.size();
  }
  by_id_[id] = params_.size();
  params_.push_back(Parameter<T>{id, tensor, std::move(group)});
  return tensor;
}

template <typename T>
std::vector<NamedTensor<T>> ParameterStore<T>::unique() const {
  std::vector<NamedTensor<T>> out;
  std::set<std::string> groups;
  for (const auto& p : params_) {
    if (p.sharing_group) {
      if (!groups.insert(*p.sharing_group).second) continue;
      out.push_back({*p.sharing_group, p.tensor});
    } else {
      out.push_back({p.id, p.tensor});
    }
  }
  return out;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw NotFoundError("no parameter '" + id + "'");
  return params_[it->second];
}

template <typename T>
std::int64_t ParameterStore<T>::unique_count() const {
  std::int64_t total = 0;
  for (const auto& p : unique()) total += p.tensor.numel();
  return total;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
BatchNormState<T>& ParameterStore<T>::create_state(const std::string& name, std::int64_t channels) {
  for (const auto& [n, s] : states_)
    if (n == name) throw ConfigError("duplicate state '" + name + "'");
  states_.emplace_back(name, std::make_unique<BatchNormState<T>>(channels));
  return *states_.back().second;
}

template <typename T>
std::vector<NamedBatchNormState<T>> ParameterStore<T>::states() {
  std::vector<NamedBatchNormState<T>> out;
  out.reserve(states_.size());
  for (auto& [n, s] : states_) out.push_back({n, s.get()});
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace shelfnet
