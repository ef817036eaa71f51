#include "shelfnet/tensor/optim.hpp"

#include "shelfnet/errors.hpp"

namespace shelfnet {

template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, const SgdConfig& config) {
  if (!(config.lr >= 0.0)) throw ConfigError("sgd: learning rate must be >= 0");
  if (grads.size() != weights.size() || velocity.size() != weights.size())
    throw ShapeError("sgd: parameter, gradient and velocity sizes differ");
  const T lr = static_cast<T>(config.lr);
  const T mom = static_cast<T>(config.momentum);
  const T wd = static_cast<T>(config.weight_decay);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = mom * velocity[i] + (grads[i] + wd * weights[i]);
    weights[i] -= lr * velocity[i];
  }
}

template <typename T>
void SgdOptimizer<T>::step(const SgdConfig& config) {
  for (auto& [name, tensor] : store_->unique()) {
    auto& v = velocity_[name];
    if (v.empty()) v.assign(static_cast<std::size_t>(tensor.numel()), T(0));
    const auto g = tensor.grad();
    sgd_step<T>(tensor.mutable_values(), g, v, config);
  }
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<float>, const SgdConfig&);
template void sgd_step<double>(std::span<double>, std::span<const double>, std::span<double>, const SgdConfig&);
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace shelfnet
