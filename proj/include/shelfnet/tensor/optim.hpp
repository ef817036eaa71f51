#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "shelfnet/tensor/parameters.hpp"

namespace shelfnet {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, const SgdConfig& config);

// Momentum SGD over the distinct tensors of a ParameterStore. Velocity
// buffers are keyed by the unique parameter name.
template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(ParameterStore<T>& store) : store_(&store) {}

  void step(const SgdConfig& config);
  std::map<std::string, std::vector<T>>& velocity() { return velocity_; }
  const std::map<std::string, std::vector<T>>& velocity() const { return velocity_; }

 private:
  ParameterStore<T>* store_;
  std::map<std::string, std::vector<T>> velocity_;
};

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;

}  // namespace shelfnet
