#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "shelfnet/arch/graph.hpp"
#include "shelfnet/tensor/parameters.hpp"
#include "shelfnet/tensor/tensor.hpp"

namespace shelfnet::arch {

struct InitPolicy {
  // Gamma of the last BN on every residual branch (S-block BN2, backbone
  // block's final BN). 0 turns each residual block into identity + ReLU.
  double residual_gamma = 1.0;
};

// Every input side must be a multiple of this.
inline constexpr int kInputDivisor = 32;

// A BlockGraph realized as tensor_core ops. Blocks run in topological order;
// a block's incoming edges pass through their transitions and are summed.
// The backbone classifier is counted by the cost model but never created
// here, since a segmentation forward does not use it.
template <typename T>
class ExecutableNet {
 public:
  ExecutableNet(BlockGraph graph, std::uint64_t seed, InitPolicy init = {});

  ExecutableNet(const ExecutableNet&) = delete;
  ExecutableNet& operator=(const ExecutableNet&) = delete;

  // images (n, 3, h, w) -> logits (n, num_classes, h, w).
  Tensor<T> forward(const Tensor<T>& images, Mode mode);

  const BlockGraph& graph() const { return graph_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  // Output of `block` from the most recent forward.
  const Tensor<T>& output(const std::string& block) const;

  // Dropout draws depend on (seed, forward counter, block); the counter
  // advances once per train-mode forward. Both are part of checkpoints;
  // changing the seed after construction only affects dropout.
  std::uint64_t forward_counter() const { return forward_counter_; }
  void set_forward_counter(std::uint64_t c) { forward_counter_ = c; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

 private:
  struct LayerState {
    const LayerSpec* spec = nullptr;
    Tensor<T> weight;
    Tensor<T> gamma;
    Tensor<T> beta;
    BatchNormState<T>* stats = nullptr;
  };

  void create_layers(const std::string& owner, const std::vector<LayerSpec>& layers, bool residual_owner);
  const LayerState& layer(const std::string& owner, const std::string& name) const;
  bool has_layer(const std::string& owner, const std::string& name) const;

  Tensor<T> apply(const std::string& owner, const LayerSpec& spec, const Tensor<T>& x, Mode mode);
  Tensor<T> apply(const std::string& owner, const std::string& name, const Tensor<T>& x, Mode mode);
  Tensor<T> run_sequence(const std::string& owner, const std::vector<LayerSpec>& layers, const Tensor<T>& x,
                         Mode mode, bool final_relu);
  Tensor<T> residual_block(const std::string& owner, const std::string& prefix, const Tensor<T>& x, Mode mode);
  Tensor<T> backbone_stage(const Block& b, const Tensor<T>& x, Mode mode);
  Tensor<T> s_block(const Block& b, const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed);
  Tensor<T> lw_up_block(const Block& b, const Tensor<T>& x, Mode mode);

  BlockGraph graph_;
  std::uint64_t seed_;
  InitPolicy init_;
  ParameterStore<T> store_;
  std::map<std::string, LayerState> layers_;
  std::map<std::string, Tensor<T>> outputs_;
  std::uint64_t forward_counter_ = 0;
};

extern template class ExecutableNet<float>;
extern template class ExecutableNet<double>;

}  // namespace shelfnet::arch
