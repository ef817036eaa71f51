#include "shelfnet/arch/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "shelfnet/arch/serialize.hpp"
#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/ops.hpp"
#include "shelfnet/tensor/random.hpp"

namespace shelfnet::arch {

namespace {

std::string key(const std::string& owner, const std::string& name) { return owner + "." + name; }

bool is_residual_tail(const std::string& name, const Block* block) {
  if (block == nullptr) return false;
  if (block->kind == BlockKind::s_block) return name == "bn2";
  if (block->kind != BlockKind::backbone_stage) return false;
  const bool bottleneck = std::any_of(block->layers.begin(), block->layers.end(),
                                       [](const LayerSpec& l) { return l.name.ends_with(".conv3"); });
  return name.ends_with(bottleneck ? ".bn3" : ".bn2") && name.starts_with("layer");
}

}  // namespace

template <typename T>
ExecutableNet<T>::ExecutableNet(BlockGraph graph, std::uint64_t seed, InitPolicy init)
    : graph_(std::move(graph)), seed_(seed), init_(init) {
  graph_.validate();
  const Variant v = graph_.spec.variant;
  if (v == Variant::shelfnet_simplified || v == Variant::gridnet_simplified)
    throw ConfigError("comparison graphs carry no layers and cannot be instantiated");
  for (const auto& b : graph_.blocks()) create_layers(b.name(), b.layers, true);
  for (const auto& e : graph_.edges()) create_layers(e.name(), e.layers, false);
}

template <typename T>
void ExecutableNet<T>::create_layers(const std::string& owner, const std::vector<LayerSpec>& layers,
                                     bool block_owner) {
  const Block* block = block_owner ? &graph_.block(owner) : nullptr;
  for (const auto& spec : layers) {
    LayerState st;
    st.spec = &spec;
    const std::string id = key(owner, spec.name);
    switch (spec.kind) {
      case LayerKind::conv:
      case LayerKind::conv_transpose: {
        const Shape shape = spec.kind == LayerKind::conv ? Shape{spec.out_c, spec.in_c, spec.kernel, spec.kernel}
                                                          : Shape{spec.in_c, spec.out_c, spec.kernel, spec.kernel};
        std::optional<std::string> group;
        if (!spec.sharing_group.empty()) group = spec.sharing_group;
        st.weight = store_.create(id + ".weight", shape, group);
        // Kaiming normal, fan-out mode. Seeded by storage name so shared
        // kernels get one draw regardless of which site registers first.
        std::mt19937_64 rng(mix_seed(seed_, fnv1a64(group ? *group : id)));
        const double sd = std::sqrt(2.0 / static_cast<double>(spec.out_c * spec.kernel * spec.kernel));
        for (auto& w : st.weight.mutable_values()) w = static_cast<T>(sd * standard_normal(rng));
        break;
      }
      case LayerKind::batch_norm: {
        const Shape shape{1, spec.out_c, 1, 1};
        st.gamma = store_.create(id + ".gamma", shape);
        st.beta = store_.create(id + ".beta", shape);
        const double g = is_residual_tail(spec.name, block) ? init_.residual_gamma : 1.0;
        for (auto& x : st.gamma.mutable_values()) x = static_cast<T>(g);
        st.stats = &store_.create_state(id, spec.out_c);
        break;
      }
      case LayerKind::linear:
        continue;  // classifier only; see class comment
      case LayerKind::max_pool:
      case LayerKind::bilinear_upsample:
      case LayerKind::global_avg_pool:
        break;
    }
    layers_.emplace(id, st);
  }
}

template <typename T>
bool ExecutableNet<T>::has_layer(const std::string& owner, const std::string& name) const {
  return layers_.count(key(owner, name)) != 0;
}

template <typename T>
const typename ExecutableNet<T>::LayerState& ExecutableNet<T>::layer(const std::string& owner,
                                                                     const std::string& name) const {
  auto it = layers_.find(key(owner, name));
  if (it == layers_.end()) throw NotFoundError("no layer " + key(owner, name));
  return it->second;
}

template <typename T>
Tensor<T> ExecutableNet<T>::apply(const std::string& owner, const std::string& name, const Tensor<T>& x, Mode mode) {
  return apply(owner, *layer(owner, name).spec, x, mode);
}

template <typename T>
Tensor<T> ExecutableNet<T>::apply(const std::string& owner, const LayerSpec& spec, const Tensor<T>& x, Mode mode) {
  const LayerState& st = layer(owner, spec.name);
  switch (spec.kind) {
    case LayerKind::conv:
      return conv2d(x, st.weight, spec.stride, spec.padding, spec.dilation);
    case LayerKind::conv_transpose:
      return conv_transpose2d(x, st.weight, spec.stride, spec.padding, spec.output_padding);
    case LayerKind::batch_norm:
      return batch_norm(x, st.gamma, st.beta, *st.stats, mode);
    case LayerKind::max_pool:
      return max_pool2d(x, spec.kernel, spec.stride, spec.padding);
    case LayerKind::bilinear_upsample:
      return bilinear_upsample(x, spec.kernel);
    case LayerKind::global_avg_pool:
      return global_avg_pool(x);
    case LayerKind::linear:
      break;
  }
  throw UsageError("layer " + key(owner, spec.name) + " is not executable");
}

template <typename T>
Tensor<T> ExecutableNet<T>::run_sequence(const std::string& owner, const std::vector<LayerSpec>& layers,
                                         const Tensor<T>& x, Mode mode, bool final_relu) {
  Tensor<T> y = x;
  for (const auto& l : layers) y = apply(owner, l, y, mode);
  return final_relu ? relu(y) : y;
}

template <typename T>
Tensor<T> ExecutableNet<T>::residual_block(const std::string& owner, const std::string& p, const Tensor<T>& x,
                                           Mode mode) {
  Tensor<T> y = relu(apply(owner, p + "bn1", apply(owner, p + "conv1", x, mode), mode));
  y = apply(owner, p + "bn2", apply(owner, p + "conv2", y, mode), mode);
  if (has_layer(owner, p + "conv3")) y = apply(owner, p + "bn3", apply(owner, p + "conv3", relu(y), mode), mode);
  Tensor<T> shortcut = x;
  if (has_layer(owner, p + "downsample.conv"))
    shortcut = apply(owner, p + "downsample.bn", apply(owner, p + "downsample.conv", x, mode), mode);
  return relu(add(y, shortcut));
}

template <typename T>
Tensor<T> ExecutableNet<T>::backbone_stage(const Block& b, const Tensor<T>& x, Mode mode) {
  const std::string owner = b.name();
  Tensor<T> y = x;
  const int stage = level_index(b.id.level);
  if (stage == 0) {
    y = relu(apply(owner, "stem.bn", apply(owner, "stem.conv", y, mode), mode));
    y = apply(owner, "stem.pool", y, mode);
  }
  const int blocks = graph_.spec.backbone.blocks[static_cast<std::size_t>(stage)];
  for (int i = 0; i < blocks; ++i)
    y = residual_block(owner, "layer" + std::to_string(stage + 1) + "." + std::to_string(i) + ".", y, mode);
  return y;
}

template <typename T>
Tensor<T> ExecutableNet<T>::s_block(const Block& b, const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed) {
  const std::string owner = b.name();
  Tensor<T> y = relu(apply(owner, "bn1", apply(owner, "conv1", x, mode), mode));
  y = dropout(y, graph_.spec.dropout, mode, dropout_seed);
  y = apply(owner, "bn2", apply(owner, "conv2", y, mode), mode);
  return relu(add(x, y));
}

template <typename T>
Tensor<T> ExecutableNet<T>::lw_up_block(const Block& b, const Tensor<T>& x, Mode mode) {
  const std::string owner = b.name();
  Tensor<T> y = relu(apply(owner, "bn", apply(owner, "conv", x, mode), mode));
  Tensor<T> gate = sigmoid(apply(owner, "attention", apply(owner, "pool", y, mode), mode));
  return channel_scale(y, gate);
}

template <typename T>
Tensor<T> ExecutableNet<T>::forward(const Tensor<T>& images, Mode mode) {
  const Shape s = images.shape();
  if (s.c != 3) throw InputError("expected 3-channel images, got " + s.str());
  if (s.h % kInputDivisor != 0 || s.w % kInputDivisor != 0 || s.h == 0 || s.w == 0)
    throw InputError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " is not divisible by " +
                     std::to_string(kInputDivisor));

  outputs_.clear();
  const std::uint64_t pass_seed = mix_seed(seed_, forward_counter_);
  if (mode == Mode::train) ++forward_counter_;

  for (const auto& name : graph_.topological_order()) {
    const Block& b = graph_.block(name);
    Tensor<T> in;
    if (name == graph_.source) {
      in = images;
    } else {
      for (const Edge* e : graph_.in_edges(name)) {
        Tensor<T> v = run_sequence(e->name(), e->layers, outputs_.at(e->from), mode,
                                   e->transition != Transition::none);
        in = in.defined() ? add(in, v) : v;
      }
    }
    Tensor<T> out;
    switch (b.kind) {
      case BlockKind::backbone_stage:
        out = backbone_stage(b, in, mode);
        break;
      case BlockKind::channel_reduce:
        out = run_sequence(name, b.layers, in, mode, true);
        break;
      case BlockKind::s_block:
        out = s_block(b, in, mode, mix_seed(pass_seed, graph_.block_index(name)));
        break;
      case BlockKind::relay:
        out = in;
        break;
      case BlockKind::head:
        out = run_sequence(name, b.layers, in, mode, false);
        break;
      case BlockKind::lw_up_block:
        out = lw_up_block(b, in, mode);
        break;
    }
    outputs_[name] = out;
  }
  return outputs_.at(graph_.sink);
}

template <typename T>
const Tensor<T>& ExecutableNet<T>::output(const std::string& block) const {
  auto it = outputs_.find(block);
  if (it == outputs_.end()) throw NotFoundError("no cached output for block '" + block + "'");
  return it->second;
}

template class ExecutableNet<float>;
template class ExecutableNet<double>;

}  // namespace shelfnet::arch
