#pragma once

#include <span>
#include <vector>

#include "shelfnet/arch/network.hpp"

namespace shelfnet::train {

// Mean of per-scale softmax maps at the input resolution, (n, K, h, w).
// Each scaled input is zero-padded at the bottom/right to a multiple of
// the network stride and the logits are cropped back before the softmax.
// With `flip`, every scale is also run on the mirrored image.
template <typename T>
Tensor<T> multi_scale_predict(arch::ExecutableNet<T>& net, const Tensor<T>& images, std::span<const double> scales,
                              bool flip);

// Whole-image protocol used for validation: scales 0.5 to 2 in steps of 0.25.
std::vector<double> recipe_scales();

}  // namespace shelfnet::train
