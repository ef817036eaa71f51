#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shelfnet/tensor/ops.hpp"

namespace shelfnet::train {

// Probability 0.7 on the true class marks an easy pixel.
inline const double kOhemThreshold = -std::log(0.7);

struct OhemConfig {
  double threshold = kOhemThreshold;
  // 0 selects the default of one sixteenth of the scored pixels.
  std::int64_t min_kept = 0;
};

// Flat indices (into the per-pixel loss map) that OHEM averages: every
// scored pixel with loss > threshold, or the min_kept hardest scored pixels
// when fewer pass. Ties at the cut keep the lower index.
std::vector<std::int64_t> ohem_select(std::span<const double> losses, std::span<const std::uint8_t> valid,
                                      double threshold, std::int64_t min_kept);

template <typename T>
Tensor<T> ohem_loss(const PixelLosses<T>& pixels, double threshold, std::int64_t min_kept);

enum class LossKind { cross_entropy, ohem };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

// Mean cross entropy or OHEM over logits and labels.
template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::int32_t> labels, LossKind kind,
                            const OhemConfig& ohem = {});

}  // namespace shelfnet::train
