#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shelfnet/tensor/ops.hpp"

namespace shelfnet::train {

// counts[t * K + p]: pixels of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes, int ignore_index = kIgnoreIndex);

  // Pixels whose truth is ignore_index are skipped; any other value must
  // lie in [0, K) for both maps.
  void update(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);

  int num_classes() const { return k_; }
  std::uint64_t at(int truth, int predicted) const;
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  // tp / (tp + fp + fn); negative for classes absent from truth and prediction.
  std::vector<double> class_iou() const;
  // Mean over classes present in truth or prediction; 0 when nothing scored.
  double miou() const;
  double pixel_accuracy() const;

 private:
  int k_;
  int ignore_;
  std::vector<std::uint64_t> counts_;
};

}  // namespace shelfnet::train
