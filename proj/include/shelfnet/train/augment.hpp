#pragma once

#include <cstdint>

#include "shelfnet/train/data.hpp"

namespace shelfnet::train {

// One random geometric transform per sample: horizontal flip, isotropic
// scale, rotation about the scaled image center, then a crop. Pixels that
// fall outside the source are padded with 0 (image) and the ignore index
// (labels).
struct AugmentPolicy {
  double flip_prob = 0.5;
  bool force_flip = false;  // flip every sample regardless of flip_prob
  double scale_min = 1.0;
  double scale_max = 1.0;
  double rotation_deg = 0.0;  // angle drawn from [-rotation_deg, rotation_deg]
  std::int64_t crop_h = 0;    // 0 keeps the input size
  std::int64_t crop_w = 0;
};

void validate(const AugmentPolicy& policy);

// Training recipe: flip, scale in [0.5, 2], rotation within 10 degrees.
AugmentPolicy recipe_policy(std::int64_t crop_h, std::int64_t crop_w);

// Images are resampled bilinearly and labels by nearest neighbour through
// the same inverse map. Sample i draws from mix_seed(seed, i).
SampleBatch augment(const SampleBatch& batch, std::uint64_t seed, const AugmentPolicy& policy);

}  // namespace shelfnet::train
