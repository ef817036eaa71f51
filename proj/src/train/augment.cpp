#include "shelfnet/train/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/ops.hpp"
#include "shelfnet/tensor/random.hpp"

namespace shelfnet::train {

void validate(const AugmentPolicy& p) {
  if (!(p.flip_prob >= 0.0 && p.flip_prob <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(p.scale_min > 0.0 && p.scale_min <= p.scale_max)) throw ConfigError("scale range must satisfy 0 < min <= max");
  if (!(p.rotation_deg >= 0.0 && p.rotation_deg < 180.0)) throw ConfigError("rotation must lie in [0, 180)");
  if (p.crop_h < 0 || p.crop_w < 0) throw ConfigError("crop size must be non-negative");
}

AugmentPolicy recipe_policy(std::int64_t crop_h, std::int64_t crop_w) {
  AugmentPolicy p;
  p.scale_min = 0.5;
  p.scale_max = 2.0;
  p.rotation_deg = 10.0;
  p.crop_h = crop_h;
  p.crop_w = crop_w;
  return p;
}

namespace {

// Inverse map from output pixel to source coordinates (pixel centres at
// integers).
struct InverseMap {
  bool flip = false;
  double scale = 1.0;
  double cos_t = 1.0, sin_t = 0.0;
  bool rotate = false;
  double cx = 0, cy = 0;    // rotation centre in scaled coordinates
  double off_x = 0, off_y = 0;
  std::int64_t src_w = 0;

  void apply(std::int64_t u, std::int64_t v, double& sx, double& sy) const {
    double x = static_cast<double>(u) + off_x, y = static_cast<double>(v) + off_y;
    if (rotate) {
      const double dx = x - cx, dy = y - cy;
      x = cx + cos_t * dx + sin_t * dy;
      y = cy - sin_t * dx + cos_t * dy;
    }
    if (scale != 1.0) {
      x = (x + 0.5) / scale - 0.5;
      y = (y + 0.5) / scale - 0.5;
    }
    if (flip) x = static_cast<double>(src_w - 1) - x;
    sx = x;
    sy = y;
  }
};

}  // namespace

SampleBatch augment(const SampleBatch& batch, std::uint64_t seed, const AugmentPolicy& policy) {
  validate(policy);
  const std::int64_t H = batch.h, W = batch.w;
  const std::int64_t oh = policy.crop_h ? policy.crop_h : H, ow = policy.crop_w ? policy.crop_w : W;
  SampleBatch out;
  out.n = batch.n;
  out.h = oh;
  out.w = ow;
  out.images.assign(static_cast<std::size_t>(batch.n * 3 * oh * ow), 0.0f);
  out.labels.assign(static_cast<std::size_t>(batch.n * oh * ow), kIgnoreIndex);
  out.provenance = batch.provenance;

  for (std::int64_t i = 0; i < batch.n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    InverseMap m;
    m.src_w = W;
    const double flip_draw = uniform01(rng);
    m.flip = policy.force_flip || flip_draw < policy.flip_prob;
    m.scale = policy.scale_min == policy.scale_max ? policy.scale_min : uniform(rng, policy.scale_min, policy.scale_max);
    const double angle = policy.rotation_deg > 0 ? uniform(rng, -policy.rotation_deg, policy.rotation_deg) : 0.0;
    if (angle != 0.0) {
      const double t = angle * 3.141592653589793 / 180.0;
      m.rotate = true;
      m.cos_t = std::cos(t);
      m.sin_t = std::sin(t);
    }
    const auto sh = static_cast<std::int64_t>(std::lround(H * m.scale));
    const auto sw = static_cast<std::int64_t>(std::lround(W * m.scale));
    m.cx = 0.5 * static_cast<double>(sw - 1);
    m.cy = 0.5 * static_cast<double>(sh - 1);
    // Crop offsets: inside the scaled image when it is large enough,
    // otherwise the scaled image lands at a random place inside the crop.
    auto offset = [&](std::int64_t scaled, std::int64_t crop) -> double {
      if (scaled == crop) return 0.0;
      const std::int64_t lo = std::min<std::int64_t>(0, scaled - crop), hi = std::max<std::int64_t>(0, scaled - crop);
      return static_cast<double>(lo + static_cast<std::int64_t>(uniform01(rng) * static_cast<double>(hi - lo + 1)));
    };
    m.off_y = offset(sh, oh);
    m.off_x = offset(sw, ow);

    const float* img = batch.images.data() + i * 3 * H * W;
    const std::int32_t* lab = batch.labels.data() + i * H * W;
    float* oimg = out.images.data() + i * 3 * oh * ow;
    std::int32_t* olab = out.labels.data() + i * oh * ow;
    for (std::int64_t v = 0; v < oh; ++v)
      for (std::int64_t u = 0; u < ow; ++u) {
        double sx, sy;
        m.apply(u, v, sx, sy);
        const auto nx = static_cast<std::int64_t>(std::floor(sx + 0.5)), ny = static_cast<std::int64_t>(std::floor(sy + 0.5));
        if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;  // padding
        olab[v * ow + u] = lab[ny * W + nx];

        const auto x0 = static_cast<std::int64_t>(std::floor(sx)), y0 = static_cast<std::int64_t>(std::floor(sy));
        const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
        auto clampx = [&](std::int64_t x) { return std::clamp<std::int64_t>(x, 0, W - 1); };
        auto clampy = [&](std::int64_t y) { return std::clamp<std::int64_t>(y, 0, H - 1); };
        const std::int64_t xa = clampx(x0), xb = clampx(x0 + 1), ya = clampy(y0), yb = clampy(y0 + 1);
        for (int c = 0; c < 3; ++c) {
          const float* p = img + c * H * W;
          double val;
          if (fx == 0.0 && fy == 0.0) {
            val = p[ya * W + xa];
          } else {
            val = (1 - fy) * ((1 - fx) * p[ya * W + xa] + fx * p[ya * W + xb]) +
                  fy * ((1 - fx) * p[yb * W + xa] + fx * p[yb * W + xb]);
          }
          oimg[(c * oh + v) * ow + u] = static_cast<float>(val);
        }
      }
  }
  return out;
}

}  // namespace shelfnet::train
