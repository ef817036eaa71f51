#include "shelfnet/train/losses.hpp"

#include <algorithm>
#include <numeric>

#include "shelfnet/errors.hpp"

namespace shelfnet::train {

std::vector<std::int64_t> ohem_select(std::span<const double> losses, std::span<const std::uint8_t> valid,
                                      double threshold, std::int64_t min_kept) {
  if (min_kept < 1) throw ConfigError("min_kept must be at least 1");
  if (losses.size() != valid.size()) throw ShapeError("loss map and mask sizes differ");
  std::vector<std::int64_t> scored, hard;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!valid[i]) continue;
    scored.push_back(static_cast<std::int64_t>(i));
    if (losses[i] > threshold) hard.push_back(static_cast<std::int64_t>(i));
  }
  if (scored.empty()) throw InputError("OHEM over an empty pixel set");
  if (static_cast<std::int64_t>(hard.size()) >= min_kept) return hard;

  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(min_kept), scored.size());
  std::stable_sort(scored.begin(), scored.end(), [&](std::int64_t a, std::int64_t b) {
    return losses[static_cast<std::size_t>(a)] > losses[static_cast<std::size_t>(b)];
  });
  scored.resize(keep);
  std::sort(scored.begin(), scored.end());
  return scored;
}

template <typename T>
Tensor<T> ohem_loss(const PixelLosses<T>& pixels, double threshold, std::int64_t min_kept) {
  const auto v = pixels.values.values();
  std::vector<double> losses(v.begin(), v.end());
  const auto idx = ohem_select(losses, pixels.valid, threshold, min_kept);
  return select_mean(pixels.values, idx);
}

std::string to_string(LossKind k) { return k == LossKind::ohem ? "ohem" : "cross_entropy"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "ohem") return LossKind::ohem;
  throw ConfigError("unknown loss kind '" + s + "'");
}

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::int32_t> labels, LossKind kind,
                            const OhemConfig& ohem) {
  CrossEntropy<T> ce = softmax_cross_entropy(logits, labels);
  if (kind == LossKind::cross_entropy) return ce.loss;
  std::int64_t min_kept = ohem.min_kept;
  if (min_kept == 0) {
    const auto scored = std::count(ce.pixels.valid.begin(), ce.pixels.valid.end(), std::uint8_t{1});
    min_kept = std::max<std::int64_t>(1, scored / 16);
  }
  return ohem_loss(ce.pixels, ohem.threshold, min_kept);
}

template Tensor<float> ohem_loss(const PixelLosses<float>&, double, std::int64_t);
template Tensor<double> ohem_loss(const PixelLosses<double>&, double, std::int64_t);
template Tensor<float> segmentation_loss(const Tensor<float>&, std::span<const std::int32_t>, LossKind,
                                         const OhemConfig&);
template Tensor<double> segmentation_loss(const Tensor<double>&, std::span<const std::int32_t>, LossKind,
                                          const OhemConfig&);

}  // namespace shelfnet::train
