#include "shelfnet/train/metrics.hpp"

#include <string>

#include "shelfnet/errors.hpp"

namespace shelfnet::train {

ConfusionMatrix::ConfusionMatrix(int num_classes, int ignore_index)
    : k_(num_classes), ignore_(ignore_index), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and truth sizes differ");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    if (t == ignore_) continue;
    const int p = predicted[i];
    if (t < 0 || t >= k_ || p < 0 || p >= k_)
      throw InputError("label out of range at pixel " + std::to_string(i));
    ++counts_[static_cast<std::size_t>(t * k_ + p)];
  }
}

std::uint64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth * k_ + predicted));
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(static_cast<std::size_t>(k_), -1.0);
  for (int c = 0; c < k_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::uint64_t tp = at(c, c);
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  double s = 0.0;
  int n = 0;
  for (double v : class_iou())
    if (v >= 0.0) {
      s += v;
      ++n;
    }
  return n ? s / n : 0.0;
}

double ConfusionMatrix::pixel_accuracy() const {
  std::uint64_t tp = 0;
  for (int c = 0; c < k_; ++c) tp += at(c, c);
  const auto t = total();
  return t ? static_cast<double>(tp) / static_cast<double>(t) : 0.0;
}

}  // namespace shelfnet::train
