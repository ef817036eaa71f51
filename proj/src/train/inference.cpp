#include "shelfnet/train/inference.hpp"

#include <algorithm>
#include <cmath>

#include "shelfnet/errors.hpp"

namespace shelfnet::train {

std::vector<double> recipe_scales() { return {0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0}; }

namespace {

template <typename T>
Tensor<T> flip_width(const Tensor<T>& x) {
  const auto& s = x.shape();
  const std::int64_t rows = s.n * s.c * s.h, w = s.w;
  const auto v = x.values();
  std::vector<T> out(v.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < w; ++i) out[static_cast<std::size_t>(r * w + i)] = v[static_cast<std::size_t>(r * w + w - 1 - i)];
  return Tensor<T>(s, std::move(out));
}

// Copies the top-left (h, w) window of x into an (h, w) tensor, padding
// with zeros where x is smaller.
template <typename T>
Tensor<T> window(const Tensor<T>& x, std::int64_t h, std::int64_t w) {
  const auto& s = x.shape();
  const std::int64_t planes = s.n * s.c, xh = s.h, xw = s.w;
  if (xh == h && xw == w) return x.detach();
  const auto v = x.values();
  std::vector<T> out(static_cast<std::size_t>(planes * h * w), T(0));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < std::min(h, xh); ++y)
      for (std::int64_t i = 0; i < std::min(w, xw); ++i)
        out[static_cast<std::size_t>((p * h + y) * w + i)] = v[static_cast<std::size_t>((p * xh + y) * xw + i)];
  return Tensor<T>(Shape{s.n, s.c, h, w}, std::move(out));
}

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

template <typename T>
Tensor<T> multi_scale_predict(arch::ExecutableNet<T>& net, const Tensor<T>& images, std::span<const double> scales,
                              bool flip) {
  if (scales.empty()) throw ConfigError("at least one inference scale is required");
  const auto& s = images.shape();
  const std::int64_t h = s.h, w = s.w;
  std::vector<double> acc;
  std::int64_t classes = 0;
  int runs = 0;

  for (double scale : scales) {
    if (!(scale > 0.0)) throw ConfigError("inference scales must be positive");
    const auto sh = std::max<std::int64_t>(1, std::lround(static_cast<double>(h) * scale));
    const auto sw = std::max<std::int64_t>(1, std::lround(static_cast<double>(w) * scale));
    Tensor<T> scaled = (sh == h && sw == w) ? images.detach() : bilinear_resize(images.detach(), sh, sw);
    const Tensor<T> padded = window(scaled, round_up(sh, arch::kInputDivisor), round_up(sw, arch::kInputDivisor));

    for (int pass = 0; pass < (flip ? 2 : 1); ++pass) {
      Tensor<T> input = pass ? flip_width(padded) : padded;
      Tensor<T> logits = net.forward(input, Mode::eval).detach();
      if (pass) logits = flip_width(logits);
      Tensor<T> prob = softmax_channels(window(logits, sh, sw));
      if (sh != h || sw != w) prob = bilinear_resize(prob, h, w);
      classes = prob.shape().c;
      const auto pv = prob.values();
      if (acc.empty()) acc.assign(pv.size(), 0.0);
      for (std::size_t i = 0; i < pv.size(); ++i) acc[i] += static_cast<double>(pv[i]);
      ++runs;
    }
  }
  // Averaging identical runs in double is exact, so [1] and [1, 1] agree bitwise.
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / runs);
  return Tensor<T>(Shape{s.n, classes, h, w}, std::move(out));
}

template Tensor<float> multi_scale_predict(arch::ExecutableNet<float>&, const Tensor<float>&, std::span<const double>,
                                           bool);
template Tensor<double> multi_scale_predict(arch::ExecutableNet<double>&, const Tensor<double>&, std::span<const double>,
                                            bool);

}  // namespace shelfnet::train
