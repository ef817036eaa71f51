#include "shelfnet/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/random.hpp"

namespace shelfnet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using Index = std::int64_t;

struct ConvGeometry {
  Index channels, height, width;  // image side
  Index kh, kw;
  Index stride, padding, dilation;
  Index out_h, out_w;              // column side

  Index rows() const { return channels * kh * kw; }
  Index cols() const { return out_h * out_w; }
  bool trivial() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = img[c][oy*s - p + i*d][ox*s - p + j*d]
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const Index plane = g.cols();
  for (Index c = 0; c < g.channels; ++c) {
    const T* src = img + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + i * g.dilation;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* line = src + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + j * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.width) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates column entries back onto the image.
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const Index plane = g.cols();
  for (Index c = 0; c < g.channels; ++c) {
    T* dst = img + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + i * g.dilation;
          if (iy < 0 || iy >= g.height) continue;
          T* line = dst + iy * g.width;
          const T* src = row + oy * g.out_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + j * g.dilation;
            if (ix >= 0 && ix < g.width) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_geometry(int stride, int padding, int dilation) {
  if (stride < 1) throw ConfigError("stride must be >= 1, got " + std::to_string(stride));
  if (dilation < 1) throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation));
  if (padding < 0) throw ConfigError("padding must be >= 0, got " + std::to_string(padding));
}

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, int stride, int padding, int dilation) {
  check_geometry(stride, padding, dilation);
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c)
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                     std::to_string(ws.c));
  const Index span_h = xs.h + 2 * padding - dilation * (ws.h - 1) - 1;
  const Index span_w = xs.w + 2 * padding - dilation * (ws.w - 1) - 1;
  if (span_h < 0 || span_w < 0)
    throw ConfigError("conv2d: kernel " + ws.str() + " does not fit input " + xs.str());
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding, dilation, span_h / stride + 1,
                 span_w / stride + 1};
  const Shape ys{xs.n, ws.n, g.out_h, g.out_w};

  std::vector<T> out(static_cast<std::size_t>(ys.numel()));
  std::vector<T> cols;
  if (!g.trivial()) cols.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap<T> W(weight.values().data(), ws.n, g.rows());
  for (Index n = 0; n < xs.n; ++n) {
    const T* img = x.values().data() + n * xs.c * xs.h * xs.w;
    const T* colp = img;
    if (!g.trivial()) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    MatMap<T> Y(out.data() + n * ys.c * g.cols(), ys.c, g.cols());
    Y.noalias() = W * ConstMatMap<T>(colp, g.rows(), g.cols());
  }

  return detail::make_result<T>(ys, std::move(out), {&x, &weight}, [g, xs, ws, ys](detail::Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    ConstMatMap<T> W(win.value.data(), ws.n, g.rows());
    std::vector<T> cols(g.trivial() ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
    std::vector<T> dcols(static_cast<std::size_t>(g.rows() * g.cols()));
    for (Index n = 0; n < xs.n; ++n) {
      ConstMatMap<T> dY(self.grad.data() + n * ys.c * g.cols(), ys.c, g.cols());
      const T* img = xin.value.data() + n * xs.c * xs.h * xs.w;
      if (win.requires_grad) {
        const T* colp = img;
        if (!g.trivial()) {
          im2col(img, g, cols.data());
          colp = cols.data();
        }
        MatMap<T> dW(win.ensure_grad().data(), ws.n, g.rows());
        dW.noalias() += dY * ConstMatMap<T>(colp, g.rows(), g.cols()).transpose();
      }
      if (xin.requires_grad) {
        T* dimg = xin.ensure_grad().data() + n * xs.c * xs.h * xs.w;
        if (g.trivial()) {
          MatMap<T>(dimg, g.rows(), g.cols()).noalias() += W.transpose() * dY;
        } else {
          MatMap<T>(dcols.data(), g.rows(), g.cols()).noalias() = W.transpose() * dY;
          col2im_add(dcols.data(), g, dimg);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, int stride, int padding,
                           int output_padding) {
  check_geometry(stride, padding, 1);
  const Shape xs = x.shape();
  const Shape ws = weight.shape();  // (c_in, c_out, kh, kw)
  if (ws.n != xs.c)
    throw ShapeError("conv_transpose2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                     std::to_string(ws.n));
  if (output_padding < 0 || output_padding >= stride)
    throw ConfigError("conv_transpose2d: output_padding must lie in [0, stride)");
  const Index out_h = (xs.h - 1) * stride - 2 * padding + ws.h + output_padding;
  const Index out_w = (xs.w - 1) * stride - 2 * padding + ws.w + output_padding;
  if (out_h <= 0 || out_w <= 0)
    throw ConfigError("conv_transpose2d: non-positive output size for input " + xs.str());
  // Geometry of the forward conv that maps the (out_h, out_w) output back to x.
  ConvGeometry g{ws.c, out_h, out_w, ws.h, ws.w, stride, padding, 1, xs.h, xs.w};
  const Shape ys{xs.n, ws.c, out_h, out_w};

  std::vector<T> out(static_cast<std::size_t>(ys.numel()), T(0));
  std::vector<T> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap<T> W(weight.values().data(), ws.n, g.rows());
  for (Index n = 0; n < xs.n; ++n) {
    ConstMatMap<T> X(x.values().data() + n * xs.c * g.cols(), xs.c, g.cols());
    MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() = W.transpose() * X;
    col2im_add(cols.data(), g, out.data() + n * ys.c * out_h * out_w);
  }

  return detail::make_result<T>(ys, std::move(out), {&x, &weight}, [g, xs, ws, ys](detail::Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    ConstMatMap<T> W(win.value.data(), ws.n, g.rows());
    std::vector<T> dcols(static_cast<std::size_t>(g.rows() * g.cols()));
    for (Index n = 0; n < xs.n; ++n) {
      im2col(self.grad.data() + n * ys.c * ys.h * ys.w, g, dcols.data());
      ConstMatMap<T> D(dcols.data(), g.rows(), g.cols());
      if (xin.requires_grad) {
        MatMap<T> dX(xin.ensure_grad().data() + n * xs.c * g.cols(), xs.c, g.cols());
        dX.noalias() += W * D;
      }
      if (win.requires_grad) {
        ConstMatMap<T> X(xin.value.data() + n * xs.c * g.cols(), xs.c, g.cols());
        MatMap<T> dW(win.ensure_grad().data(), ws.n, g.rows());
        dW.noalias() += X * D.transpose();
      }
    }
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode, double momentum, double eps) {
  if (!(eps > 0.0)) throw ConfigError("batch_norm: eps must be > 0");
  if (momentum < 0.0 || momentum > 1.0) throw ConfigError("batch_norm: momentum must lie in [0, 1]");
  const Shape xs = x.shape();
  const Index C = xs.c;
  const auto per_channel = static_cast<std::size_t>(C);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != per_channel ||
      state.running_var.size() != per_channel)
    throw ShapeError("batch_norm: per-channel parameters do not match " + std::to_string(C) + " channels");

  const Index plane = xs.h * xs.w;
  const Index count = xs.n * plane;
  std::vector<T> mean(per_channel), inv_std(per_channel);
  if (mode == Mode::train) {
    for (Index c = 0; c < C; ++c) {
      double s = 0.0;
      for (Index n = 0; n < xs.n; ++n) {
        const T* p = x.values().data() + (n * C + c) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (Index n = 0; n < xs.n; ++n) {
        const T* p = x.values().data() + (n * C + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] = static_cast<T>((1.0 - momentum) * state.running_mean[c] + momentum * mu);
      state.running_var[c] = static_cast<T>((1.0 - momentum) * state.running_var[c] + momentum * unbiased);
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + eps));
    }
  }

  std::vector<T> xhat(static_cast<std::size_t>(xs.numel()));
  std::vector<T> out(xhat.size());
  const T* g = gamma.values().data();
  const T* b = beta.values().data();
  for (Index n = 0; n < xs.n; ++n)
    for (Index c = 0; c < C; ++c) {
      const Index base = (n * C + c) * plane;
      for (Index i = 0; i < plane; ++i) {
        const T v = (x.values()[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = v;
        out[base + i] = g[c] * v + b[c];
      }
    }

  const bool batch_stats = mode == Mode::train;
  return detail::make_result<T>(
      xs, std::move(out), {&x, &gamma, &beta},
      [xs, plane, count, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& xin = *self.inputs[0];
        auto& gin = *self.inputs[1];
        auto& bin = *self.inputs[2];
        const Index C = xs.c;
        for (Index c = 0; c < C; ++c) {
          double sdy = 0.0, sdyx = 0.0;
          for (Index n = 0; n < xs.n; ++n) {
            const Index base = (n * C + c) * plane;
            for (Index i = 0; i < plane; ++i) {
              sdy += self.grad[base + i];
              sdyx += static_cast<double>(self.grad[base + i]) * xhat[base + i];
            }
          }
          if (gin.requires_grad) gin.ensure_grad()[c] += static_cast<T>(sdyx);
          if (bin.requires_grad) bin.ensure_grad()[c] += static_cast<T>(sdy);
          if (!xin.requires_grad) continue;
          auto& dx = xin.ensure_grad();
          const T scale = gin.value[c] * inv_std[c];
          if (batch_stats) {
            const T mdy = static_cast<T>(sdy / static_cast<double>(count));
            const T mdyx = static_cast<T>(sdyx / static_cast<double>(count));
            for (Index n = 0; n < xs.n; ++n) {
              const Index base = (n * C + c) * plane;
              for (Index i = 0; i < plane; ++i)
                dx[base + i] += scale * (self.grad[base + i] - mdy - xhat[base + i] * mdyx);
            }
          } else {
            for (Index n = 0; n < xs.n; ++n) {
              const Index base = (n * C + c) * plane;
              for (Index i = 0; i < plane; ++i) dx[base + i] += scale * self.grad[base + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& dx = in.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (in.value[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [](detail::Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = self.value[i];
      dx[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  std::mt19937_64 rng(splitmix64(seed));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) {
    m = uniform01(rng) < p ? T(0) : keep_scale;
  }
  std::vector<T> out(mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](detail::Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * mask[i];
  });
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min<std::int64_t>(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: output size must be positive");
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, out_h, out_w};
  if (ys == xs) return x;
  auto ty = bilinear_taps(xs.h, out_h);
  auto tx = bilinear_taps(xs.w, out_w);
  std::vector<T> out(static_cast<std::size_t>(ys.numel()));
  for (Index p = 0; p < xs.n * xs.c; ++p) {
    const T* src = x.values().data() + p * xs.h * xs.w;
    T* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (Index ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = src[a.lo * xs.w + b.lo] * (1.0 - b.frac) + src[a.lo * xs.w + b.hi] * b.frac;
        const double bot = src[a.hi * xs.w + b.lo] * (1.0 - b.frac) + src[a.hi * xs.w + b.hi] * b.frac;
        dst[oy * out_w + ox] = static_cast<T>(top * (1.0 - a.frac) + bot * a.frac);
      }
    }
  }
  return detail::make_result<T>(ys, std::move(out), {&x},
                                [xs, ys, ty = std::move(ty), tx = std::move(tx)](detail::Node<T>& self) {
                                  auto& dx = self.inputs[0]->ensure_grad();
                                  for (Index p = 0; p < xs.n * xs.c; ++p) {
                                    T* dst = dx.data() + p * xs.h * xs.w;
                                    const T* g = self.grad.data() + p * ys.h * ys.w;
                                    for (Index oy = 0; oy < ys.h; ++oy) {
                                      const auto& a = ty[oy];
                                      for (Index ox = 0; ox < ys.w; ++ox) {
                                        const auto& b = tx[ox];
                                        const double v = g[oy * ys.w + ox];
                                        dst[a.lo * xs.w + b.lo] += static_cast<T>(v * (1 - a.frac) * (1 - b.frac));
                                        dst[a.lo * xs.w + b.hi] += static_cast<T>(v * (1 - a.frac) * b.frac);
                                        dst[a.hi * xs.w + b.lo] += static_cast<T>(v * a.frac * (1 - b.frac));
                                        dst[a.hi * xs.w + b.hi] += static_cast<T>(v * a.frac * b.frac);
                                      }
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
  return bilinear_resize(x, x.shape().h * factor, x.shape().w * factor);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int padding) {
  check_geometry(stride, padding, 1);
  if (kernel < 1 || 2 * padding > kernel) throw ConfigError("max_pool2d: invalid kernel/padding");
  const Shape xs = x.shape();
  const Index oh = (xs.h + 2 * padding - kernel) / stride + 1;
  const Index ow = (xs.w + 2 * padding - kernel) / stride + 1;
  if (xs.h + 2 * padding < kernel || xs.w + 2 * padding < kernel)
    throw ConfigError("max_pool2d: window larger than input " + xs.str());
  const Shape ys{xs.n, xs.c, oh, ow};
  std::vector<T> out(static_cast<std::size_t>(ys.numel()));
  std::vector<std::int64_t> arg(out.size());
  for (Index p = 0; p < xs.n * xs.c; ++p) {
    const T* src = x.values().data() + p * xs.h * xs.w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        Index where = -1;
        for (Index i = 0; i < kernel; ++i) {
          const Index iy = oy * stride - padding + i;
          if (iy < 0 || iy >= xs.h) continue;
          for (Index j = 0; j < kernel; ++j) {
            const Index ix = ox * stride - padding + j;
            if (ix < 0 || ix >= xs.w) continue;
            const T v = src[iy * xs.w + ix];
            if (where < 0 || v > best) {
              best = v;
              where = iy * xs.w + ix;
            }
          }
        }
        const Index o = (p * oh + oy) * ow + ox;
        out[o] = best;
        arg[o] = p * xs.h * xs.w + where;
      }
  }
  return detail::make_result<T>(ys, std::move(out), {&x}, [arg = std::move(arg)](detail::Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += self.grad[o];
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, 1, 1};
  const Index plane = xs.h * xs.w;
  std::vector<T> out(static_cast<std::size_t>(ys.numel()));
  for (Index p = 0; p < xs.n * xs.c; ++p) {
    double s = 0.0;
    for (Index i = 0; i < plane; ++i) s += x.values()[p * plane + i];
    out[p] = static_cast<T>(s / static_cast<double>(plane));
  }
  return detail::make_result<T>(ys, std::move(out), {&x}, [plane](detail::Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t p = 0; p < self.grad.size(); ++p)
      for (Index i = 0; i < plane; ++i) dx[p * plane + i] += self.grad[p] * inv;
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  check_same_shape(x.shape(), y.shape(), "add");
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y.values()[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &y}, [](detail::Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& d = in->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& gate) {
  const Shape xs = x.shape();
  if (!(gate.shape() == Shape{xs.n, xs.c, 1, 1}))
    throw ShapeError("channel_scale: gate " + gate.shape().str() + " does not match " + xs.str());
  const Index plane = xs.h * xs.w;
  std::vector<T> out(static_cast<std::size_t>(xs.numel()));
  for (Index p = 0; p < xs.n * xs.c; ++p)
    for (Index i = 0; i < plane; ++i) out[p * plane + i] = x.values()[p * plane + i] * gate.values()[p];
  return detail::make_result<T>(xs, std::move(out), {&x, &gate}, [plane](detail::Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& gin = *self.inputs[1];
    const std::size_t planes = gin.value.size();
    for (std::size_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (Index i = 0; i < plane; ++i) {
        const std::size_t k = p * plane + i;
        acc += static_cast<double>(self.grad[k]) * xin.value[k];
        if (xin.requires_grad) xin.ensure_grad()[k] += self.grad[k] * gin.value[p];
      }
      if (gin.requires_grad) gin.ensure_grad()[p] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& x, const Tensor<T>& y) {
  check_same_shape(x.shape(), y.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.values().size(); ++i) acc += static_cast<double>(x.values()[i]) * y.values()[i];
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, {&x, &y}, [](detail::Node<T>& self) {
    const T g = self.grad[0];
    auto& a = *self.inputs[0];
    auto& b = *self.inputs[1];
    if (a.requires_grad) {
      auto& d = a.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * b.value[i];
    }
    if (b.requires_grad) {
      auto& d = b.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * a.value[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, {&x}, [](detail::Node<T>& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> select_mean(const Tensor<T>& x, std::span<const std::int64_t> indices) {
  if (indices.empty()) throw InputError("select_mean: empty selection");
  double acc = 0.0;
  for (auto i : indices) {
    if (i < 0 || i >= x.numel()) throw InputError("select_mean: index out of range");
    acc += x.values()[i];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc * inv)}, {&x},
                                [idx = std::move(idx), inv](detail::Node<T>& self) {
                                  auto& d = self.inputs[0]->ensure_grad();
                                  const T g = static_cast<T>(self.grad[0] * inv);
                                  for (auto i : idx) d[i] += g;
                                });
}

template <typename T>
std::vector<std::int64_t> PixelLosses<T>::valid_indices() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                                      int ignore_index) {
  const Shape ls = logits.shape();
  const Index K = ls.c;
  const Index plane = ls.h * ls.w;
  if (static_cast<Index>(labels.size()) != ls.n * plane)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + ls.str());

  const Shape ps{ls.n, 1, ls.h, ls.w};
  std::vector<T> loss(static_cast<std::size_t>(ps.numel()), T(0));
  std::vector<std::uint8_t> valid(loss.size(), 0);
  std::vector<T> prob(static_cast<std::size_t>(ls.numel()));
  const T* z = logits.values().data();
  for (Index n = 0; n < ls.n; ++n)
    for (Index i = 0; i < plane; ++i) {
      const Index pix = n * plane + i;
      const std::int32_t label = labels[pix];
      const bool ignored = label == ignore_index;
      if (!ignored && (label < 0 || label >= K))
        throw InputError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                         std::to_string(K) + ")");
      double zmax = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < K; ++k) zmax = std::max<double>(zmax, z[(n * K + k) * plane + i]);
      double denom = 0.0;
      for (Index k = 0; k < K; ++k) denom += std::exp(static_cast<double>(z[(n * K + k) * plane + i]) - zmax);
      const double log_denom = std::log(denom);
      for (Index k = 0; k < K; ++k)
        prob[(n * K + k) * plane + i] =
            static_cast<T>(std::exp(static_cast<double>(z[(n * K + k) * plane + i]) - zmax - log_denom));
      if (ignored) continue;
      valid[pix] = 1;
      loss[pix] = static_cast<T>(log_denom + zmax - z[(n * K + label) * plane + i]);
    }

  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  auto pixel_tensor = detail::make_result<T>(
      ps, std::move(loss), {&logits},
      [ls, valid, lab = std::move(lab), prob = std::move(prob)](detail::Node<T>& self) {
        auto& dz = self.inputs[0]->ensure_grad();
        const Index K = ls.c;
        const Index plane = ls.h * ls.w;
        for (Index n = 0; n < ls.n; ++n)
          for (Index i = 0; i < plane; ++i) {
            const Index pix = n * plane + i;
            if (!valid[pix]) continue;
            const T g = self.grad[pix];
            if (g == T(0)) continue;
            for (Index k = 0; k < K; ++k) {
              const Index o = (n * K + k) * plane + i;
              dz[o] += g * (prob[o] - (k == lab[pix] ? T(1) : T(0)));
            }
          }
      });

  CrossEntropy<T> result{Tensor<T>::scalar(T(0)), PixelLosses<T>{pixel_tensor, std::move(valid)}};
  auto idx = result.pixels.valid_indices();
  if (!idx.empty()) result.loss = select_mean(pixel_tensor, idx);
  return result;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const Shape ls = logits.shape();
  const Index K = ls.c;
  const Index plane = ls.h * ls.w;
  std::vector<T> out(static_cast<std::size_t>(ls.numel()));
  const T* z = logits.values().data();
  for (Index n = 0; n < ls.n; ++n)
    for (Index i = 0; i < plane; ++i) {
      double zmax = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < K; ++k) zmax = std::max<double>(zmax, z[(n * K + k) * plane + i]);
      double denom = 0.0;
      for (Index k = 0; k < K; ++k) denom += std::exp(static_cast<double>(z[(n * K + k) * plane + i]) - zmax);
      for (Index k = 0; k < K; ++k)
        out[(n * K + k) * plane + i] =
            static_cast<T>(std::exp(static_cast<double>(z[(n * K + k) * plane + i]) - zmax) / denom);
    }
  return Tensor<T>(ls, std::move(out));
}

template <typename T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& scores) {
  const Shape s = scores.shape();
  const Index plane = s.h * s.w;
  std::vector<std::int32_t> out(static_cast<std::size_t>(s.n * plane));
  for (Index n = 0; n < s.n; ++n)
    for (Index i = 0; i < plane; ++i) {
      Index best = 0;
      for (Index k = 1; k < s.c; ++k)
        if (scores.values()[(n * s.c + k) * plane + i] > scores.values()[(n * s.c + best) * plane + i]) best = k;
      out[n * plane + i] = static_cast<std::int32_t>(best);
    }
  return out;
}

#define SHELFNET_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int, int);                            \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, int, int, int);                  \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, \
                                Mode, double, double);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, std::uint64_t);                               \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::int64_t, std::int64_t);                        \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int);                                             \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int, int);                                          \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> select_mean(const Tensor<T>&, std::span<const std::int64_t>);                         \
  template struct PixelLosses<T>;                                                                          \
  template CrossEntropy<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, int);    \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                   \
  template std::vector<std::int32_t> argmax_channels(const Tensor<T>&);

SHELFNET_INSTANTIATE_OPS(float)
SHELFNET_INSTANTIATE_OPS(double)

}  // namespace shelfnet
