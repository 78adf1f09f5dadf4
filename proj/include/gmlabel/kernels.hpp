#pragma once

// Raw numeric kernels over Tensor<T>. Image tensors are (C,H,W); convolution
// weights are (Cout,Cin,k,k) with odd k, stride 1 and same padding.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gmlabel/tensor.hpp"

namespace gmlabel::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T, class F>
Tensor<T> map_unary(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class T, class F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f, std::string_view op) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x + y; }, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map_unary(a, [s](T x) { return x * s; });
}
template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return map_unary(a, [](T x) { return std::exp(x); });
}
// a * [ref > 0]
template <class T>
Tensor<T> gate(const Tensor<T>& a, const Tensor<T>& ref) {
  return map_binary(a, ref, [](T x, T r) { return r > T(0) ? x : T(0); }, "gate");
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return Tensor<T>::scalar(s);
}

template <class T>
Tensor<T> expand(const Tensor<T>& s, const Shape& shape) {
  return Tensor<T>(shape, s.item());
}

inline void require_rank(const Shape& s, std::size_t r, std::string_view op) {
  if (s.size() != r) throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(s));
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> out({a.dim(0), b.dim(1)});
  MapMat<T>(out.data(), a.dim(0), b.dim(1)).noalias() =
      CMapMat<T>(a.data(), a.dim(0), a.dim(1)) * CMapMat<T>(b.data(), b.dim(0), b.dim(1));
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  Tensor<T> out({a.dim(1), a.dim(0)});
  MapMat<T>(out.data(), a.dim(1), a.dim(0)) = CMapMat<T>(a.data(), a.dim(0), a.dim(1)).transpose();
  return out;
}

// ---- convolution ---------------------------------------------------------

// Unfolds x (Cin,H,W) into a (Cin*k*k, H*W) patch matrix with zero padding.
template <class T>
void im2col(const Tensor<T>& x, std::size_t k, std::vector<T>& col) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  col.resize(cin * k * k * hw);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, static_cast<std::ptrdiff_t>(w) - dx);
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          T* row = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* src = x.data() + (c * h + sy) * w + dx;
          std::fill(row, row + x0, T(0));
          std::copy(src + x0, src + x1, row + x0);
          std::fill(row + x1, row + w, T(0));
        }
      }
}

// Adjoint of im2col: scatters a patch matrix back onto a (Cin,H,W) grid.
template <class T>
Tensor<T> col2im(const std::vector<T>& col, std::size_t cin, std::size_t h, std::size_t w, std::size_t k) {
  const std::size_t hw = h * w;
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<T> x({cin, h, w});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, static_cast<std::ptrdiff_t>(w) - dx);
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x.data() + (c * h + sy) * w;
          const T* row = src + y * w;
          for (std::ptrdiff_t xx = x0; xx < x1; ++xx) dst[xx + dx] += row[xx];
        }
      }
  return x;
}

inline void check_conv(const Shape& x, const Shape& w, std::string_view op) {
  require_rank(x, 3, op);
  require_rank(w, 4, op);
  if (w[2] != w[3] || w[2] % 2 == 0) throw ShapeError(std::string(op) + ": kernel must be odd and square");
  if (x[0] != w[1])
    throw ShapeError(std::string(op) + ": input channels " + std::to_string(x[0]) + " vs weight " + to_string(w));
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w) {
  check_conv(x.shape(), w.shape(), "conv2d");
  const std::size_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2), h = x.dim(1), wd = x.dim(2), hw = h * wd;
  Tensor<T> y({cout, h, wd});
  CMapMat<T> wm(w.data(), cout, cin * k * k);
  MapMat<T> ym(y.data(), cout, hw);
  if (k == 1) {
    ym.noalias() = wm * CMapMat<T>(x.data(), cin, hw);
  } else {
    thread_local std::vector<T> col;
    im2col(x, k, col);
    ym.noalias() = wm * CMapMat<T>(col.data(), cin * k * k, hw);
  }
  return y;
}

// d conv2d / d x, applied to an output-shaped cotangent gy.
template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w) {
  require_rank(gy.shape(), 3, "conv2d_input_grad");
  require_rank(w.shape(), 4, "conv2d_input_grad");
  if (gy.dim(0) != w.dim(0)) throw ShapeError("conv2d_input_grad: channel mismatch");
  const std::size_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2), h = gy.dim(1), wd = gy.dim(2), hw = h * wd;
  CMapMat<T> wm(w.data(), cout, cin * k * k);
  CMapMat<T> gm(gy.data(), cout, hw);
  if (k == 1) {
    Tensor<T> gx({cin, h, wd});
    MapMat<T>(gx.data(), cin, hw).noalias() = wm.transpose() * gm;
    return gx;
  }
  thread_local std::vector<T> col;
  col.resize(cin * k * k * hw);
  MapMat<T>(col.data(), cin * k * k, hw).noalias() = wm.transpose() * gm;
  return col2im(col, cin, h, wd, k);
}

// d conv2d / d w, for input x and output cotangent gy.
template <class T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, std::size_t k) {
  require_rank(x.shape(), 3, "conv2d_weight_grad");
  require_rank(gy.shape(), 3, "conv2d_weight_grad");
  if (x.dim(1) != gy.dim(1) || x.dim(2) != gy.dim(2)) throw ShapeError("conv2d_weight_grad: spatial mismatch");
  const std::size_t cin = x.dim(0), cout = gy.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> gw({cout, cin, k, k});
  MapMat<T> gwm(gw.data(), cout, cin * k * k);
  CMapMat<T> gm(gy.data(), cout, hw);
  if (k == 1) {
    gwm.noalias() = gm * CMapMat<T>(x.data(), cin, hw).transpose();
  } else {
    thread_local std::vector<T> col;
    im2col(x, k, col);
    gwm.noalias() = gm * CMapMat<T>(col.data(), cin * k * k, hw).transpose();
  }
  return gw;
}

// ---- per-channel / per-pixel reductions ---------------------------------

template <class T>
Tensor<T> spatial_sum(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "spatial_sum");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out({c});
  for (std::size_t i = 0; i < c; ++i) {
    T s = 0;
    for (std::size_t p = 0; p < hw; ++p) s += x[i * hw + p];
    out[i] = s;
  }
  return out;
}

template <class T>
Tensor<T> spatial_broadcast(const Tensor<T>& b, std::size_t h, std::size_t w) {
  require_rank(b.shape(), 1, "spatial_broadcast");
  Tensor<T> out({b.dim(0), h, w});
  for (std::size_t i = 0; i < b.dim(0); ++i) std::fill_n(out.data() + i * h * w, h * w, b[i]);
  return out;
}

template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "channel_sum");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out({1, x.dim(1), x.dim(2)});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t p = 0; p < hw; ++p) out[p] += x[i * hw + p];
  return out;
}

template <class T>
Tensor<T> channel_broadcast(const Tensor<T>& x, std::size_t c) {
  require_rank(x.shape(), 3, "channel_broadcast");
  if (x.dim(0) != 1) throw ShapeError("channel_broadcast expects a single channel");
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor<T> out({c, x.dim(1), x.dim(2)});
  for (std::size_t i = 0; i < c; ++i) std::copy_n(x.data(), hw, out.data() + i * hw);
  return out;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "log_softmax");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < c; ++i) m = std::max(m, x[i * hw + p]);
    T s = 0;
    for (std::size_t i = 0; i < c; ++i) s += std::exp(x[i * hw + p] - m);
    const T lse = m + std::log(s);
    for (std::size_t i = 0; i < c; ++i) out[i * hw + p] = x[i * hw + p] - lse;
  }
  return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  return exp(log_softmax(x));
}

using Labels = std::shared_ptr<const LabelMap>;

template <class T>
Tensor<T> gather_channels(const Tensor<T>& x, const LabelMap& labels) {
  require_rank(x.shape(), 3, "gather_channels");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (labels.size() != hw) throw ShapeError("gather_channels: label map size mismatch");
  Tensor<T> out({1, x.dim(1), x.dim(2)});
  for (std::size_t p = 0; p < hw; ++p) {
    const std::size_t l = labels.data[p];
    if (l >= c) throw Error("invalid_class", "class index " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
    out[p] = x[l * hw + p];
  }
  return out;
}

template <class T>
Tensor<T> scatter_channels(const Tensor<T>& g, const LabelMap& labels, std::size_t c) {
  require_rank(g.shape(), 3, "scatter_channels");
  const std::size_t hw = g.dim(1) * g.dim(2);
  if (labels.size() != hw) throw ShapeError("scatter_channels: label map size mismatch");
  Tensor<T> out({c, g.dim(1), g.dim(2)});
  for (std::size_t p = 0; p < hw; ++p) {
    const std::size_t l = labels.data[p];
    if (l >= c) throw Error("invalid_class", "class index " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
    out[l * hw + p] = g[p];
  }
  return out;
}

// ---- resampling ----------------------------------------------------------

template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "upsample2x");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const T* src = x.data() + (i * h + y / 2) * w;
      T* dst = out.data() + (i * 2 * h + y) * 2 * w;
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
    }
  return out;
}

// 2x2 block sums; the adjoint of upsample2x.
template <class T>
Tensor<T> sumpool2x(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "sumpool2x");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw ShapeError("sumpool2x needs even spatial dims, got " + to_string(x.shape()));
  Tensor<T> out({c, h / 2, w / 2});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = x.data() + (i * h + y) * w;
      T* dst = out.data() + (i * (h / 2) + y / 2) * (w / 2);
      for (std::size_t xx = 0; xx < w; ++xx) dst[xx / 2] += src[xx];
    }
  return out;
}

// ---- channel concat / slice ---------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 3, "concat_channels");
  require_rank(b.shape(), 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) throw ShapeError("concat_channels: spatial mismatch");
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x.shape(), 3, "slice_channels");
  if (begin + count > x.dim(0) || count == 0) throw ShapeError("slice_channels: range outside tensor");
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor<T> out({count, x.dim(1), x.dim(2)});
  std::copy_n(x.data() + begin * hw, count * hw, out.data());
  return out;
}

// Embeds x at channel offset `begin` of a zero tensor with `total` channels.
template <class T>
Tensor<T> pad_channels(const Tensor<T>& x, std::size_t begin, std::size_t total) {
  require_rank(x.shape(), 3, "pad_channels");
  if (begin + x.dim(0) > total) throw ShapeError("pad_channels: range outside tensor");
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor<T> out({total, x.dim(1), x.dim(2)});
  std::copy_n(x.data(), x.size(), out.data() + begin * hw);
  return out;
}

}  // namespace gmlabel::kernels
