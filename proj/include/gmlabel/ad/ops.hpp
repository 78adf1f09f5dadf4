#pragma once

// The differentiable kernel set, overloaded for three value kinds so model code
// is written once:
//   Tensor<T>  plain evaluation
//   Var<T>     reverse mode (recordable to any order)
//   Dual<T>    forward mode
//
// Kernels: add, sub, mul, scale, exp, gate (relu mask), sum/mean, expand,
// matmul, transpose, conv2d and its two adjoints, spatial/channel sums and
// broadcasts, log_softmax, gather/scatter by label, 2x upsample / pooling,
// channel concat/slice/pad.

#include <memory>

#include "gmlabel/ad/dual.hpp"
#include "gmlabel/ad/var.hpp"
#include "gmlabel/kernels.hpp"

namespace gmlabel::ad {

namespace k = gmlabel::kernels;

// ---- Tensor overloads ------------------------------------------------------

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return k::add(a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return k::sub(a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return k::mul(a, b); }
template <class T> Tensor<T> scale(const Tensor<T>& a, T s) { return k::scale(a, s); }
template <class T> Tensor<T> exp(const Tensor<T>& a) { return k::exp(a); }
template <class T> Tensor<T> gate(const Tensor<T>& a, const Tensor<T>& ref) { return k::gate(a, ref); }
template <class T> Tensor<T> relu(const Tensor<T>& a) { return k::gate(a, a); }
template <class T> Tensor<T> sum(const Tensor<T>& a) { return k::sum_all(a); }
template <class T> Tensor<T> mean(const Tensor<T>& a) { return k::scale(k::sum_all(a), T(1) / T(a.size())); }
template <class T> Tensor<T> expand(const Tensor<T>& s, const Shape& shape) { return k::expand(s, shape); }
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return k::matmul(a, b); }
template <class T> Tensor<T> transpose(const Tensor<T>& a) { return k::transpose(a); }
template <class T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w) { return k::conv2d(x, w); }
template <class T> Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w) { return k::conv2d_input_grad(gy, w); }
template <class T> Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, std::size_t ks) { return k::conv2d_weight_grad(x, gy, ks); }
template <class T> Tensor<T> spatial_sum(const Tensor<T>& x) { return k::spatial_sum(x); }
template <class T> Tensor<T> spatial_broadcast(const Tensor<T>& b, std::size_t h, std::size_t w) { return k::spatial_broadcast(b, h, w); }
template <class T> Tensor<T> channel_sum(const Tensor<T>& x) { return k::channel_sum(x); }
template <class T> Tensor<T> channel_broadcast(const Tensor<T>& x, std::size_t c) { return k::channel_broadcast(x, c); }
template <class T> Tensor<T> log_softmax(const Tensor<T>& x) { return k::log_softmax(x); }
template <class T> Tensor<T> softmax(const Tensor<T>& x) { return k::softmax(x); }
template <class T> Tensor<T> gather_channels(const Tensor<T>& x, const LabelMap& l) { return k::gather_channels(x, l); }
template <class T> Tensor<T> scatter_channels(const Tensor<T>& g, const LabelMap& l, std::size_t c) { return k::scatter_channels(g, l, c); }
template <class T> Tensor<T> upsample2x(const Tensor<T>& x) { return k::upsample2x(x); }
template <class T> Tensor<T> sumpool2x(const Tensor<T>& x) { return k::sumpool2x(x); }
template <class T> Tensor<T> avgpool2x(const Tensor<T>& x) { return k::scale(k::sumpool2x(x), T(0.25)); }
template <class T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) { return k::concat_channels(a, b); }
template <class T> Tensor<T> slice_channels(const Tensor<T>& x, std::size_t b, std::size_t n) { return k::slice_channels(x, b, n); }
template <class T> Tensor<T> pad_channels(const Tensor<T>& x, std::size_t b, std::size_t total) { return k::pad_channels(x, b, total); }
template <class T> Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  return k::add(x, k::spatial_broadcast(b, x.dim(1), x.dim(2)));
}
template <class T> const Tensor<T>& value_of(const Tensor<T>& t) { return t; }

// ---- Var overloads -------------------------------------------------------

template <class T> using VarList = std::vector<Var<T>>;

template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> gate(const Var<T>& a, const Var<T>& ref);
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> expand(const Var<T>& s, const Shape& shape);
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> transpose(const Var<T>& a);
template <class T> Var<T> conv2d(const Var<T>& x, const Var<T>& w);
template <class T> Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w);
template <class T> Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, std::size_t ks);
template <class T> Var<T> spatial_sum(const Var<T>& x);
template <class T> Var<T> spatial_broadcast(const Var<T>& b, std::size_t h, std::size_t w);
template <class T> Var<T> channel_sum(const Var<T>& x);
template <class T> Var<T> channel_broadcast(const Var<T>& x, std::size_t c);
template <class T> Var<T> log_softmax(const Var<T>& x);
template <class T> Var<T> gather_channels(const Var<T>& x, const LabelMap& l);
template <class T> Var<T> scatter_channels(const Var<T>& g, const LabelMap& l, std::size_t c);
template <class T> Var<T> upsample2x(const Var<T>& x);
template <class T> Var<T> sumpool2x(const Var<T>& x);
template <class T> Var<T> slice_channels(const Var<T>& x, std::size_t b, std::size_t n);
template <class T> Var<T> pad_channels(const Var<T>& x, std::size_t b, std::size_t total);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("add", k::add(a.value(), b.value()), {a, b}, [](const Var<T>& g) { return VarList<T>{g, g}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("sub", k::sub(a.value(), b.value()), {a, b},
                    [](const Var<T>& g) { return VarList<T>{g, scale(g, T(-1))}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("mul", k::mul(a.value(), b.value()), {a, b},
                    [a, b](const Var<T>& g) { return VarList<T>{mul(g, b), mul(g, a)}; });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return make_op<T>("scale", k::scale(a.value(), s), {a}, [s](const Var<T>& g) { return VarList<T>{scale(g, s)}; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return make_op<T>("exp", k::exp(a.value()), {a}, [a](const Var<T>& g) { return VarList<T>{mul(g, exp(a))}; });
}

// The mask is taken from ref's value; ref receives no gradient.
template <class T>
Var<T> gate(const Var<T>& a, const Var<T>& ref) {
  auto mask = Var<T>::constant(ref.value());
  return make_op<T>("gate", k::gate(a.value(), ref.value()), {a},
                    [mask](const Var<T>& g) { return VarList<T>{gate(g, mask)}; });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return gate(a, a);
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Shape s = a.shape();
  return make_op<T>("sum", k::sum_all(a.value()), {a}, [s](const Var<T>& g) { return VarList<T>{expand(g, s)}; });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / T(a.value().size()));
}

template <class T>
Var<T> expand(const Var<T>& s, const Shape& shape) {
  return make_op<T>("expand", k::expand(s.value(), shape), {s}, [](const Var<T>& g) { return VarList<T>{sum(g)}; });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("matmul", k::matmul(a.value(), b.value()), {a, b}, [a, b](const Var<T>& g) {
    return VarList<T>{matmul(g, transpose(b)), matmul(transpose(a), g)};
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  return make_op<T>("transpose", k::transpose(a.value()), {a},
                    [](const Var<T>& g) { return VarList<T>{transpose(g)}; });
}

// conv2d, conv2d_input_grad and conv2d_weight_grad are the three partial
// contractions of <gy, conv(x, w)>, so each one's derivatives are the others.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w) {
  const std::size_t ks = w.value().dim(2);
  return make_op<T>("conv2d", k::conv2d(x.value(), w.value()), {x, w}, [x, w, ks](const Var<T>& g) {
    return VarList<T>{needs_grad(x) ? conv2d_input_grad(g, w) : Var<T>{},
                      needs_grad(w) ? conv2d_weight_grad(x, g, ks) : Var<T>{}};
  });
}

template <class T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w) {
  const std::size_t ks = w.value().dim(2);
  return make_op<T>("conv2d_input_grad", k::conv2d_input_grad(gy.value(), w.value()), {gy, w},
                    [gy, w, ks](const Var<T>& g) {
                      return VarList<T>{needs_grad(gy) ? conv2d(g, w) : Var<T>{},
                                        needs_grad(w) ? conv2d_weight_grad(g, gy, ks) : Var<T>{}};
                    });
}

template <class T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, std::size_t ks) {
  return make_op<T>("conv2d_weight_grad", k::conv2d_weight_grad(x.value(), gy.value(), ks), {x, gy},
                    [x, gy](const Var<T>& g) {
                      return VarList<T>{needs_grad(x) ? conv2d_input_grad(gy, g) : Var<T>{},
                                        needs_grad(gy) ? conv2d(x, g) : Var<T>{}};
                    });
}

template <class T>
Var<T> spatial_sum(const Var<T>& x) {
  const std::size_t h = x.value().dim(1), w = x.value().dim(2);
  return make_op<T>("spatial_sum", k::spatial_sum(x.value()), {x},
                    [h, w](const Var<T>& g) { return VarList<T>{spatial_broadcast(g, h, w)}; });
}

template <class T>
Var<T> spatial_broadcast(const Var<T>& b, std::size_t h, std::size_t w) {
  return make_op<T>("spatial_broadcast", k::spatial_broadcast(b.value(), h, w), {b},
                    [](const Var<T>& g) { return VarList<T>{spatial_sum(g)}; });
}

template <class T>
Var<T> bias_add(const Var<T>& x, const Var<T>& b) {
  return add(x, spatial_broadcast(b, x.value().dim(1), x.value().dim(2)));
}

template <class T>
Var<T> channel_sum(const Var<T>& x) {
  const std::size_t c = x.value().dim(0);
  return make_op<T>("channel_sum", k::channel_sum(x.value()), {x},
                    [c](const Var<T>& g) { return VarList<T>{channel_broadcast(g, c)}; });
}

template <class T>
Var<T> channel_broadcast(const Var<T>& x, std::size_t c) {
  return make_op<T>("channel_broadcast", k::channel_broadcast(x.value(), c), {x},
                    [](const Var<T>& g) { return VarList<T>{channel_sum(g)}; });
}

template <class T>
Var<T> softmax(const Var<T>& x) {
  return exp(log_softmax(x));
}

template <class T>
Var<T> log_softmax(const Var<T>& x) {
  const std::size_t c = x.value().dim(0);
  return make_op<T>("log_softmax", k::log_softmax(x.value()), {x}, [x, c](const Var<T>& g) {
    return VarList<T>{sub(g, mul(softmax(x), channel_broadcast(channel_sum(g), c)))};
  });
}

template <class T>
Var<T> gather_channels(const Var<T>& x, const LabelMap& l) {
  auto labels = std::make_shared<const LabelMap>(l);
  const std::size_t c = x.value().dim(0);
  return make_op<T>("gather_channels", k::gather_channels(x.value(), *labels), {x},
                    [labels, c](const Var<T>& g) { return VarList<T>{scatter_channels(g, *labels, c)}; });
}

template <class T>
Var<T> scatter_channels(const Var<T>& g0, const LabelMap& l, std::size_t c) {
  auto labels = std::make_shared<const LabelMap>(l);
  return make_op<T>("scatter_channels", k::scatter_channels(g0.value(), *labels, c), {g0},
                    [labels](const Var<T>& g) { return VarList<T>{gather_channels(g, *labels)}; });
}

template <class T>
Var<T> upsample2x(const Var<T>& x) {
  return make_op<T>("upsample2x", k::upsample2x(x.value()), {x},
                    [](const Var<T>& g) { return VarList<T>{sumpool2x(g)}; });
}

template <class T>
Var<T> sumpool2x(const Var<T>& x) {
  return make_op<T>("sumpool2x", k::sumpool2x(x.value()), {x},
                    [](const Var<T>& g) { return VarList<T>{upsample2x(g)}; });
}

template <class T>
Var<T> avgpool2x(const Var<T>& x) {
  return scale(sumpool2x(x), T(0.25));
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const std::size_t ca = a.value().dim(0), cb = b.value().dim(0);
  return make_op<T>("concat_channels", k::concat_channels(a.value(), b.value()), {a, b}, [ca, cb](const Var<T>& g) {
    return VarList<T>{slice_channels(g, 0, ca), slice_channels(g, ca, cb)};
  });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t b, std::size_t n) {
  const std::size_t total = x.value().dim(0);
  return make_op<T>("slice_channels", k::slice_channels(x.value(), b, n), {x},
                    [b, total](const Var<T>& g) { return VarList<T>{pad_channels(g, b, total)}; });
}

template <class T>
Var<T> pad_channels(const Var<T>& x, std::size_t b, std::size_t total) {
  const std::size_t n = x.value().dim(0);
  return make_op<T>("pad_channels", k::pad_channels(x.value(), b, total), {x},
                    [b, n](const Var<T>& g) { return VarList<T>{slice_channels(g, b, n)}; });
}

template <class T> const Tensor<T>& value_of(const Var<T>& v) { return v.value(); }

// ---- Dual overloads -----------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> tadd(Tensor<T> a, const Tensor<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return k::add(a, b);
}

template <class T, class F>
Tensor<T> tmap(const Tensor<T>& t, F f) {
  return t.empty() ? Tensor<T>() : f(t);
}

}  // namespace detail

template <class T>
Dual<T> add(const Dual<T>& a, const Dual<T>& b) {
  return {k::add(a.value, b.value), detail::tadd(a.tangent, b.tangent)};
}

template <class T>
Dual<T> sub(const Dual<T>& a, const Dual<T>& b) {
  return {k::sub(a.value, b.value), detail::tadd(a.tangent, detail::tmap(b.tangent, [](const Tensor<T>& t) {
                                                   return k::scale(t, T(-1));
                                                 }))};
}

template <class T>
Dual<T> mul(const Dual<T>& a, const Dual<T>& b) {
  auto ta = detail::tmap(a.tangent, [&](const Tensor<T>& t) { return k::mul(t, b.value); });
  auto tb = detail::tmap(b.tangent, [&](const Tensor<T>& t) { return k::mul(a.value, t); });
  return {k::mul(a.value, b.value), detail::tadd(std::move(ta), tb)};
}

template <class T>
Dual<T> scale(const Dual<T>& a, T s) {
  return {k::scale(a.value, s), detail::tmap(a.tangent, [s](const Tensor<T>& t) { return k::scale(t, s); })};
}

template <class T>
Dual<T> exp(const Dual<T>& a) {
  auto v = k::exp(a.value);
  auto t = detail::tmap(a.tangent, [&](const Tensor<T>& ta) { return k::mul(ta, v); });
  return {std::move(v), std::move(t)};
}

template <class T>
Dual<T> gate(const Dual<T>& a, const Dual<T>& ref) {
  return {k::gate(a.value, ref.value),
          detail::tmap(a.tangent, [&](const Tensor<T>& t) { return k::gate(t, ref.value); })};
}

template <class T>
Dual<T> relu(const Dual<T>& a) {
  return gate(a, a);
}

template <class T>
Dual<T> sum(const Dual<T>& a) {
  return {k::sum_all(a.value), detail::tmap(a.tangent, [](const Tensor<T>& t) { return k::sum_all(t); })};
}

template <class T>
Dual<T> mean(const Dual<T>& a) {
  return scale(sum(a), T(1) / T(a.value.size()));
}

template <class T>
Dual<T> expand(const Dual<T>& s, const Shape& shape) {
  return {k::expand(s.value, shape), detail::tmap(s.tangent, [&](const Tensor<T>& t) { return k::expand(t, shape); })};
}

template <class T>
Dual<T> matmul(const Dual<T>& a, const Dual<T>& b) {
  auto ta = detail::tmap(a.tangent, [&](const Tensor<T>& t) { return k::matmul(t, b.value); });
  auto tb = detail::tmap(b.tangent, [&](const Tensor<T>& t) { return k::matmul(a.value, t); });
  return {k::matmul(a.value, b.value), detail::tadd(std::move(ta), tb)};
}

template <class T>
Dual<T> transpose(const Dual<T>& a) {
  return {k::transpose(a.value), detail::tmap(a.tangent, [](const Tensor<T>& t) { return k::transpose(t); })};
}

template <class T>
Dual<T> conv2d(const Dual<T>& x, const Dual<T>& w) {
  auto tx = detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::conv2d(t, w.value); });
  auto tw = detail::tmap(w.tangent, [&](const Tensor<T>& t) { return k::conv2d(x.value, t); });
  return {k::conv2d(x.value, w.value), detail::tadd(std::move(tx), tw)};
}

template <class T>
Dual<T> conv2d_input_grad(const Dual<T>& gy, const Dual<T>& w) {
  auto tg = detail::tmap(gy.tangent, [&](const Tensor<T>& t) { return k::conv2d_input_grad(t, w.value); });
  auto tw = detail::tmap(w.tangent, [&](const Tensor<T>& t) { return k::conv2d_input_grad(gy.value, t); });
  return {k::conv2d_input_grad(gy.value, w.value), detail::tadd(std::move(tg), tw)};
}

template <class T>
Dual<T> conv2d_weight_grad(const Dual<T>& x, const Dual<T>& gy, std::size_t ks) {
  auto tx = detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::conv2d_weight_grad(t, gy.value, ks); });
  auto tg = detail::tmap(gy.tangent, [&](const Tensor<T>& t) { return k::conv2d_weight_grad(x.value, t, ks); });
  return {k::conv2d_weight_grad(x.value, gy.value, ks), detail::tadd(std::move(tx), tg)};
}

template <class T>
Dual<T> spatial_sum(const Dual<T>& x) {
  return {k::spatial_sum(x.value), detail::tmap(x.tangent, [](const Tensor<T>& t) { return k::spatial_sum(t); })};
}

template <class T>
Dual<T> spatial_broadcast(const Dual<T>& b, std::size_t h, std::size_t w) {
  return {k::spatial_broadcast(b.value, h, w),
          detail::tmap(b.tangent, [&](const Tensor<T>& t) { return k::spatial_broadcast(t, h, w); })};
}

template <class T>
Dual<T> bias_add(const Dual<T>& x, const Dual<T>& b) {
  return add(x, spatial_broadcast(b, x.value.dim(1), x.value.dim(2)));
}

template <class T>
Dual<T> channel_sum(const Dual<T>& x) {
  return {k::channel_sum(x.value), detail::tmap(x.tangent, [](const Tensor<T>& t) { return k::channel_sum(t); })};
}

template <class T>
Dual<T> channel_broadcast(const Dual<T>& x, std::size_t c) {
  return {k::channel_broadcast(x.value, c),
          detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::channel_broadcast(t, c); })};
}

template <class T>
Dual<T> log_softmax(const Dual<T>& x) {
  auto y = k::log_softmax(x.value);
  Tensor<T> t;
  if (x.has_tangent()) {
    auto p = k::exp(y);
    t = k::sub(x.tangent, k::channel_broadcast(k::channel_sum(k::mul(p, x.tangent)), x.value.dim(0)));
  }
  return {std::move(y), std::move(t)};
}

template <class T>
Dual<T> softmax(const Dual<T>& x) {
  return exp(log_softmax(x));
}

template <class T>
Dual<T> gather_channels(const Dual<T>& x, const LabelMap& l) {
  return {k::gather_channels(x.value, l), detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::gather_channels(t, l); })};
}

template <class T>
Dual<T> scatter_channels(const Dual<T>& g, const LabelMap& l, std::size_t c) {
  return {k::scatter_channels(g.value, l, c),
          detail::tmap(g.tangent, [&](const Tensor<T>& t) { return k::scatter_channels(t, l, c); })};
}

template <class T>
Dual<T> upsample2x(const Dual<T>& x) {
  return {k::upsample2x(x.value), detail::tmap(x.tangent, [](const Tensor<T>& t) { return k::upsample2x(t); })};
}

template <class T>
Dual<T> sumpool2x(const Dual<T>& x) {
  return {k::sumpool2x(x.value), detail::tmap(x.tangent, [](const Tensor<T>& t) { return k::sumpool2x(t); })};
}

template <class T>
Dual<T> avgpool2x(const Dual<T>& x) {
  return scale(sumpool2x(x), T(0.25));
}

template <class T>
Dual<T> concat_channels(const Dual<T>& a, const Dual<T>& b) {
  Tensor<T> t;
  if (a.has_tangent() || b.has_tangent()) t = k::concat_channels(a.tangent_or_zero(), b.tangent_or_zero());
  return {k::concat_channels(a.value, b.value), std::move(t)};
}

template <class T>
Dual<T> slice_channels(const Dual<T>& x, std::size_t b, std::size_t n) {
  return {k::slice_channels(x.value, b, n),
          detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::slice_channels(t, b, n); })};
}

template <class T>
Dual<T> pad_channels(const Dual<T>& x, std::size_t b, std::size_t total) {
  return {k::pad_channels(x.value, b, total),
          detail::tmap(x.tangent, [&](const Tensor<T>& t) { return k::pad_channels(t, b, total); })};
}

template <class T> const Tensor<T>& value_of(const Dual<T>& d) { return d.value; }

// Lifts a constant tensor into the value kind V.
template <class V>
struct lift;

template <class T>
struct lift<Tensor<T>> {
  static Tensor<T> constant(Tensor<T> t) { return t; }
};
template <class T>
struct lift<Var<T>> {
  static Var<T> constant(Tensor<T> t) { return Var<T>::constant(std::move(t)); }
};
template <class T>
struct lift<Dual<T>> {
  static Dual<T> constant(Tensor<T> t) { return Dual<T>(std::move(t)); }
};

template <class V, class T>
V constant(Tensor<T> t) {
  return lift<V>::constant(std::move(t));
}

}  // namespace gmlabel::ad
