#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gmlabel/ad/functional.hpp"
#include "gmlabel/ad/gradcheck.hpp"
#include "gmlabel/optim.hpp"

using namespace gmlabel;
using ad::Dual;
using ad::Var;

namespace {

ParamSet<double> vec_params(std::vector<double> v) {
  ParamSet<double> p;
  const std::size_t n = v.size();
  p.add({"theta", LayerKind::dense, 0, true}, Tensor<double>({n}, std::move(v)));
  return p;
}

// Central differences over every parameter coordinate; test-side oracle.
template <class F>
std::vector<double> fd_gradient(F f, ParamSet<double> p, double h = 1e-5) {
  std::vector<double> out;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.tensors[i].size(); ++j) {
      const double x0 = p.tensors[i][j];
      p.tensors[i][j] = x0 + h;
      const double fp = f(p);
      p.tensors[i][j] = x0 - h;
      const double fm = f(p);
      p.tensors[i][j] = x0;
      out.push_back((fp - fm) / (2 * h));
    }
  return out;
}

std::vector<double> flatten(const GradientBundle<double>& g) {
  std::vector<double> out;
  for (const auto& t : g.grads) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

// Two conv layers with relu, pixelwise CE against a fixed mask.
template <class V>
V tiny_net_loss(std::span<const V> p, const Tensor<double>& x, const LabelMap& y) {
  using namespace gmlabel::ad;
  auto h = relu(bias_add(conv2d(constant<V>(x), p[0]), p[1]));
  auto logits = bias_add(conv2d(h, p[2]), p[3]);
  return scale(mean(gather_channels(log_softmax(logits), y)), -1.0);
}

ParamSet<double> tiny_net_params(Rng& rng) {
  ParamSet<double> p;
  p.add({"c1", LayerKind::conv}, ad::random_tensor(rng, {4, 3, 3, 3}, 0.5));
  p.add({"b1", LayerKind::bias}, ad::random_tensor(rng, {4}, 0.1));
  p.add({"c2", LayerKind::conv}, ad::random_tensor(rng, {3, 4, 3, 3}, 0.5));
  p.add({"b2", LayerKind::bias}, ad::random_tensor(rng, {3}, 0.1));
  return p;
}

}  // namespace

TEST(Grad, SumOfSquares) {
  auto g = ad::grad([](auto p) { return ad::sum(ad::mul(p[0], p[0])); }, vec_params({1, 2}));
  EXPECT_DOUBLE_EQ(g[0][0], 2.0);
  EXPECT_DOUBLE_EQ(g[0][1], 4.0);
}

TEST(Grad, Product) {
  ParamSet<double> p;
  p.add({"a", LayerKind::dense}, Tensor<double>::scalar(3));
  p.add({"b", LayerKind::dense}, Tensor<double>::scalar(5));
  auto g = ad::grad([](auto v) { return ad::mul(v[0], v[1]); }, p);
  EXPECT_DOUBLE_EQ(g[0].item(), 5.0);
  EXPECT_DOUBLE_EQ(g[1].item(), 3.0);
}

TEST(Grad, ConvNetMatchesFiniteDifferences) {
  Rng rng(11);
  auto p = tiny_net_params(rng);
  auto x = ad::random_tensor(rng, {3, 6, 6});
  auto y = ad::pattern_labels(6, 6, 3);
  auto g = ad::grad([&](auto v) { return tiny_net_loss<Var<double>>(v, x, y); }, p);
  auto fd = fd_gradient(
      [&](const ParamSet<double>& q) { return tiny_net_loss<Tensor<double>>(std::span(q.tensors), x, y).item(); }, p);
  EXPECT_LE(ad::relative_error(flatten(g), fd), 1e-4);
}

TEST(Grad, DoesNotMutateParams) {
  Rng rng(3);
  auto p = tiny_net_params(rng);
  const auto before = p;
  auto x = ad::random_tensor(rng, {3, 4, 4});
  auto y = ad::pattern_labels(4, 4, 3);
  (void)ad::grad([&](auto v) { return tiny_net_loss<Var<double>>(v, x, y); }, p);
  EXPECT_EQ(p, before);
}

TEST(Grad, RejectsNonScalarLoss) {
  EXPECT_THROW(ad::grad([](auto p) { return ad::mul(p[0], p[0]); }, vec_params({1, 2})), ShapeError);
}

TEST(Grad, RejectsNaNForward) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ad::grad([](auto p) { return ad::sum(p[0]); }, vec_params({1, nan})), NumericError);
}

TEST(Grad, SecondOrderThroughRecordedBackward) {
  // f = sum(x^3); df/dx = 3x^2; d/dx sum(df/dx * u) = 6 x u.
  auto x = Var<double>::leaf(Tensor<double>({2}, {1.5, -2.0}));
  auto u = Var<double>::constant(Tensor<double>({2}, {0.3, 0.7}));
  auto f = ad::sum(ad::mul(x, ad::mul(x, x)));
  auto g = ad::grad(f, {x}, true);
  auto h = ad::grad(ad::sum(ad::mul(g[0], u)), {x});
  EXPECT_NEAR(h[0].value()[0], 6 * 1.5 * 0.3, 1e-12);
  EXPECT_NEAR(h[0].value()[1], 6 * -2.0 * 0.7, 1e-12);
}

TEST(Grad, DoubleBackwardThroughConvNet) {
  // Gradient of <grad_theta L, u> wrt theta (a Hessian-vector product)
  // against central differences of the first-order gradient.
  Rng rng(5);
  auto p = tiny_net_params(rng);
  auto x = ad::random_tensor(rng, {3, 5, 5});
  auto y = ad::pattern_labels(5, 5, 3);
  GradientBundle<double> u;
  for (const auto& t : p.tensors) u.grads.push_back(ad::random_tensor(rng, t.shape()));

  auto leaves = as_leaves(p);
  auto loss = tiny_net_loss<Var<double>>(std::span<const Var<double>>(leaves), x, y);
  auto g = ad::grad(loss, leaves, true);
  Var<double> gu = Var<double>::constant(Tensor<double>::scalar(0));
  for (std::size_t i = 0; i < g.size(); ++i)
    gu = ad::add(gu, ad::sum(ad::mul(g[i], Var<double>::constant(u[i]))));
  auto hvp = ad::grad(gu, leaves);
  std::vector<double> ad_hvp;
  for (auto& v : hvp) ad_hvp.insert(ad_hvp.end(), v.value().values().begin(), v.value().values().end());

  auto first = [&](const ParamSet<double>& q) {
    auto gb = ad::grad([&](auto v) { return tiny_net_loss<Var<double>>(v, x, y); }, q);
    return gb.dot(u);
  };
  EXPECT_LE(ad::relative_error(ad_hvp, fd_gradient(first, p)), 1e-4);
}

TEST(Jvp, Square) {
  ParamSet<double> p;
  p.add({"t", LayerKind::dense}, Tensor<double>::scalar(3));
  GradientBundle<double> v{{Tensor<double>::scalar(1)}};
  auto out = ad::jvp([](auto q) { return ad::mul(q[0], q[0]); }, p, v);
  EXPECT_DOUBLE_EQ(out.item(), 6.0);
}

TEST(Jvp, LinearMapGivesTangentTimesInput) {
  Rng rng(2);
  ParamSet<double> p;
  p.add({"W", LayerKind::dense}, ad::random_tensor(rng, {3, 4}));
  auto u = ad::random_tensor(rng, {4, 1});
  GradientBundle<double> v{{ad::random_tensor(rng, {3, 4})}};
  auto out = ad::jvp([&](auto q) { return ad::matmul(q[0], ad::Dual<double>(u)); }, p, v);
  auto expected = kernels::matmul(v[0], u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(Jvp, LogSoftmaxOfConvNetMatchesCentralDifferences) {
  Rng rng(8);
  auto p = tiny_net_params(rng);
  auto x = ad::random_tensor(rng, {3, 6, 6});
  GradientBundle<double> v;
  for (const auto& t : p.tensors) v.grads.push_back(ad::random_tensor(rng, t.shape()));
  auto f = [&](auto q) {
    using V = typename std::decay_t<decltype(q)>::value_type;
    using namespace gmlabel::ad;
    auto h = relu(bias_add(conv2d(constant<V>(x), q[0]), q[1]));
    return log_softmax(bias_add(conv2d(h, q[2]), q[3]));
  };
  auto out = ad::jvp(f, p, v);
  const double eps = 1e-5;
  auto plus = p, minus = p;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.tensors[i].size(); ++j) {
      plus.tensors[i][j] += eps * v[i][j];
      minus.tensors[i][j] -= eps * v[i][j];
    }
  auto fp = f(std::span<const Tensor<double>>(plus.tensors));
  auto fm = f(std::span<const Tensor<double>>(minus.tensors));
  std::vector<double> fd(fp.size());
  for (std::size_t j = 0; j < fp.size(); ++j) fd[j] = (fp[j] - fm[j]) / (2 * eps);
  EXPECT_LE(ad::relative_error(out.values(), fd), 1e-4);
}

TEST(Jvp, RejectsMisalignedTangent) {
  auto p = vec_params({1, 2});
  GradientBundle<double> v{{Tensor<double>({3})}};
  EXPECT_THROW(ad::jvp([](auto q) { return ad::sum(q[0]); }, p, v), ShapeError);
}

TEST(Sgd, PlainStep) {
  ParamSet<double> p = vec_params({1});
  OptState<double> s(0.1, 0.0);
  sgd_step(p, GradientBundle<double>{{Tensor<double>({1}, {2.0})}}, s);
  EXPECT_NEAR(p.tensors[0][0], 0.8, 1e-15);
}

TEST(Sgd, MomentumRecursion) {
  ParamSet<double> p = vec_params({0});
  OptState<double> s(1.0, 0.9);
  GradientBundle<double> g{{Tensor<double>({1}, {1.0})}};
  sgd_step(p, g, s);
  sgd_step(p, g, s);
  EXPECT_NEAR(p.tensors[0][0], -2.9, 1e-15);
}

TEST(Sgd, Defaults) {
  OptState<float> s;
  EXPECT_FLOAT_EQ(s.lr, 0.001f);
  EXPECT_FLOAT_EQ(s.momentum, 0.9f);
}

TEST(Sgd, Errors) {
  ParamSet<double> p = vec_params({0, 1});
  OptState<double> s;
  EXPECT_THROW(sgd_step(p, GradientBundle<double>{{Tensor<double>({3})}}, s), ShapeError);
  EXPECT_THROW(sgd_step(p, GradientBundle<double>{{Tensor<double>({2}, {0.0, NAN})}}, s), NumericError);
}

TEST(Sgd, BitIdenticalAcrossRuns) {
  Rng rng(4);
  auto p0 = tiny_net_params(rng);
  GradientBundle<double> g;
  for (const auto& t : p0.tensors) g.grads.push_back(ad::random_tensor(rng, t.shape()));
  auto run = [&] {
    auto p = p0;
    OptState<double> s;
    for (int i = 0; i < 5; ++i) sgd_step(p, g, s);
    return p;
  };
  EXPECT_EQ(param_hash(run()), param_hash(run()));
}

TEST(CheckGradients, ReluPassesTightTolerance) {
  auto r = ad::check_gradients("relu", 5, 1e-6);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_TRUE(r.passed()) << r.entries[0].max_rel_err_reverse;
}

TEST(CheckGradients, SoftmaxCrossEntropyPasses) {
  EXPECT_TRUE(ad::check_gradients("softmax_ce", 5, 1e-4).passed());
}

TEST(CheckGradients, EveryRegisteredOpPasses) {
  auto r = ad::check_gradients("all", 3, 1e-4);
  for (const auto& e : r.entries)
    EXPECT_TRUE(e.passed) << e.op << " rev=" << e.max_rel_err_reverse << " fwd=" << e.max_rel_err_forward;
}

TEST(CheckGradients, FlagsBrokenKernel) {
  // A square kernel whose backward claims d(x^2)/dx = x.
  auto broken = [](auto in) {
    using V = typename std::decay_t<decltype(in)>::value_type;
    if constexpr (std::is_same_v<V, Var<double>>) {
      const auto& x = in[0];
      return ad::make_op<double>("broken_square", kernels::mul(x.value(), x.value()), {x},
                                 [x](const Var<double>& g) { return std::vector<Var<double>>{ad::mul(g, x)}; });
    } else {
      return ad::mul(in[0], in[0]);
    }
  };
  std::map<std::string, ad::GradCheckCase> cases;
  cases.emplace("broken_square", ad::make_case("broken_square",
                                               [](Rng& r) { return std::vector{ad::random_tensor(r, {5})}; }, broken));
  auto report = ad::check_gradients("broken_square", 2, 1e-4, cases);
  EXPECT_FALSE(report.passed());
  EXPECT_GT(report.entries[0].max_rel_err_reverse, 0.1);
}

TEST(CheckGradients, UnknownOp) {
  EXPECT_THROW(ad::check_gradients("no_such_op", 1, 1e-4), Error);
}

// ---- properties -------------------------------------------------------------

namespace {

// Random chains of up to four shape-preserving ops applied to one (C,H,W) input.
template <class V>
V apply_chain(const std::vector<int>& chain, V x, const Tensor<double>& w, const Tensor<double>& other) {
  using namespace gmlabel::ad;
  for (int op : chain) {
    switch (op) {
      case 0: x = conv2d(x, constant<V>(w)); break;
      case 1: x = relu(x); break;
      case 2: x = log_softmax(x); break;
      case 3: x = mul(x, constant<V>(other)); break;
      case 4: x = upsample2x(avgpool2x(x)); break;
      case 5: x = exp(scale(x, 0.3)); break;
      default: x = add(x, constant<V>(other)); break;
    }
  }
  return x;
}

}  // namespace

TEST(Properties, RandomCompositionsMatchFiniteDifferences) {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int> chain(1 + rng.uniform_index(4));
    bool has_relu = false;
    for (auto& c : chain) {
      c = static_cast<int>(rng.uniform_index(7));
      has_relu = has_relu || c == 1;
    }
    auto x0 = ad::random_tensor(rng, {3, 4, 4});
    auto w = ad::random_tensor(rng, {3, 3, 3, 3}, 0.4);
    auto other = ad::random_tensor(rng, {3, 4, 4});
    auto proj = ad::random_tensor(rng, {3, 4, 4});
    auto f = [&](const Tensor<double>& x) { return dot(apply_chain(chain, x, w, other), proj); };

    auto leaf = Var<double>::leaf(x0);
    auto g = ad::grad(ad::sum(ad::mul(apply_chain(chain, leaf, w, other), Var<double>::constant(proj))), {leaf});
    std::vector<double> fd(x0.size());
    const double h = 1e-5;
    for (std::size_t j = 0; j < x0.size(); ++j) {
      auto p = x0, m = x0;
      p[j] += h;
      m[j] -= h;
      fd[j] = (f(p) - f(m)) / (2 * h);
    }
    const double err = ad::relative_error(g[0].value().values(), fd);
    // A relu input landing within h of zero makes the difference quotient invalid.
    if (has_relu && err > 1e-4) continue;
    EXPECT_LE(err, 1e-4) << "trial " << trial;
  }
}

TEST(Properties, JvpAgreesWithGrad) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = tiny_net_params(rng);
    auto x = ad::random_tensor(rng, {3, 5, 5});
    auto y = ad::pattern_labels(5, 5, 3);
    GradientBundle<double> v;
    for (const auto& t : p.tensors) v.grads.push_back(ad::random_tensor(rng, t.shape()));
    auto g = ad::grad([&](auto q) { return tiny_net_loss<Var<double>>(q, x, y); }, p);
    auto jv = ad::jvp([&](auto q) { return tiny_net_loss<Dual<double>>(q, x, y); }, p, v);
    EXPECT_NEAR(g.dot(v), jv.item(), 1e-6 * std::max(1.0, std::abs(jv.item())));
  }
}

TEST(Properties, GradIsLinearInLoss) {
  Rng rng(31);
  auto p = tiny_net_params(rng);
  auto x = ad::random_tensor(rng, {3, 5, 5});
  auto y = ad::pattern_labels(5, 5, 3);
  const double alpha = -2.5;
  auto g1 = ad::grad([&](auto q) { return tiny_net_loss<Var<double>>(q, x, y); }, p);
  auto g2 = ad::grad([&](auto q) { return ad::scale(tiny_net_loss<Var<double>>(q, x, y), alpha); }, p);
  for (std::size_t i = 0; i < g1.size(); ++i)
    for (std::size_t j = 0; j < g1[i].size(); ++j) EXPECT_NEAR(g2[i][j], alpha * g1[i][j], 1e-13);
}

TEST(Properties, SinglePrecisionWithinLooserTolerance) {
  Rng rng(13);
  auto pd = tiny_net_params(rng);
  auto x = ad::random_tensor(rng, {3, 6, 6});
  auto y = ad::pattern_labels(6, 6, 3);
  auto pf = pd.cast<float>();
  auto xf = x.cast<float>();
  auto loss_f = [&](auto q) {
    using namespace gmlabel::ad;
    using V = typename std::decay_t<decltype(q)>::value_type;
    auto h = relu(bias_add(conv2d(constant<V>(xf), q[0]), q[1]));
    return scale(mean(gather_channels(log_softmax(bias_add(conv2d(h, q[2]), q[3])), y)), -1.0f);
  };
  auto g = ad::grad(loss_f, pf);
  auto fd = fd_gradient(
      [&](const ParamSet<double>& q) { return tiny_net_loss<Tensor<double>>(std::span(q.tensors), x, y).item(); }, pd);
  std::vector<double> gf;
  for (const auto& t : g.grads) gf.insert(gf.end(), t.values().begin(), t.values().end());
  EXPECT_LE(ad::relative_error(gf, fd), 1e-2);
}
