#pragma once

// Randomized finite-difference verification of the kernel set, in f64.
// Each registered case maps a few random inputs to a tensor; the output is
// scalarized with a random projection so reverse mode can be compared against
// central differences over every input coordinate, and forward mode against a
// central difference along a random tangent.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gmlabel/ad/ops.hpp"
#include "gmlabel/rng.hpp"

namespace gmlabel::ad {

using InputGen = std::function<std::vector<Tensor<double>>(Rng&)>;

struct GradCheckCase {
  std::string name;
  InputGen make_inputs;
  std::function<Tensor<double>(std::span<const Tensor<double>>)> eval;
  std::function<Var<double>(std::span<const Var<double>>)> reverse;
  std::function<Dual<double>(std::span<const Dual<double>>)> forward;
};

template <class F>
GradCheckCase make_case(std::string name, InputGen gen, F f) {
  return {std::move(name), std::move(gen),
          [f](std::span<const Tensor<double>> in) { return f(in); },
          [f](std::span<const Var<double>> in) { return f(in); },
          [f](std::span<const Dual<double>> in) { return f(in); }};
}

struct GradCheckEntry {
  std::string op;
  int trials = 0;
  double max_rel_err_reverse = 0;
  double max_rel_err_forward = 0;
  bool passed = false;
};

struct GradCheckReport {
  double tol = 0;
  std::vector<GradCheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
};

inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

inline Tensor<double> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Values bounded away from zero, for piecewise-linear kernels.
inline Tensor<double> random_nonzero(Rng& rng, Shape s, double margin = 0.1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) {
    const double m = margin + rng.uniform();
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline LabelMap pattern_labels(std::size_t h, std::size_t w, std::size_t c) {
  LabelMap l(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) l.at(y, x) = static_cast<std::uint8_t>((3 * y + 7 * x + 1) % c);
  return l;
}

inline std::map<std::string, GradCheckCase> default_gradcheck_cases() {
  std::map<std::string, GradCheckCase> cases;
  auto reg = [&](GradCheckCase c) { cases.emplace(c.name, std::move(c)); };
  auto two = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor<double>>{random_tensor(r, a), random_tensor(r, b)}; };
  };
  auto one = [](Shape a) { return [a](Rng& r) { return std::vector<Tensor<double>>{random_tensor(r, a)}; }; };

  reg(make_case("add", two({2, 3, 3}, {2, 3, 3}), [](auto in) { return add(in[0], in[1]); }));
  reg(make_case("sub", two({2, 3, 3}, {2, 3, 3}), [](auto in) { return sub(in[0], in[1]); }));
  reg(make_case("mul", two({2, 3, 3}, {2, 3, 3}), [](auto in) { return mul(in[0], in[1]); }));
  reg(make_case("scale", one({2, 3, 3}), [](auto in) { return scale(in[0], 1.7); }));
  reg(make_case("exp", one({2, 3, 3}), [](auto in) { return exp(in[0]); }));
  reg(make_case("relu", [](Rng& r) { return std::vector<Tensor<double>>{random_nonzero(r, {3, 4, 4})}; },
                [](auto in) { return relu(in[0]); }));
  reg(make_case("sum", one({2, 3, 3}), [](auto in) { return sum(in[0]); }));
  reg(make_case("mean", one({2, 3, 3}), [](auto in) { return mean(in[0]); }));
  reg(make_case("matmul", two({3, 4}, {4, 2}), [](auto in) { return matmul(in[0], in[1]); }));
  reg(make_case("transpose", one({3, 4}), [](auto in) { return transpose(in[0]); }));
  reg(make_case("conv2d_3x3", two({2, 5, 5}, {3, 2, 3, 3}), [](auto in) { return conv2d(in[0], in[1]); }));
  reg(make_case("conv2d_1x1", two({4, 3, 3}, {2, 4, 1, 1}), [](auto in) { return conv2d(in[0], in[1]); }));
  reg(make_case("conv2d_input_grad", two({3, 4, 4}, {3, 2, 3, 3}),
                [](auto in) { return conv2d_input_grad(in[0], in[1]); }));
  reg(make_case("conv2d_weight_grad", two({2, 4, 4}, {3, 4, 4}),
                [](auto in) { return conv2d_weight_grad(in[0], in[1], 3); }));
  reg(make_case("spatial_sum", one({3, 2, 4}), [](auto in) { return spatial_sum(in[0]); }));
  reg(make_case("spatial_broadcast", one({3}), [](auto in) { return spatial_broadcast(in[0], 2, 3); }));
  reg(make_case("bias_add", two({3, 2, 2}, {3}), [](auto in) { return bias_add(in[0], in[1]); }));
  reg(make_case("channel_sum", one({3, 2, 4}), [](auto in) { return channel_sum(in[0]); }));
  reg(make_case("channel_broadcast", one({1, 3, 2}), [](auto in) { return channel_broadcast(in[0], 4); }));
  reg(make_case("log_softmax", one({4, 3, 3}), [](auto in) { return log_softmax(in[0]); }));
  reg(make_case("gather_channels", one({4, 3, 3}),
                [](auto in) { return gather_channels(in[0], pattern_labels(3, 3, 4)); }));
  reg(make_case("scatter_channels", one({1, 3, 3}),
                [](auto in) { return scatter_channels(in[0], pattern_labels(3, 3, 4), 4); }));
  reg(make_case("upsample2x", one({2, 2, 3}), [](auto in) { return upsample2x(in[0]); }));
  reg(make_case("sumpool2x", one({2, 4, 4}), [](auto in) { return sumpool2x(in[0]); }));
  reg(make_case("avgpool2x", one({2, 4, 6}), [](auto in) { return avgpool2x(in[0]); }));
  reg(make_case("concat_channels", two({2, 3, 3}, {1, 3, 3}), [](auto in) { return concat_channels(in[0], in[1]); }));
  reg(make_case("slice_channels", one({4, 2, 2}), [](auto in) { return slice_channels(in[0], 1, 2); }));
  reg(make_case("pad_channels", one({2, 2, 2}), [](auto in) { return pad_channels(in[0], 1, 4); }));
  reg(make_case("softmax_ce", one({5, 3, 3}), [](auto in) {
    return scale(mean(gather_channels(log_softmax(in[0]), pattern_labels(3, 3, 5))), -1.0);
  }));
  reg(make_case("soft_ce", two({4, 3, 3}, {4, 3, 3}), [](auto in) {
    return scale(sum(mul(softmax(in[1]), log_softmax(in[0]))), -1.0 / 9.0);
  }));
  return cases;
}

namespace detail {

inline double projected(const GradCheckCase& c, const std::vector<Tensor<double>>& in, const Tensor<double>& proj) {
  return dot(c.eval(std::span<const Tensor<double>>(in)), proj);
}

}  // namespace detail

inline GradCheckEntry run_gradcheck_case(const GradCheckCase& c, int trials, double tol, std::uint64_t seed = 7,
                                         double step = 1e-5) {
  GradCheckEntry e{c.name, trials};
  Rng rng(stream_seed(seed, Stream::gradcheck, hash_string(c.name)));
  for (int t = 0; t < trials; ++t) {
    auto in = c.make_inputs(rng);
    const Tensor<double> out0 = c.eval(std::span<const Tensor<double>>(in));
    const Tensor<double> proj = random_tensor(rng, out0.shape());

    // Reverse mode against coordinatewise central differences.
    std::vector<Var<double>> leaves;
    for (const auto& x : in) leaves.push_back(Var<double>::leaf(x));
    auto out = c.reverse(std::span<const Var<double>>(leaves));
    auto loss = sum(mul(out, Var<double>::constant(proj)));
    auto gs = grad(loss, leaves);
    std::vector<double> ad, fd;
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t j = 0; j < in[i].size(); ++j) {
        ad.push_back(gs[i].value()[j]);
        auto plus = in, minus = in;
        plus[i][j] += step;
        minus[i][j] -= step;
        fd.push_back((detail::projected(c, plus, proj) - detail::projected(c, minus, proj)) / (2 * step));
      }
    e.max_rel_err_reverse = std::max(e.max_rel_err_reverse, relative_error(ad, fd));

    // Forward mode along a random tangent.
    std::vector<Dual<double>> duals;
    std::vector<Tensor<double>> tangents;
    for (const auto& x : in) {
      tangents.push_back(random_tensor(rng, x.shape()));
      duals.emplace_back(x, tangents.back());
    }
    auto dout = c.forward(std::span<const Dual<double>>(duals));
    auto plus = in, minus = in;
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t j = 0; j < in[i].size(); ++j) {
        plus[i][j] += step * tangents[i][j];
        minus[i][j] -= step * tangents[i][j];
      }
    const auto fp = c.eval(std::span<const Tensor<double>>(plus));
    const auto fm = c.eval(std::span<const Tensor<double>>(minus));
    std::vector<double> fwd_fd(fp.size());
    for (std::size_t j = 0; j < fp.size(); ++j) fwd_fd[j] = (fp[j] - fm[j]) / (2 * step);
    const auto tan = dout.tangent_or_zero();
    e.max_rel_err_forward = std::max(e.max_rel_err_forward, relative_error(tan.values(), fwd_fd));
  }
  e.passed = e.max_rel_err_reverse <= tol && e.max_rel_err_forward <= tol;
  return e;
}

// op_name "all" runs every registered case.
inline GradCheckReport check_gradients(const std::string& op_name, int trials, double tol,
                                       const std::map<std::string, GradCheckCase>& cases = default_gradcheck_cases()) {
  GradCheckReport report{tol, {}};
  if (op_name == "all") {
    for (const auto& [name, c] : cases) report.entries.push_back(run_gradcheck_case(c, trials, tol));
    return report;
  }
  auto it = cases.find(op_name);
  if (it == cases.end()) throw Error("unknown_op", "check_gradients: no registered op named '" + op_name + "'");
  report.entries.push_back(run_gradcheck_case(it->second, trials, tol));
  return report;
}

}  // namespace gmlabel::ad
