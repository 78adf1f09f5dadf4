// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--report path]
//
// Expensive training runs are memoized and shared between criteria; each line
// reports the wall time newly spent on that criterion. A JSON report with all
// measured values, including the method comparison table, is written at the end.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gmlabel/ad/functional.hpp"
#include "gmlabel/ad/gradcheck.hpp"
#include "gmlabel/gm/taylor.hpp"
#include "gmlabel/harness/run.hpp"

using namespace gmlabel;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSeeds = 3;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i], 3);
  return s + "]";
}

// ---- desk-scale experiment recipe --------------------------------------------

struct RunSpec {
  harness::Method method = harness::Method::gm;
  world::SetMode mode = world::SetMode::real;
  int seed = 0;
  std::size_t k = 1;
  gm::StatePolicy policy = gm::StatePolicy::alternate;
  std::string layers = "all";
  double quality = 1.0;
  models::Arch arch = models::Arch::unet_s;
  std::size_t steps = 2000;
  std::size_t eval_every = 100;

  std::string key() const {
    std::ostringstream os;
    os << harness::method_name(method) << '/' << world::mode_name(mode) << "/s" << seed << "/k" << k << '/'
       << gm::policy_name(policy) << '/' << layers << "/q" << quality << '/' << models::arch_name(arch) << "/t" << steps;
    if (eval_every != 100) os << "/e" << eval_every;
    return os.str();
  }
};

harness::ExperimentConfig desk_config(const RunSpec& r) {
  harness::ExperimentConfig c;
  c.name = r.key();
  c.method = r.method;
  c.world.image_size = 32;
  c.world.pyramid_levels = {4, 8, 16, 32};
  c.world.quality = r.quality;
  c.annotator_width = 16;
  c.segmentor = models::SegmentorSpec::for_arch(r.arch, c.world.num_classes, c.world.image_size);
  c.segmentor.input_resolution = 16;
  c.init_seed = 300 + r.seed;

  c.gm.steps = r.steps;
  c.gm.update_interval = r.k;
  c.gm.policy = r.policy;
  c.gm.warmstart_steps = r.policy == gm::StatePolicy::warmstart ? 1000 : 0;
  c.gm.layers = {r.layers};
  c.gm.lr_annotator = 0.01;
  c.gm.lr_segmentor = 0.001;
  c.gm.annotator_clip = 1.0;
  c.gm.input_resolution = 16;
  c.gm.eval_every = r.eval_every;
  c.gm.val_size = 32;
  c.gm.seed = 200 + r.seed;

  c.supervised.steps = 2000;
  c.supervised.lr = 0.01;
  c.supervised.seed = 600 + r.seed;
  c.pseudo.segmentor_steps = 2000;
  c.pseudo.lr_segmentor = 0.01;
  c.pseudo.pool_size = 256;
  c.pseudo.annotator = c.supervised;

  c.labeled = {10, r.mode, static_cast<std::uint64_t>(100 + r.seed)};
  c.eval.test_size = 64;
  c.eval.test_seed = 3;
  c.eval.export_size = 200;
  c.eval.export_seed = 400 + r.seed;
  c.eval.train.steps = 2000;
  c.eval.train.lr = 0.01;
  c.eval.train.seed = 500 + r.seed;
  c.eval.train.test_size = c.eval.test_size;
  c.eval.train.test_seed = c.eval.test_seed;
  c.record_wall_clock = false;
  return c;
}

struct RunOut {
  harness::ExperimentConfig config;
  harness::TrainedModels models;
  harness::AnnotatorScore final_score;     // final annotator on the test stream
  harness::AnnotatorScore selected_score;  // validation-selected annotator
  double step_ms_median = 0;
  double seconds = 0;
  std::map<models::Arch, harness::DownstreamResult<float>> downstream;
  fs::path dataset;
};

class Runs {
 public:
  explicit Runs(fs::path scratch) : scratch_(std::move(scratch)) {}

  RunOut& get(const RunSpec& spec) {
    auto it = cache_.find(spec.key());
    if (it != cache_.end()) return it->second;
    const auto t0 = Clock::now();
    RunOut out;
    out.config = desk_config(spec);
    out.models = harness::train_method(out.config);
    const auto& c = out.config;
    out.final_score = harness::evaluate_annotator(c.world, out.models.final_annotator, c.eval.test_size, c.eval.test_seed);
    out.selected_score = harness::evaluate_annotator(c.world, out.models.annotator, c.eval.test_size, c.eval.test_seed);
    std::vector<double> ms;
    for (const auto& r : out.models.records) ms.push_back(r.wall_ms);
    out.step_ms_median = ms.empty() ? 0.0 : median(ms);
    out.seconds = seconds_since(t0);
    std::cerr << "  [run] " << spec.key() << "  " << fmt(out.seconds, 1) << " s  test mIoU " << fmt(out.final_score.miou)
              << " FG " << fmt(out.final_score.fg_miou) << '\n';
    return cache_.emplace(spec.key(), std::move(out)).first->second;
  }

  // Downstream FG-mIoU of a segmentor of `arch` trained on the run's exported dataset.
  const harness::DownstreamResult<float>& downstream(const RunSpec& spec, models::Arch arch) {
    auto& run = get(spec);
    auto it = run.downstream.find(arch);
    if (it != run.downstream.end()) return it->second;
    const auto t0 = Clock::now();
    const auto& c = run.config;
    if (run.dataset.empty()) {
      run.dataset = scratch_ / std::to_string(cache_index(spec));
      fs::remove_all(run.dataset);
      harness::export_dataset(c.world, run.models.annotator, c.eval.export_size, c.eval.export_seed, run.dataset);
    }
    auto loaded = harness::load_dataset(run.dataset);
    auto cd = c;
    cd.eval.downstream_arch = arch;
    auto res = harness::train_downstream<float>(loaded.data, c.world, harness::downstream_spec(cd), c.eval.train);
    std::cerr << "  [downstream] " << spec.key() << " -> " << models::arch_name(arch) << "  " << fmt(seconds_since(t0), 1)
              << " s  test FG " << fmt(res.test_fg_miou) << '\n';
    return run.downstream.emplace(arch, std::move(res)).first->second;
  }

  const RunOut* find(const RunSpec& spec) const {
    auto it = cache_.find(spec.key());
    return it == cache_.end() ? nullptr : &it->second;
  }

  nlohmann::json summary() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, r] : cache_) {
      nlohmann::json d = nlohmann::json::object();
      for (const auto& [a, res] : r.downstream) d[std::string(models::arch_name(a))] = res.test_fg_miou;
      j[k] = {{"final_test_miou", r.final_score.miou},
              {"final_test_fg_miou", r.final_score.fg_miou},
              {"selected_test_fg_miou", r.selected_score.fg_miou},
              {"best_step", r.models.best_step},
              {"step_ms_median", r.step_ms_median},
              {"seconds", r.seconds},
              {"downstream_fg_miou", d}};
    }
    return j;
  }

 private:
  std::size_t cache_index(const RunSpec& spec) const {
    return static_cast<std::size_t>(std::distance(cache_.begin(), cache_.find(spec.key())));
  }

  fs::path scratch_;
  std::map<std::string, RunOut> cache_;
};

// ---- f64 oracle fixtures ------------------------------------------------------

template <class F>
double fd_rel_error(ParamSet<double> p, F f, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor<double> out0 = f(std::span<const Tensor<double>>(p.tensors));
  const Tensor<double> proj = ad::random_tensor(rng, out0.shape());
  auto g = ad::grad([&](std::span<const ad::Var<double>> w) { return ad::sum(ad::mul(f(w), ad::Var<double>::constant(proj))); }, p);
  std::vector<double> a, b;
  const double eps = 1e-5;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.tensors[i].size(); ++j) {
      const double old = p.tensors[i][j];
      p.tensors[i][j] = old + eps;
      const double fp = dot(f(std::span<const Tensor<double>>(p.tensors)), proj);
      p.tensors[i][j] = old - eps;
      const double fm = dot(f(std::span<const Tensor<double>>(p.tensors)), proj);
      p.tensors[i][j] = old;
      a.push_back(g[i][j]);
      b.push_back((fp - fm) / (2 * eps));
    }
  return ad::relative_error(a, b);
}

struct Fixture {
  models::Segmentor<double> seg;
  models::Annotator<double> ann;
  gm::LabeledBatch<double> labeled;
  gm::SyntheticBatch<double> synthetic;
  gm::LayerSelection sel;
};

Fixture tiny(std::uint64_t seed, models::Arch arch = models::Arch::unet_s) {
  Fixture f;
  auto ss = models::SegmentorSpec::for_arch(arch, 3, 4);
  ss.widths = arch == models::Arch::unet_s ? std::vector<std::size_t>{3, 4} : std::vector<std::size_t>{4};
  ss.depth = 2;
  f.seg = models::init_segmentor<double>(ss, seed);
  f.ann = models::init_annotator<double>({{2, 4}, 3, 4, 3}, seed + 100);
  Rng rng(seed * 7 + 1);
  for (int j = 0; j < 2; ++j) {
    f.labeled.x.push_back(ad::random_tensor(rng, {3, 4, 4}));
    LabelMap y(4, 4);
    for (auto& v : y.data) v = static_cast<std::uint8_t>(rng.uniform_index(3));
    f.labeled.y.push_back(y);
    f.synthetic.x.push_back(ad::random_tensor(rng, {3, 4, 4}));
    f.synthetic.h.push_back({ad::random_tensor(rng, {3, 2, 2}), ad::random_tensor(rng, {3, 4, 4})});
  }
  f.sel = gm::select_layers(f.seg.params, {"all"});
  return f;
}

std::vector<double> flat(const GradientBundle<double>& g) {
  std::vector<double> v;
  for (const auto& t : g.grads) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

// ---- criteria ---------------------------------------------------------------

struct Verdict {
  bool pass = false;
  std::string detail;
  nlohmann::json data = nlohmann::json::object();
};

Verdict c1_gradients() {
  Verdict v;
  auto report = ad::check_gradients("all", 3, 1e-4);
  double worst_op = 0;
  std::string worst_name;
  for (const auto& e : report.entries) {
    const double m = std::max(e.max_rel_err_reverse, e.max_rel_err_forward);
    if (m >= worst_op) worst_op = m, worst_name = e.op;
    v.data["ops"][e.op] = m;
  }
  auto a = models::init_annotator<double>({{2, 4}, 3, 4, 3}, 6);
  Rng rng(7);
  std::vector<Tensor<double>> h = {ad::random_tensor(rng, {3, 2, 2}), ad::random_tensor(rng, {3, 4, 4})};
  const double ann_err = fd_rel_error(a.params, [&](auto w) {
    using V = std::decay_t<decltype(w[0])>;
    std::vector<V> hv;
    for (const auto& t : h) hv.push_back(ad::constant<V>(t));
    return ad::log_softmax(a.template forward<V>(w, std::span<const V>(hv)));
  }, 8);
  double seg_err = 0;
  for (auto arch : {models::Arch::unet_s, models::Arch::convstack}) {
    auto ss = models::SegmentorSpec::for_arch(arch, 3, 4);
    ss.widths = arch == models::Arch::unet_s ? std::vector<std::size_t>{2, 3} : std::vector<std::size_t>{3};
    ss.depth = 2;
    auto s = models::init_segmentor<double>(ss, 9);
    const auto x = ad::random_tensor(rng, {3, 4, 4});
    const double e = fd_rel_error(s.params, [&](auto w) {
      using V = std::decay_t<decltype(w[0])>;
      return ad::log_softmax(s.template forward<V>(w, ad::constant<V>(x)));
    }, 11);
    v.data["segmentor_" + std::string(models::arch_name(arch))] = e;
    seg_err = std::max(seg_err, e);
  }
  v.data["annotator"] = ann_err;
  v.pass = report.passed() && ann_err <= 1e-4 && seg_err <= 1e-4;
  v.detail = std::to_string(report.entries.size()) + " kernels, worst " + worst_name + " " + fmt(worst_op * 1e6, 3) +
             "e-6; annotator " + fmt(ann_err * 1e6, 3) + "e-6; segmentors " + fmt(seg_err * 1e6, 3) + "e-6 (tol 1e-4)";
  return v;
}

Verdict c2_meta_gradient() {
  Verdict v;
  double worst_fd = 0, worst_ab = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto f = tiny(seed);
    auto [ll, gl] = gm::labeled_loss_grad(f.seg, f.labeled);
    auto r = gm::meta_grad_b(f.seg, f.ann, gl, f.synthetic, f.sel);
    Rng rng(seed + 50);
    const double eps = 1e-5;
    for (int k = 0; k < 8; ++k) {
      const std::size_t i = rng.uniform_index(f.ann.params.size());
      const std::size_t j = rng.uniform_index(f.ann.params.tensors[i].size());
      auto plus = f.ann, minus = f.ann;
      plus.params.tensors[i][j] += eps;
      minus.params.tensors[i][j] -= eps;
      const double fd = (gm::matching_loss(f.seg, plus, gl, f.synthetic, f.sel) -
                         gm::matching_loss(f.seg, minus, gl, f.synthetic, f.sel)) /
                        (2 * eps);
      const double an = r.grad_omega[i][j];
      worst_fd = std::max(worst_fd, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
    }
    auto a = gm::meta_grad(f.seg, f.ann, f.labeled, f.synthetic, f.sel, gm::Strategy::A);
    auto b = gm::meta_grad(f.seg, f.ann, f.labeled, f.synthetic, f.sel, gm::Strategy::B);
    worst_ab = std::max(worst_ab, ad::relative_error(flat(a.grad_omega), flat(b.grad_omega)));
    (void)ll;
  }
  v.pass = worst_fd <= 1e-3 && worst_ab <= 1e-6;
  v.data = {{"max_fd_rel_err", worst_fd}, {"strategy_a_vs_b_rel_err", worst_ab}};
  v.detail = "3 seeds x 8 coords: max FD rel err " + fmt(worst_fd * 1e6, 2) + "e-6 (tol 1e-3); A vs B " +
             fmt(worst_ab * 1e9, 3) + "e-9 (tol 1e-6)";
  return v;
}

Verdict c3_taylor() {
  Verdict v;
  std::vector<double> first, second;  // |r(eta)/r(eta/2)| per fixture for each halving
  for (std::uint64_t seed : {8u, 9u, 10u}) {
    auto f = tiny(seed);
    const double r1 = gm::taylor_residual(f.seg, f.ann, f.labeled, f.synthetic, 1e-2);
    const double r2 = gm::taylor_residual(f.seg, f.ann, f.labeled, f.synthetic, 5e-3);
    const double r3 = gm::taylor_residual(f.seg, f.ann, f.labeled, f.synthetic, 2.5e-3);
    first.push_back(std::abs(r1 / r2));
    second.push_back(std::abs(r2 / r3));
  }
  int agree = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto f = tiny(1000 + s);
    auto p = gm::taylor_probe(f.seg, f.ann, f.labeled, f.synthetic, 1e-3);
    agree += (p.predicted_change > 0) == (p.realized_change > 0);
  }
  const double m1 = median(first), m2 = median(second);
  v.pass = m1 >= 3.0 && m1 <= 5.0 && m2 >= 3.0 && m2 <= 5.0 && agree >= 95;
  v.data = {{"first_halving", first}, {"second_halving", second}, {"sign_agreement", agree}};
  v.detail = "median halving ratios " + fmt(m1, 3) + ", " + fmt(m2, 3) + " (gate [3,5]; per fixture " + list(first) + " " +
             list(second) + "); sign agreement " + std::to_string(agree) + "/100 (gate 95)";
  return v;
}

Verdict c4_defaults() {
  Verdict v;
  gm::GmConfig g;
  baselines::MamlConfig m;
  const bool ok = g.lr_annotator == 0.001 && g.lr_segmentor == 0.001 && g.momentum == 0.9 && g.update_interval == 1 &&
                  g.batch_size == 2 && m.inner_lr == 0.1 && kDefaultLearningRate == 0.001 && kDefaultMomentum == 0.9;
  v.pass = ok;
  v.data = {{"lr", g.lr_annotator}, {"momentum", g.momentum}, {"K", g.update_interval}, {"B", g.batch_size}, {"inner_lr", m.inner_lr}};
  v.detail = "lr " + fmt(g.lr_annotator, 3) + ", momentum " + fmt(g.momentum, 1) + ", K " + std::to_string(g.update_interval) +
             ", B " + std::to_string(g.batch_size) + ", inner lr " + fmt(m.inner_lr, 1);
  return v;
}

Verdict c5_vs_oracle(Runs& runs) {
  Verdict v;
  std::vector<double> gm_fg, sup_fg;
  for (int s = 0; s < kSeeds; ++s) {
    RunSpec g{.mode = world::SetMode::synthetic, .seed = s};
    RunSpec o{.method = harness::Method::supervised, .mode = world::SetMode::synthetic, .seed = s};
    gm_fg.push_back(runs.downstream(g, models::Arch::unet_s).test_fg_miou);
    sup_fg.push_back(runs.downstream(o, models::Arch::unet_s).test_fg_miou);
  }
  const double a = median(gm_fg), b = median(sup_fg);
  v.pass = a >= 0.85 * b;
  v.data = {{"gm", gm_fg}, {"supervised", sup_fg}};
  v.detail = "downstream FG-mIoU median GM " + fmt(a) + " vs 0.85 x supervised " + fmt(0.85 * b) + " (GM " + list(gm_fg) +
             ", supervised " + list(sup_fg) + ")";
  return v;
}

Verdict c6_vs_pseudo(Runs& runs) {
  Verdict v;
  std::vector<double> gm_fg, ps_fg;
  for (int s = 0; s < kSeeds; ++s) {
    gm_fg.push_back(runs.downstream(RunSpec{.seed = s}, models::Arch::unet_s).test_fg_miou);
    ps_fg.push_back(runs.downstream(RunSpec{.method = harness::Method::pseudo, .seed = s}, models::Arch::unet_s).test_fg_miou);
  }
  const double a = median(gm_fg), b = median(ps_fg);
  v.pass = a >= b + 0.03;
  v.data = {{"gm", gm_fg}, {"pseudo", ps_fg}};
  v.detail = "downstream FG-mIoU median GM " + fmt(a) + " vs pseudo + 0.03 = " + fmt(b + 0.03) + " (GM " + list(gm_fg) +
             ", pseudo " + list(ps_fg) + ")";
  return v;
}

Verdict c7_k_ablation(Runs& runs) {
  Verdict v;
  std::vector<double> k1, k10;
  int wins = 0;
  for (int s = 0; s < kSeeds; ++s) {
    k1.push_back(runs.get(RunSpec{.seed = s}).final_score.miou);
    k10.push_back(runs.get(RunSpec{.seed = s, .k = 10}).final_score.miou);
    wins += k1.back() >= k10.back();
  }
  v.pass = wins >= 2;
  v.data = {{"k1", k1}, {"k10", k10}};
  v.detail = "annotator test mIoU at 2000 steps, K=1 " + list(k1) + " vs K=10 " + list(k10) + ": K=1 wins " +
             std::to_string(wins) + "/3 (gate 2)";
  return v;
}

// First validation step whose all-class mIoU reaches `threshold`.
std::optional<std::size_t> steps_to(const std::vector<gm::MetricsRecord>& recs, double threshold) {
  for (const auto& r : recs)
    if (r.val_miou && *r.val_miou >= threshold) return r.step;
  return std::nullopt;
}

Verdict c8_policies(Runs& runs) {
  constexpr double kThreshold = 0.33;
  constexpr std::size_t kWarmBudget = 1000;
  constexpr std::size_t kEvalEvery = 20;
  Verdict v;
  std::vector<double> alt, fixed, warm_steps, cold_steps;
  for (int s = 0; s < kSeeds; ++s) {
    alt.push_back(runs.get(RunSpec{.seed = s}).final_score.miou);
    fixed.push_back(runs.get(RunSpec{.seed = s, .policy = gm::StatePolicy::fixed}).final_score.miou);
    auto w = steps_to(
        runs.get(RunSpec{.seed = s, .policy = gm::StatePolicy::warmstart, .steps = kWarmBudget, .eval_every = kEvalEvery})
            .models.records,
        kThreshold);
    auto c = steps_to(runs.get(RunSpec{.seed = s, .steps = kWarmBudget, .eval_every = kEvalEvery}).models.records, kThreshold);
    warm_steps.push_back(w ? static_cast<double>(*w) : INFINITY);
    cold_steps.push_back(c ? static_cast<double>(*c) : INFINITY);
  }
  const bool policy_ok = median(alt) > median(fixed);
  const bool warm_ok = median(warm_steps) < median(cold_steps);
  v.pass = policy_ok && warm_ok;
  v.data = {{"alternate", alt}, {"fixed", fixed}, {"warm_steps_to_threshold", warm_steps}, {"cold_steps_to_threshold", cold_steps},
            {"threshold", kThreshold}};
  v.detail = "final mIoU median alternate " + fmt(median(alt)) + " vs fixed " + fmt(median(fixed)) + "; steps to val mIoU " +
             fmt(kThreshold, 2) + " median warmstart " + fmt(median(warm_steps), 0) + " vs cold " + fmt(median(cold_steps), 0) +
             " (warm " + list(warm_steps) + ", cold " + list(cold_steps) + ")";
  return v;
}

Verdict c9_partial(Runs& runs) {
  Verdict v;
  std::vector<double> all_fg, head_fg, all_ms, head_ms;
  for (int s = 0; s < kSeeds; ++s) {
    auto& a = runs.get(RunSpec{.seed = s});
    auto& h = runs.get(RunSpec{.seed = s, .layers = "head"});
    all_fg.push_back(a.final_score.fg_miou);
    head_fg.push_back(h.final_score.fg_miou);
    all_ms.push_back(a.step_ms_median);
    head_ms.push_back(h.step_ms_median);
  }
  const double gap = median(all_fg) - median(head_fg);
  v.pass = gap <= 0.05 && median(head_ms) < median(all_ms);
  v.data = {{"all_fg", all_fg}, {"head_fg", head_fg}, {"all_step_ms", all_ms}, {"head_step_ms", head_ms}};
  v.detail = "FG-mIoU median all " + fmt(median(all_fg)) + " vs head " + fmt(median(head_fg)) + " (gap " + fmt(gap) +
             ", gate 0.05); median step ms all " + fmt(median(all_ms), 2) + " vs head " + fmt(median(head_ms), 2);
  return v;
}

Verdict c10_quality(Runs& runs) {
  Verdict v;
  const std::vector<double> qs = {0.25, 0.5, 1.0};
  std::vector<double> med;
  for (double q : qs) {
    std::vector<double> fg;
    for (int s = 0; s < kSeeds; ++s) fg.push_back(runs.downstream(RunSpec{.seed = s, .quality = q}, models::Arch::unet_s).test_fg_miou);
    v.data["q" + fmt(q, 2)] = fg;
    med.push_back(median(fg));
  }
  int inversions = 0;
  bool small = true;
  for (std::size_t i = 1; i < med.size(); ++i)
    if (med[i] < med[i - 1]) {
      ++inversions;
      small = small && med[i - 1] - med[i] <= 0.01;
    }
  v.pass = inversions == 0 || (inversions == 1 && small);
  v.detail = "downstream FG-mIoU median at q=0.25/0.5/1.0: " + list(med) + "; inversions " + std::to_string(inversions);
  return v;
}

Verdict c11_maml(Runs& runs) {
  Verdict v;
  std::vector<double> gm_fg, maml_fg;
  for (int s = 0; s < kSeeds; ++s) {
    gm_fg.push_back(runs.get(RunSpec{.seed = s}).final_score.fg_miou);
    maml_fg.push_back(runs.get(RunSpec{.method = harness::Method::maml, .seed = s}).final_score.fg_miou);
  }
  v.pass = median(gm_fg) >= median(maml_fg) - 0.02;
  v.data = {{"gm", gm_fg}, {"maml", maml_fg}};
  v.detail = "final annotator FG-mIoU at 2000 steps, median GM " + fmt(median(gm_fg)) + " vs MAML - 0.02 = " +
             fmt(median(maml_fg) - 0.02) + " (GM " + list(gm_fg) + ", MAML " + list(maml_fg) + ")";
  return v;
}

Verdict c12_cross_arch(Runs& runs) {
  Verdict v;
  const RunSpec unet{.seed = 0}, conv{.seed = 0, .arch = models::Arch::convstack};
  const double uu = runs.downstream(unet, models::Arch::unet_s).test_fg_miou;
  const double uc = runs.downstream(unet, models::Arch::convstack).test_fg_miou;
  const double cc = runs.downstream(conv, models::Arch::convstack).test_fg_miou;
  const double cu = runs.downstream(conv, models::Arch::unet_s).test_fg_miou;
  v.pass = std::abs(uc - uu) <= 0.05 && std::abs(cu - cc) <= 0.05;
  v.data = {{"unet_matched", {{"unet-s", uu}, {"convstack", uc}}}, {"convstack_matched", {{"convstack", cc}, {"unet-s", cu}}}};
  v.detail = "unet-s-matched set: unet-s " + fmt(uu) + ", convstack " + fmt(uc) + "; convstack-matched set: convstack " + fmt(cc) +
             ", unet-s " + fmt(cu) + " (gate |diff| <= 0.05)";
  return v;
}

Verdict c13_miou() {
  Verdict v;
  LabelMap gt(2, 2), pred(2, 2);
  gt.data = {0, 0, 1, 1};
  pred.data = {0, 1, 1, 1};
  const double worked = harness::miou(pred, gt, 2, true);
  std::mt19937_64 rng(2024);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + rng() % 5, h = 1 + rng() % 8, w = 1 + rng() % 8;
    LabelMap a(h, w), b(h, w);
    for (std::size_t q = 0; q < a.size(); ++q) a.data[q] = rng() % c, b.data[q] = rng() % c;
    std::vector<std::uint64_t> cm(c * c, 0);
    for (std::size_t q = 0; q < a.size(); ++q) ++cm[b.data[q] * c + a.data[q]];
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < c; ++j) row += cm[k * c + j], col += cm[j * c + k];
      const std::uint64_t uni = row + col - cm[k * c + k];
      if (uni) sum += static_cast<double>(cm[k * c + k]) / static_cast<double>(uni), ++n;
    }
    exact += harness::miou(a, b, c, true) == (n ? sum / static_cast<double>(n) : 1.0);
  }
  v.pass = exact == 100 && std::abs(worked - 7.0 / 12.0) <= 1e-15;
  v.data = {{"exact_matches", exact}, {"worked_example", worked}};
  v.detail = std::to_string(exact) + "/100 exact matches; 2x2 example " + fmt(worked, 6) + " (7/12 = " + fmt(7.0 / 12.0, 6) + ")";
  return v;
}

Verdict c14_determinism(const fs::path& scratch) {
  Verdict v;
  auto c = desk_config(RunSpec{.steps = 200});
  c.eval.downstream = false;
  std::string text[2];
  for (int i = 0; i < 2; ++i) {
    const auto dir = scratch / ("determinism_" + std::to_string(i));
    fs::remove_all(dir);
    harness::run_experiment(c, dir);
    std::ifstream in(dir / "metrics.jsonl", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    text[i] = ss.str();
  }
  const auto lines = std::count(text[0].begin(), text[0].end(), '\n');
  v.pass = !text[0].empty() && text[0] == text[1];
  v.data = {{"lines", lines}, {"bytes", text[0].size()}, {"identical", text[0] == text[1]}};
  v.detail = std::to_string(lines) + " records, " + std::to_string(text[0].size()) + " bytes, " +
             (text[0] == text[1] ? "byte-identical" : "DIFFERENT");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path report_path = "acceptance_report.json";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--report path]\n";
      return 2;
    }
  }
  const fs::path scratch = fs::temp_directory_path() / ("gmlabel_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);
  Runs runs(scratch / "datasets");
  fs::create_directories(scratch / "datasets");

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient oracle", c1_gradients},
      {"meta-gradient oracle", c2_meta_gradient},
      {"taylor reduction", c3_taylor},
      {"defaults traceability", c4_defaults},
      {"method vs oracle annotator", [&] { return c5_vs_oracle(runs); }},
      {"method vs pseudo-labeling", [&] { return c6_vs_pseudo(runs); }},
      {"update-interval ablation", [&] { return c7_k_ablation(runs); }},
      {"segmentor state policies", [&] { return c8_policies(runs); }},
      {"partial matching", [&] { return c9_partial(runs); }},
      {"generator quality", [&] { return c10_quality(runs); }},
      {"maml comparison", [&] { return c11_maml(runs); }},
      {"cross-architecture reuse", [&] { return c12_cross_arch(runs); }},
      {"metric oracle", c13_miou},
      {"determinism", [&] { return c14_determinism(scratch); }},
  };

  nlohmann::json report = {{"criteria", nlohmann::json::array()}};
  int failed = 0, ran = 0;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs <= 600.0;
    const bool ok = v.pass && in_time;
    failed += !ok;
    ++ran;
    std::cout << "criterion " << std::setw(2) << id << ": " << (ok ? "PASS" : "FAIL") << "  " << criteria[i].first << " | "
              << v.detail << " | " << fmt(secs, 1) << " s" << (in_time ? "" : " (over 600 s)") << std::endl;
    report["criteria"].push_back(
        {{"id", id}, {"name", criteria[i].first}, {"pass", ok}, {"seconds", secs}, {"detail", v.detail}, {"data", v.data}});
  }
  const double total = seconds_since(start);
  std::cout << "total: " << ran - failed << " passed, "
            << failed << " failed, " << fmt(total, 1) << " s" << (total <= 2700.0 ? "" : " (over 2700 s)") << std::endl;

  // Method comparison table over the shared real-mode runs that were trained.
  nlohmann::json table = nlohmann::json::array();
  for (auto m : {harness::Method::gm, harness::Method::maml, harness::Method::pseudo})
    for (int s = 0; s < kSeeds; ++s)
      if (const auto* r = runs.find(RunSpec{.method = m, .seed = s})) {
        nlohmann::json row = {{"method", harness::method_name(m)},
                              {"seed", s},
                              {"final_test_miou", r->final_score.miou},
                              {"final_test_fg_miou", r->final_score.fg_miou},
                              {"selected_test_fg_miou", r->selected_score.fg_miou}};
        if (auto d = r->downstream.find(models::Arch::unet_s); d != r->downstream.end())
          row["downstream_fg_miou"] = d->second.test_fg_miou;
        table.push_back(row);
      }
  report["comparison"] = table;
  report["runs"] = runs.summary();
  report["total_seconds"] = total;
  std::ofstream(report_path) << report.dump(2) << '\n';
  fs::remove_all(scratch);
  return failed == 0 && total <= 2700.0 ? 0 : 1;
}
