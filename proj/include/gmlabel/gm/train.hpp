#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/gm/data.hpp"
#include "gmlabel/optim.hpp"

namespace gmlabel::gm {

enum class StatePolicy { alternate, fixed, random_reinit, warmstart };

inline std::string_view policy_name(StatePolicy p) {
  switch (p) {
    case StatePolicy::alternate: return "alternate";
    case StatePolicy::fixed: return "fixed";
    case StatePolicy::random_reinit: return "random-reinit";
    case StatePolicy::warmstart: return "warmstart";
  }
  return "?";
}

inline StatePolicy parse_policy(std::string_view s) {
  if (s == "alternate") return StatePolicy::alternate;
  if (s == "fixed") return StatePolicy::fixed;
  if (s == "random-reinit" || s == "random_reinit") return StatePolicy::random_reinit;
  if (s == "warmstart") return StatePolicy::warmstart;
  throw ConfigError("unknown state policy '" + std::string(s) + "'");
}

struct GmConfig {
  std::size_t steps = 5000;
  std::size_t update_interval = 1;  // K
  std::size_t batch_size = 2;
  double lr_annotator = kDefaultLearningRate;
  double lr_segmentor = kDefaultLearningRate;
  double momentum = kDefaultMomentum;
  std::vector<std::string> layers = {"all"};
  bool include_biases = false;
  Strategy strategy = Strategy::B;
  StatePolicy policy = StatePolicy::alternate;
  std::size_t warmstart_steps = 0;
  std::size_t input_resolution = 0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 250;  // validation checkpoint interval; 0 disables
  std::size_t val_size = 32;
  bool hard_theta_labels = false;
  double annotator_clip = 0;  // max global norm of the annotator gradient; 0 disables

  void validate() const {
    if (steps < 1) throw ConfigError("gm: steps must be >= 1");
    if (update_interval < 1) throw ConfigError("gm: update_interval must be >= 1");
    if (batch_size < 1) throw ConfigError("gm: batch_size must be >= 1");
    if (!(lr_annotator > 0) || !(lr_segmentor > 0)) throw ConfigError("gm: learning rates must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("gm: momentum must be in [0,1)");
    if (layers.empty()) throw ConfigError("gm: layer selection must be nonempty");
    if (policy == StatePolicy::warmstart && warmstart_steps < 1)
      throw ConfigError("gm: warmstart policy needs warmstart_steps >= 1");
  }
};

struct MetricsRecord {
  std::size_t step = 0;
  double l_gm = 0;
  double l_g = 0;
  double l_l = 0;
  std::optional<double> val_miou;
  std::optional<double> val_fg_miou;
  std::size_t segmentor_updates = 0;
  double wall_ms = 0;
  double grad_norm = 0;
};

// Wall-clock timing is excluded unless requested so that metrics streams
// are reproducible byte for byte.
inline nlohmann::json to_json(const MetricsRecord& r, bool with_wall_clock = false) {
  nlohmann::json j = {{"step", r.step}, {"l_gm", r.l_gm}, {"l_g", r.l_g}, {"l_l", r.l_l},
                      {"grad_norm", r.grad_norm},
                      {"segmentor_updates", r.segmentor_updates}};
  if (r.val_miou) j["val_miou"] = *r.val_miou;
  if (r.val_fg_miou) j["val_fg_miou"] = *r.val_fg_miou;
  if (with_wall_clock) j["wall_ms"] = r.wall_ms;
  return j;
}

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Called after every step with the current parameters.
template <class T>
using StepObserver = std::function<void(std::size_t step, const models::Annotator<T>&, const models::Segmentor<T>&)>;

template <class T>
struct TrainResult {
  models::Annotator<T> annotator;       // best validation checkpoint
  models::Annotator<T> final_annotator;
  models::Segmentor<T> segmentor;
  std::vector<MetricsRecord> records;
  std::size_t best_step = 0;
  double best_val_fg_miou = -1;
  std::size_t annotator_updates = 0;
  std::size_t segmentor_updates = 0;
  std::uint64_t latents_consumed = 0;
};

template <class T>
OptState<T> make_opt(double lr, double momentum) {
  return OptState<T>(static_cast<T>(lr), static_cast<T>(momentum));
}

// Supervised hard-label training of a segmentor over a labeled set.
template <class T>
void train_segmentor_supervised(models::Segmentor<T>& seg, OptState<T>& opt, const world::LabeledSet& set,
                                LabeledSampler& sampler, std::size_t steps, std::size_t batch) {
  for (std::size_t s = 0; s < steps; ++s) {
    auto b = gather_labeled<T>(set, sampler.next(batch));
    auto [l, g] = labeled_loss_grad(seg, b);
    (void)l;
    sgd_step(seg.params, g, opt);
  }
}

// Periodic annotator evaluation on the validation stream with best-checkpoint tracking.
template <class T>
class Validator {
 public:
  Validator(const world::WorldConfig& wc, std::uint64_t seed, std::size_t size, std::size_t every)
      : every_(every) {
    if (every_ > 0) set_ = world::make_labeled_set(wc, static_cast<std::int64_t>(size), world::SetMode::synthetic, seed, Stream::validation);
  }

  bool due(std::size_t step, std::size_t total) const { return every_ > 0 && (step % every_ == 0 || step == total); }

  // Returns (miou, fg_miou) and updates the best checkpoint.
  std::pair<double, double> evaluate(const models::Annotator<T>& ann, std::size_t step, TrainResult<T>& out) {
    auto c = annotator_confusion(ann, set_);
    const double m = c.miou(true), fg = c.miou(false);
    if (fg > out.best_val_fg_miou) {
      out.best_val_fg_miou = fg;
      out.best_step = step;
      out.annotator = ann;
    }
    return {m, fg};
  }

  bool enabled() const noexcept { return every_ > 0; }

 private:
  std::size_t every_;
  world::LabeledSet set_;
};

template <class T>
std::vector<Tensor<T>> theta_targets(const models::Annotator<T>& ann, const SyntheticBatch<T>& b, bool hard) {
  auto soft = annotate(ann, b);
  if (!hard) return soft;
  for (auto& s : soft) s = one_hot<T>(models::argmax_labels(s), ann.spec.num_classes);
  return soft;
}

// Segmentor update on a fresh synthetic batch labeled by the annotator.
template <class T>
double update_segmentor_on_synthetic(models::Segmentor<T>& seg, OptState<T>& opt, const models::Annotator<T>& ann,
                                     world::LatentStream& stream, std::size_t batch, bool hard) {
  auto b = draw_synthetic<T>(stream, batch);
  auto [l, g] = synthetic_loss_grad(seg, b, theta_targets(ann, b, hard));
  sgd_step(seg.params, g, opt);
  return l;
}

// Segmentor-state policy applied every K steps (shared with the MAML loop).
template <class T>
void segmentor_phase(const GmConfig& cfg, models::Segmentor<T>& seg, OptState<T>& opt, const models::Annotator<T>& ann,
                     world::LatentStream& stream, std::size_t& reinit_count, std::size_t& updates) {
  switch (cfg.policy) {
    case StatePolicy::fixed: return;
    case StatePolicy::random_reinit:
      seg = models::init_segmentor<T>(seg.spec, stream_seed(cfg.seed, Stream::reinit, reinit_count++));
      opt = make_opt<T>(cfg.lr_segmentor, cfg.momentum);
      return;
    case StatePolicy::alternate:
    case StatePolicy::warmstart:
      update_segmentor_on_synthetic(seg, opt, ann, stream, cfg.batch_size, cfg.hard_theta_labels);
      ++updates;
      return;
  }
}

template <class T>
void warmstart_segmentor(const GmConfig& cfg, models::Segmentor<T>& seg, const world::LabeledSet& labeled) {
  if (cfg.policy != StatePolicy::warmstart) return;
  auto opt = make_opt<T>(cfg.lr_segmentor, cfg.momentum);
  LabeledSampler sampler(labeled.size(), mix_seed(cfg.seed, 0x3a1u));
  train_segmentor_supervised(seg, opt, labeled, sampler, cfg.warmstart_steps, cfg.batch_size);
}

// Shared outer loop: per step, one labeled batch and one fresh synthetic batch
// feed `outer_grad`, whose annotator gradient drives an SGD step on omega;
// every K steps the segmentor-state policy runs on another fresh batch.
template <class T, class OuterGrad>
TrainResult<T> run_outer_loop(const GmConfig& cfg, const world::WorldConfig& wc, const world::LabeledSet& labeled,
                              models::Annotator<T> ann, models::Segmentor<T> seg, OuterGrad&& outer_grad,
                              const MetricsSink& sink, const StepObserver<T>& observe) {
  cfg.validate();
  if (labeled.size() == 0) throw ConfigError("gm_train: labeled set is empty");
  if (cfg.input_resolution != 0 && seg.spec.effective_resolution() != cfg.input_resolution)
    throw ConfigError("gm_train: segmentor input resolution " + std::to_string(seg.spec.effective_resolution()) +
                      " does not match config " + std::to_string(cfg.input_resolution));
  world::assert_disjoint_streams({labeled.stream, Stream::validation, Stream::test, Stream::train_synthetic});
  const auto sel = select_layers(seg.params, cfg.layers, cfg.include_biases);

  warmstart_segmentor(cfg, seg, labeled);
  auto opt_a = make_opt<T>(cfg.lr_annotator, cfg.momentum);
  auto opt_s = make_opt<T>(cfg.lr_segmentor, cfg.momentum);
  world::LatentStream stream(wc, cfg.seed, Stream::train_synthetic);
  LabeledSampler sampler(labeled.size(), cfg.seed);
  Validator<T> validator(wc, cfg.seed, cfg.val_size, cfg.eval_every);

  TrainResult<T> out;
  out.annotator = ann;
  std::size_t reinit_count = 0;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    auto lb = gather_labeled<T>(labeled, sampler.next(cfg.batch_size));
    auto sb = draw_synthetic<T>(stream, cfg.batch_size);
    MetaGradResult<T> r = outer_grad(seg, ann, lb, sb, sel);
    if (!std::isfinite(r.loss_l) || !std::isfinite(r.loss_g) || !std::isfinite(r.distance))
      throw NumericError("gm_train: non-finite loss at step " + std::to_string(t) + " (L_l=" + std::to_string(r.loss_l) +
                         ", L_g=" + std::to_string(r.loss_g) + ", L_gm=" + std::to_string(r.distance) + ")");
    const double grad_norm = clip_grad_norm(r.grad_omega, cfg.annotator_clip);
    sgd_step(ann.params, r.grad_omega, opt_a);
    ++out.annotator_updates;
    if (t % cfg.update_interval == 0) segmentor_phase(cfg, seg, opt_s, ann, stream, reinit_count, out.segmentor_updates);

    MetricsRecord rec{t, r.distance, r.loss_g, r.loss_l, std::nullopt, std::nullopt, out.segmentor_updates, 0.0};
    rec.grad_norm = grad_norm;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (validator.due(t, cfg.steps)) {
      auto [m, fg] = validator.evaluate(ann, t, out);
      rec.val_miou = m;
      rec.val_fg_miou = fg;
    }
    if (sink) sink(rec);
    if (observe) observe(t, ann, seg);
    out.records.push_back(rec);
  }
  out.latents_consumed = stream.consumed();
  if (!validator.enabled()) out.annotator = ann, out.best_step = cfg.steps;
  out.final_annotator = std::move(ann);
  out.segmentor = std::move(seg);
  return out;
}

// Algorithm 1: alternate annotator updates by gradient matching with
// segmentor updates on annotator-labeled synthetic data.
template <class T>
TrainResult<T> gm_train(const GmConfig& cfg, const world::WorldConfig& wc, const world::LabeledSet& labeled,
                        models::Annotator<T> ann, models::Segmentor<T> seg, const MetricsSink& sink = {},
                        const StepObserver<T>& observe = {}) {
  return run_outer_loop(
      cfg, wc, labeled, std::move(ann), std::move(seg),
      [&](const models::Segmentor<T>& s, const models::Annotator<T>& a, const LabeledBatch<T>& lb,
          const SyntheticBatch<T>& sb, const LayerSelection& sel) { return meta_grad(s, a, lb, sb, sel, cfg.strategy); },
      sink, observe);
}

}  // namespace gmlabel::gm
