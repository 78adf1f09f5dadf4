#pragma once

// Experiment orchestration and the run-directory layout:
//   <run>/config.json        full config snapshot (reloadable)
//   <run>/metrics.jsonl      one MetricsRecord per line, deterministic
//   <run>/timings.jsonl      per-step wall clock (optional)
//   <run>/checkpoints/       annotator.ckpt (selected), annotator_final.ckpt, segmentor.ckpt
//   <run>/dataset/           exported annotator-labeled set used downstream
//   <run>/report.json

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gmlabel/harness/config.hpp"

namespace gmlabel::harness {

inline constexpr const char* kRunRootEnv = "GMLABEL_RUN_ROOT";

inline std::filesystem::path run_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

inline std::filesystem::path run_directory(const ExperimentConfig& c) {
  const std::filesystem::path out = c.output_dir.empty() ? c.name : c.output_dir;
  return out.is_absolute() ? out : run_root() / out;
}

// Identity of the experiment: the snapshot without its name and location.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("name");
  j.erase("output_dir");
  return hex64(hash_string(j.dump()));
}

struct AnnotatorScore {
  double miou = 0;
  double fg_miou = 0;
  std::vector<double> class_iou;
};

inline nlohmann::json to_json(const AnnotatorScore& s) {
  return {{"miou", s.miou}, {"fg_miou", s.fg_miou}, {"class_iou", s.class_iou}};
}

// Annotator-vs-oracle agreement on the held-out test stream.
template <class T>
AnnotatorScore evaluate_annotator(const world::WorldConfig& wc, const models::Annotator<T>& ann, std::size_t n,
                                  std::uint64_t seed) {
  auto set = world::make_labeled_set(wc, static_cast<std::int64_t>(n), world::SetMode::synthetic, seed, Stream::test);
  auto c = gm::annotator_confusion(ann, set);
  return {c.miou(true), c.miou(false), c.class_iou()};
}

inline models::SegmentorSpec downstream_spec(const ExperimentConfig& c) {
  auto s = c.segmentor_spec();
  if (!c.eval.downstream_arch || *c.eval.downstream_arch == s.arch) return s;
  auto d = models::SegmentorSpec::for_arch(*c.eval.downstream_arch, s.num_classes, s.image_size);
  d.input_resolution = s.input_resolution;
  return d;
}

template <class T>
nlohmann::json to_json(const DownstreamResult<T>& r) {
  return {{"test_miou", r.test_miou}, {"test_fg_miou", r.test_fg_miou}, {"test_class_iou", r.test_class_iou}};
}

struct TrainedModels {
  models::Annotator<float> annotator;        // selected checkpoint
  models::Annotator<float> final_annotator;
  models::Segmentor<float> segmentor;
  std::vector<gm::MetricsRecord> records;
  std::size_t best_step = 0;
  std::size_t segmentor_updates = 0;
};

// Runs the configured method. `sink` sees every metrics record as it is made.
inline TrainedModels train_method(const ExperimentConfig& c, const gm::MetricsSink& sink = {}) {
  c.validate();
  const auto& wc = c.world;
  auto labeled = world::make_labeled_set(wc, static_cast<std::int64_t>(c.labeled.n), c.labeled.mode, c.labeled.seed);
  auto ann = models::init_annotator<float>(c.annotator_spec(), stream_seed(c.init_seed, Stream::init, 0));
  auto seg = models::init_segmentor<float>(c.segmentor_spec(), stream_seed(c.init_seed, Stream::init, 1));

  auto from_train = [](gm::TrainResult<float> r) {
    return TrainedModels{std::move(r.annotator), std::move(r.final_annotator), std::move(r.segmentor), std::move(r.records),
                         r.best_step, r.segmentor_updates};
  };
  // Single-shot baselines report one record carrying their final fit and a
  // validation score on the same validation stream GM uses.
  auto single_record = [&](const models::Annotator<float>& a, std::size_t steps, double loss) {
    gm::MetricsRecord rec;
    rec.step = steps;
    rec.l_l = loss;
    if (c.gm.eval_every > 0) {
      auto val = world::make_labeled_set(wc, static_cast<std::int64_t>(c.gm.val_size), world::SetMode::synthetic, c.gm.seed,
                                         Stream::validation);
      auto conf = gm::annotator_confusion(a, val);
      rec.val_miou = conf.miou(true);
      rec.val_fg_miou = conf.miou(false);
    }
    if (sink) sink(rec);
    return rec;
  };

  switch (c.method) {
    case Method::gm: return from_train(gm::gm_train(c.gm, wc, labeled, std::move(ann), std::move(seg), sink));
    case Method::maml: {
      auto m = c.maml;
      m.outer = c.gm;
      return from_train(baselines::train_maml(m, wc, labeled, std::move(ann), std::move(seg), sink));
    }
    case Method::pseudo: {
      auto r = baselines::train_pseudo_labeling(c.pseudo, wc, labeled, std::move(ann), std::move(seg));
      auto loss = baselines::annotator_loss(r.annotator, r.pool);
      auto rec = single_record(r.annotator, c.pseudo.annotator.steps, loss);
      return TrainedModels{r.annotator, r.annotator, std::move(r.segmentor), {rec}, c.pseudo.annotator.steps, 0};
    }
    case Method::supervised: {
      auto r = baselines::train_supervised_annotator(c.supervised, labeled, std::move(ann));
      auto rec = single_record(r.annotator, c.supervised.steps, r.final_loss);
      return TrainedModels{r.annotator, r.annotator, std::move(seg), {rec}, c.supervised.steps, 0};
    }
  }
  throw ConfigError("config.method: unhandled method");
}

struct RunOutcome {
  std::filesystem::path dir;
  nlohmann::json report;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(p.string() + ": cannot write");
  out << s;
  if (!out) throw IoError(p.string() + ": write failed");
}

}  // namespace detail

// Orchestrates one experiment end to end and materializes the run directory.
inline RunOutcome run_experiment(const ExperimentConfig& c, std::filesystem::path dir = {}) {
  namespace fs = std::filesystem;
  c.validate();
  if (dir.empty()) dir = run_directory(c);
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  detail::write_text(dir / "config.json", to_json(c).dump(2) + "\n");

  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  std::ofstream timings;
  if (c.record_wall_clock) timings.open(dir / "timings.jsonl", std::ios::binary);
  if (!metrics || (c.record_wall_clock && !timings)) throw IoError(dir.string() + ": cannot open metrics files");
  auto trained = train_method(c, [&](const gm::MetricsRecord& r) {
    metrics << to_json(r).dump() << '\n';
    if (c.record_wall_clock) timings << nlohmann::json{{"step", r.step}, {"wall_ms", r.wall_ms}}.dump() << '\n';
  });
  metrics.close();
  timings.close();
  const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  models::save_annotator(trained.annotator, dir / "checkpoints" / "annotator.ckpt");
  models::save_annotator(trained.final_annotator, dir / "checkpoints" / "annotator_final.ckpt");
  models::save_segmentor(trained.segmentor, dir / "checkpoints" / "segmentor.ckpt");

  const auto ann_score = evaluate_annotator(c.world, trained.annotator, c.eval.test_size, c.eval.test_seed);
  nlohmann::json report = {{"method", method_name(c.method)},
                           {"config_hash", config_hash(c)},
                           {"name", c.name},
                           {"steps", trained.records.empty() ? 0 : trained.records.back().step},
                           {"best_step", trained.best_step},
                           {"segmentor_updates", trained.segmentor_updates},
                           {"annotator_test", to_json(ann_score)}};
  double headline = c.eval.fg_only ? ann_score.fg_miou : ann_score.miou;
  std::string headline_source = "annotator_test";
  if (c.eval.downstream) {
    auto manifest = export_dataset(c.world, trained.annotator, c.eval.export_size, c.eval.export_seed, dir / "dataset");
    auto loaded = load_dataset(dir / "dataset");
    auto dcfg = c.eval.train;
    dcfg.test_size = c.eval.test_size;
    dcfg.test_seed = c.eval.test_seed;
    auto ds = train_downstream<float>(loaded.data, c.world, downstream_spec(c), dcfg);
    models::save_segmentor(ds.segmentor, dir / "checkpoints" / "downstream_segmentor.ckpt");
    report["downstream"] = to_json(ds);
    report["downstream"]["arch"] = models::arch_name(downstream_spec(c).arch);
    report["dataset"] = {{"count", manifest.count}, {"annotator_checkpoint_hash", manifest.annotator_checkpoint_hash}};
    headline = c.eval.fg_only ? ds.test_fg_miou : ds.test_miou;
    headline_source = "downstream";
  }
  report["final_fg_miou"] = c.eval.fg_only ? headline : (c.eval.downstream ? report["downstream"]["test_fg_miou"].get<double>()
                                                                           : ann_score.fg_miou);
  report["final_metric"] = {{"name", c.eval.fg_only ? "fg_miou" : "miou"}, {"source", headline_source}, {"value", headline}};
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  if (c.record_wall_clock)
    detail::write_text(dir / "timings_summary.json", nlohmann::json{{"train_seconds", train_seconds}}.dump(2) + "\n");
  return {dir, report};
}

// Reloads the snapshot of an existing run.
inline ExperimentConfig load_run_config(const std::filesystem::path& dir) { return parse_config(read_json_file(dir / "config.json")); }

}  // namespace gmlabel::harness
