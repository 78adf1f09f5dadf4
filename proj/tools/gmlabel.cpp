// gmlabel command-line front end. Every subcommand prints one JSON document on
// stdout; failures print {"error": {...}} on stderr and exit nonzero.

#include <iostream>

#include <CLI11.hpp>

#include "gmlabel/ad/gradcheck.hpp"
#include "gmlabel/harness/plot.hpp"
#include "gmlabel/harness/run.hpp"

using namespace gmlabel;
namespace fs = std::filesystem;

namespace {

int emit_error(const std::string& code, const std::string& message, int status) {
  std::cerr << nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
  return status;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app, bool required = false) {
    auto* o = app->add_option("-c,--config", path, "experiment config JSON");
    if (required) o->required();
    app->add_option("-s,--set", overrides, "override, key.path=value (repeatable)");
  }

  harness::ExperimentConfig load() const {
    nlohmann::json j = path.empty() ? nlohmann::json::object() : harness::read_json_file(path);
    harness::apply_overrides(j, overrides);
    return harness::parse_config(j);
  }
};

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-matching annotator training on a procedural world"};
  app.require_subcommand(1);

  auto* world_cmd = app.add_subcommand("world", "inspect the procedural world");
  world_cmd->require_subcommand(1);
  auto* describe = world_cmd->add_subcommand("describe", "print classes, shapes and feature channels");
  ConfigArgs describe_cfg;
  describe_cfg.attach(describe);

  auto* train = app.add_subcommand("train", "run an experiment (method chosen by the config)");
  ConfigArgs train_cfg;
  train_cfg.attach(train, true);
  std::string train_out;
  train->add_option("-o,--out", train_out, "run directory (default: $GMLABEL_RUN_ROOT/<output_dir or name>)");

  auto* eval = app.add_subcommand("eval", "score an annotator checkpoint against the oracle test split");
  ConfigArgs eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_run, eval_ckpt;
  eval->add_option("--run", eval_run, "run directory (uses its config and selected annotator)");
  eval->add_option("--checkpoint", eval_ckpt, "annotator checkpoint");

  auto* exp = app.add_subcommand("export-dataset", "write an annotator-labeled dataset to disk");
  ConfigArgs exp_cfg;
  exp_cfg.attach(exp);
  std::string exp_ckpt, exp_out;
  std::size_t exp_n = 100;
  std::uint64_t exp_seed = 4;
  bool exp_features = false;
  exp->add_option("--checkpoint", exp_ckpt, "annotator checkpoint")->required();
  exp->add_option("-o,--out", exp_out, "output directory")->required();
  exp->add_option("-n,--count", exp_n, "number of samples");
  exp->add_option("--seed", exp_seed, "export stream seed");
  exp->add_flag("--features", exp_features, "also store the feature pyramid");

  auto* down = app.add_subcommand("downstream", "train a fresh segmentor on an exported dataset");
  ConfigArgs down_cfg;
  down_cfg.attach(down);
  std::string down_data, down_arch, down_ckpt;
  down->add_option("-d,--dataset", down_data, "exported dataset directory")->required();
  down->add_option("--arch", down_arch, "segmentor architecture (unet-s or convstack)");
  down->add_option("--save", down_ckpt, "write the trained segmentor checkpoint here");

  auto* plot = app.add_subcommand("plot", "metrics JSONL to CSV and SVG");
  std::vector<std::string> plot_inputs;
  std::string plot_out;
  plot->add_option("inputs", plot_inputs, "metrics.jsonl files, optionally LABEL=path")->required();
  plot->add_option("-o,--out", plot_out, "output directory")->required();

  auto* grads = app.add_subcommand("check-grads", "finite-difference check of the autodiff kernels");
  std::string grads_op = "all";
  int grads_trials = 3;
  double grads_tol = 1e-4;
  grads->add_option("--op", grads_op, "kernel name or 'all'");
  grads->add_option("--trials", grads_trials, "random trials per kernel");
  grads->add_option("--tol", grads_tol, "relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what(), 2);
  }

  try {
    if (describe->parsed()) {
      print(world::describe_world(describe_cfg.load().world));
    } else if (train->parsed()) {
      auto c = train_cfg.load();
      auto r = harness::run_experiment(c, train_out);
      auto report = r.report;
      report["run_dir"] = r.dir.string();
      print(report);
    } else if (eval->parsed()) {
      if (eval_run.empty() == eval_ckpt.empty()) throw ConfigError("eval: give exactly one of --run or --checkpoint");
      harness::ExperimentConfig c = eval_run.empty() ? eval_cfg.load() : harness::load_run_config(eval_run);
      const fs::path ckpt = eval_run.empty() ? fs::path(eval_ckpt) : fs::path(eval_run) / "checkpoints" / "annotator.ckpt";
      auto ann = models::load_annotator<float>(ckpt);
      auto score = harness::evaluate_annotator(c.world, ann, c.eval.test_size, c.eval.test_seed);
      print({{"checkpoint", ckpt.string()}, {"annotator_test", harness::to_json(score)}});
    } else if (exp->parsed()) {
      auto c = exp_cfg.load();
      auto ann = models::load_annotator<float>(exp_ckpt);
      auto m = harness::export_dataset(c.world, ann, exp_n, exp_seed, exp_out, exp_features);
      auto j = harness::to_json(m);
      j.erase("files");
      j["dir"] = exp_out;
      print(j);
    } else if (down->parsed()) {
      auto c = down_cfg.load();
      if (!down_arch.empty()) c.eval.downstream_arch = models::parse_arch(down_arch);
      auto loaded = harness::load_dataset(down_data);
      auto cfg = c.eval.train;
      cfg.test_size = c.eval.test_size;
      cfg.test_seed = c.eval.test_seed;
      const auto spec = harness::downstream_spec(c);
      auto r = harness::train_downstream<float>(loaded.data, c.world, spec, cfg);
      if (!down_ckpt.empty()) models::save_segmentor(r.segmentor, down_ckpt);
      auto j = harness::to_json(r);
      j["arch"] = models::arch_name(spec.arch);
      j["dataset_count"] = loaded.data.size();
      print(j);
    } else if (plot->parsed()) {
      std::vector<harness::MetricSeries> series;
      for (const auto& in : plot_inputs) {
        const auto eq = in.find('=');
        const std::string label = eq == std::string::npos ? fs::path(in).parent_path().filename().string() : in.substr(0, eq);
        const std::string path = eq == std::string::npos ? in : in.substr(eq + 1);
        series.push_back({label.empty() ? path : label, harness::read_metrics_jsonl(path)});
      }
      auto files = harness::plot_metrics(series, plot_out);
      nlohmann::json j = {{"csv", nlohmann::json::array()}, {"svg", nlohmann::json::array()}};
      for (const auto& p : files.csv) j["csv"].push_back(p.string());
      for (const auto& p : files.svg) j["svg"].push_back(p.string());
      print(j);
    } else if (grads->parsed()) {
      auto report = ad::check_gradients(grads_op, grads_trials, grads_tol);
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : report.entries)
        entries.push_back({{"op", e.op},
                           {"trials", e.trials},
                           {"max_rel_err_reverse", e.max_rel_err_reverse},
                           {"max_rel_err_forward", e.max_rel_err_forward},
                           {"passed", e.passed}});
      print({{"tol", report.tol}, {"passed", report.passed()}, {"entries", entries}});
      if (!report.passed()) return emit_error("gradcheck_failed", "one or more kernels exceeded the tolerance", 3);
    }
  } catch (const Error& e) {
    return emit_error(e.code(), e.what(), 1);
  } catch (const nlohmann::json::exception& e) {
    return emit_error("invalid_json", e.what(), 1);
  } catch (const std::exception& e) {
    return emit_error("internal", e.what(), 1);
  }
  return 0;
}
