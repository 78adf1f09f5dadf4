#pragma once

// Experiment configuration: a JSON document with a fixed schema, plus flat
// `a.b.c=value` overrides. Every field is optional; missing fields take the
// defaults below, unknown fields and type mismatches are errors that name the
// offending path.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/baselines/maml.hpp"
#include "gmlabel/baselines/pseudo.hpp"
#include "gmlabel/harness/downstream.hpp"

namespace gmlabel::harness {

enum class Method { gm, maml, pseudo, supervised };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::gm: return "gm";
    case Method::maml: return "maml";
    case Method::pseudo: return "pseudo";
    case Method::supervised: return "supervised";
  }
  return "?";
}

struct LabeledSpec {
  std::size_t n = 10;
  world::SetMode mode = world::SetMode::real;
  std::uint64_t seed = 1;
};

struct EvalSpec {
  std::size_t test_size = 64;
  std::uint64_t test_seed = 3;
  bool fg_only = true;  // headline metric is FG-mIoU
  bool downstream = true;
  std::size_t export_size = 200;
  std::uint64_t export_seed = 4;
  std::optional<models::Arch> downstream_arch;  // defaults to the segmentor's
  DownstreamConfig train;
};

struct ExperimentConfig {
  std::string name = "run";
  std::string output_dir;  // relative to the run root; empty means `name`
  Method method = Method::gm;
  world::WorldConfig world;
  std::size_t annotator_width = 32;
  models::SegmentorSpec segmentor;  // num_classes/image_size follow the world
  std::uint64_t init_seed = 0;
  gm::GmConfig gm;  // also the outer loop of maml
  baselines::MamlConfig maml;
  baselines::PseudoConfig pseudo;
  baselines::SupervisedConfig supervised;
  LabeledSpec labeled;
  EvalSpec eval;
  bool record_wall_clock = true;  // written to a separate timings file

  models::AnnotatorSpec annotator_spec() const {
    return {world.pyramid_levels, world.feature_channels(), annotator_width, world.num_classes};
  }

  models::SegmentorSpec segmentor_spec() const {
    auto s = segmentor;
    s.num_classes = world.num_classes;
    s.image_size = world.image_size;
    return s;
  }

  void validate() const {
    world.validate();
    gm.validate();
    if (method == Method::maml) {
      auto m = maml;
      m.outer = gm;
      m.validate();
    }
    if (method == Method::pseudo) pseudo.validate();
    if (method == Method::supervised) {
      supervised.validate();
      if (labeled.mode != world::SetMode::synthetic)
        throw ConfigError("config.labeled.mode: the supervised method needs synthetic-mode labels");
    }
    if (labeled.n < 1) throw ConfigError("config.labeled.n: must be >= 1");
    if (annotator_width < 1) throw ConfigError("config.annotator.width: must be >= 1");
    if (eval.downstream) eval.train.validate();
    if (eval.export_size < 1) throw ConfigError("config.eval.export_size: must be >= 1");
    const std::set<std::uint64_t> seeds{labeled.seed, gm.seed, eval.test_seed, eval.export_seed};
    if (seeds.size() != 4)
      throw ConfigError("config: labeled.seed, gm.seed, eval.test_seed and eval.export_seed must be pairwise distinct");
    (void)models::segmentor_layout(segmentor_spec());
  }
};

namespace detail {

// Typed, path-aware reader over one JSON object.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string p = path_ + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(p + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<V> && v.get<std::int64_t>() < 0))
        throw ConfigError(p + std::string(": expected ") + (std::is_unsigned_v<V> ? "a nonnegative integer" : "an integer"));
      out = v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(p + ": expected a number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError(p + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      if (!v.is_array()) throw ConfigError(p + ": expected an array of nonnegative integers");
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number_integer() || v[i].get<std::int64_t>() < 0)
          throw ConfigError(p + "[" + std::to_string(i) + "]: expected a nonnegative integer");
        out.push_back(v[i].get<std::size_t>());
      }
    } else if constexpr (std::is_same_v<V, std::vector<std::string>>) {
      if (v.is_string()) {
        out = {v.get<std::string>()};
        return;
      }
      if (!v.is_array()) throw ConfigError(p + ": expected a string or an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) throw ConfigError(p + "[" + std::to_string(i) + "]: expected a string");
        out.push_back(v[i].get<std::string>());
      }
    } else {
      static_assert(sizeof(V) == 0, "unsupported field type");
    }
  }

  template <class Parse, class V>
  void read_enum(const char* key, V& out, Parse&& parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  std::optional<Fields> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Fields(j_.at(key), path_ + "." + key);
  }

  // Rejects keys that no reader asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown field");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_world(Fields f, world::WorldConfig& w) {
  f.read("image_size", w.image_size);
  f.read("num_classes", w.num_classes);
  f.read("latent_dim", w.latent_dim);
  f.read("pyramid_levels", w.pyramid_levels);
  f.read("channels_per_level", w.channels_per_level);
  f.read("nuisance_channels", w.nuisance_channels);
  f.read("mixing_seed", w.mixing_seed);
  f.read("quality", w.quality);
  f.read("ood", w.ood);
  f.read("min_part_pixels", w.min_part_pixels);
  f.read("texture_amplitude", w.texture_amplitude);
  f.read("pixel_noise", w.pixel_noise);
  f.read("feature_noise", w.feature_noise);
  f.read("feature_blur", w.feature_blur);
  f.read("max_redraws", w.max_redraws);
  f.finish();
}

inline void read_gm(Fields f, gm::GmConfig& g) {
  f.read("steps", g.steps);
  f.read("update_interval", g.update_interval);
  f.read("batch_size", g.batch_size);
  f.read("lr_annotator", g.lr_annotator);
  f.read("lr_segmentor", g.lr_segmentor);
  f.read("momentum", g.momentum);
  f.read("layers", g.layers);
  f.read("include_biases", g.include_biases);
  f.read_enum("strategy", g.strategy, gm::parse_strategy);
  f.read_enum("policy", g.policy, gm::parse_policy);
  f.read("warmstart_steps", g.warmstart_steps);
  f.read("input_resolution", g.input_resolution);
  f.read("seed", g.seed);
  f.read("eval_every", g.eval_every);
  f.read("val_size", g.val_size);
  f.read("hard_theta_labels", g.hard_theta_labels);
  f.read("annotator_clip", g.annotator_clip);
  f.finish();
}

inline void read_supervised(Fields f, baselines::SupervisedConfig& s) {
  f.read("steps", s.steps);
  f.read("batch_size", s.batch_size);
  f.read("lr", s.lr);
  f.read("momentum", s.momentum);
  f.read("seed", s.seed);
  f.finish();
}

}  // namespace detail

inline nlohmann::json to_json(const gm::GmConfig& g) {
  return {{"steps", g.steps},
          {"update_interval", g.update_interval},
          {"batch_size", g.batch_size},
          {"lr_annotator", g.lr_annotator},
          {"lr_segmentor", g.lr_segmentor},
          {"momentum", g.momentum},
          {"layers", g.layers},
          {"include_biases", g.include_biases},
          {"strategy", gm::strategy_name(g.strategy)},
          {"policy", gm::policy_name(g.policy)},
          {"warmstart_steps", g.warmstart_steps},
          {"input_resolution", g.input_resolution},
          {"seed", g.seed},
          {"eval_every", g.eval_every},
          {"val_size", g.val_size},
          {"hard_theta_labels", g.hard_theta_labels},
          {"annotator_clip", g.annotator_clip}};
}

inline nlohmann::json to_json(const baselines::SupervisedConfig& s) {
  return {{"steps", s.steps}, {"batch_size", s.batch_size}, {"lr", s.lr}, {"momentum", s.momentum}, {"seed", s.seed}};
}

inline nlohmann::json to_json(const DownstreamConfig& d) {
  return {{"steps", d.steps}, {"batch_size", d.batch_size}, {"lr", d.lr}, {"momentum", d.momentum},
          {"seed", d.seed},   {"hard_labels", d.hard_labels}};
}

// Full snapshot with every default filled in; parse(to_json(c)) == c.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json eval = {{"test_size", c.eval.test_size},
                         {"test_seed", c.eval.test_seed},
                         {"fg_only", c.eval.fg_only},
                         {"downstream", c.eval.downstream},
                         {"export_size", c.eval.export_size},
                         {"export_seed", c.eval.export_seed},
                         {"train", to_json(c.eval.train)}};
  if (c.eval.downstream_arch) eval["downstream_arch"] = models::arch_name(*c.eval.downstream_arch);
  return {{"name", c.name},
          {"output_dir", c.output_dir},
          {"method", method_name(c.method)},
          {"world", world::to_json(c.world)},
          {"annotator", {{"width", c.annotator_width}}},
          {"segmentor",
           {{"arch", models::arch_name(c.segmentor.arch)},
            {"widths", c.segmentor.widths},
            {"depth", c.segmentor.depth},
            {"input_resolution", c.segmentor.input_resolution}}},
          {"init_seed", c.init_seed},
          {"gm", to_json(c.gm)},
          {"maml", {{"inner_steps", c.maml.inner_steps}, {"inner_lr", c.maml.inner_lr}}},
          {"pseudo",
           {{"segmentor_steps", c.pseudo.segmentor_steps},
            {"pool_size", c.pseudo.pool_size},
            {"soft", c.pseudo.soft},
            {"lr_segmentor", c.pseudo.lr_segmentor},
            {"annotator", to_json(c.pseudo.annotator)}}},
          {"supervised", to_json(c.supervised)},
          {"labeled", {{"n", c.labeled.n}, {"mode", world::mode_name(c.labeled.mode)}, {"seed", c.labeled.seed}}},
          {"eval", eval},
          {"record_wall_clock", c.record_wall_clock}};
}

inline Method parse_method(std::string_view s) {
  if (s == "gm") return Method::gm;
  if (s == "maml") return Method::maml;
  if (s == "pseudo") return Method::pseudo;
  if (s == "supervised") return Method::supervised;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected gm, maml, pseudo or supervised)");
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::Fields f(j, "config");
  f.read("name", c.name);
  f.read("output_dir", c.output_dir);
  f.read_enum("method", c.method, parse_method);
  if (auto w = f.child("world")) detail::read_world(*w, c.world);
  if (auto a = f.child("annotator")) {
    a->read("width", c.annotator_width);
    a->finish();
  }
  if (auto s = f.child("segmentor")) {
    s->read_enum("arch", c.segmentor.arch, models::parse_arch);
    s->read("widths", c.segmentor.widths);
    s->read("depth", c.segmentor.depth);
    s->read("input_resolution", c.segmentor.input_resolution);
    s->finish();
  }
  f.read("init_seed", c.init_seed);
  if (auto g = f.child("gm")) detail::read_gm(*g, c.gm);
  if (auto m = f.child("maml")) {
    m->read("inner_steps", c.maml.inner_steps);
    m->read("inner_lr", c.maml.inner_lr);
    m->finish();
  }
  if (auto p = f.child("pseudo")) {
    p->read("segmentor_steps", c.pseudo.segmentor_steps);
    p->read("pool_size", c.pseudo.pool_size);
    p->read("soft", c.pseudo.soft);
    p->read("lr_segmentor", c.pseudo.lr_segmentor);
    if (auto a = p->child("annotator")) detail::read_supervised(*a, c.pseudo.annotator);
    p->finish();
  }
  if (auto s = f.child("supervised")) detail::read_supervised(*s, c.supervised);
  if (auto l = f.child("labeled")) {
    l->read("n", c.labeled.n);
    l->read_enum("mode", c.labeled.mode, world::parse_mode);
    l->read("seed", c.labeled.seed);
    l->finish();
  }
  if (auto e = f.child("eval")) {
    e->read("test_size", c.eval.test_size);
    e->read("test_seed", c.eval.test_seed);
    e->read("fg_only", c.eval.fg_only);
    e->read("downstream", c.eval.downstream);
    e->read("export_size", c.eval.export_size);
    e->read("export_seed", c.eval.export_seed);
    std::string arch;
    e->read("downstream_arch", arch);
    if (!arch.empty()) {
      try {
        c.eval.downstream_arch = models::parse_arch(arch);
      } catch (const Error& err) {
        throw ConfigError(std::string("config.eval.downstream_arch: ") + err.what());
      }
    }
    if (auto t = e->child("train")) {
      t->read("steps", c.eval.train.steps);
      t->read("batch_size", c.eval.train.batch_size);
      t->read("lr", c.eval.train.lr);
      t->read("momentum", c.eval.train.momentum);
      t->read("seed", c.eval.train.seed);
      t->read("hard_labels", c.eval.train.hard_labels);
      t->finish();
    }
    e->finish();
  }
  f.read("record_wall_clock", c.record_wall_clock);
  f.finish();
  c.maml.outer = c.gm;
  c.eval.train.test_size = c.eval.test_size;
  c.eval.train.test_seed = c.eval.test_seed;
  c.validate();
  return c;
}

// Applies `a.b.c=value` overrides. Values are parsed as JSON when possible
// and taken as plain strings otherwise.
inline void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + o + "': empty path component");
      if (!node->is_object()) throw ConfigError("override '" + o + "': '" + part + "' is not inside an object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = nlohmann::json::object();
      start = dot + 1;
    }
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  auto j = read_json_file(path);
  apply_overrides(j, overrides);
  return parse_config(j);
}

}  // namespace gmlabel::harness
