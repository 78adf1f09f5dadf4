#pragma once

#include <string>
#include <vector>

#include "gmlabel/world/world.hpp"

namespace gmlabel::world {

enum class SetMode { real, synthetic, ood };

inline std::string_view mode_name(SetMode m) {
  switch (m) {
    case SetMode::real: return "real";
    case SetMode::synthetic: return "synthetic";
    case SetMode::ood: return "ood";
  }
  return "?";
}

inline SetMode parse_mode(std::string_view s) {
  if (s == "real") return SetMode::real;
  if (s == "synthetic") return SetMode::synthetic;
  if (s == "ood") return SetMode::ood;
  throw ConfigError("unknown labeled-set mode '" + std::string(s) + "' (expected real, synthetic or ood)");
}

struct LabeledExample {
  Tensor<float> x;
  LabelMap y;
  std::vector<Tensor<float>> h;  // synthetic mode only
};

struct LabeledSet {
  SetMode mode = SetMode::real;
  std::uint64_t seed = 0;
  Stream stream = Stream::labeled;
  std::vector<LabeledExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool has_features() const {
    for (const auto& e : examples)
      if (e.h.empty()) return false;
    return !examples.empty();
  }
};

// Config used to render a given provenance mode. Real and ood renders always
// use the undegraded image path; synthetic mode keeps the generator's quality.
inline WorldConfig render_config(WorldConfig cfg, SetMode mode) {
  if (mode != SetMode::synthetic) cfg.quality = 1.0;
  cfg.ood = mode == SetMode::ood;
  return cfg;
}

inline LabeledExample to_example(GenSample s, SetMode mode) {
  LabeledExample e{std::move(s.x), std::move(s.y_star), {}};
  if (mode == SetMode::synthetic) e.h = std::move(s.h);
  return e;
}

inline LabeledSet make_labeled_set(const WorldConfig& cfg, std::int64_t n, SetMode mode, std::uint64_t seed,
                                   Stream stream = Stream::labeled) {
  if (n <= 0) throw ConfigError("make_labeled_set: n must be >= 1, got " + std::to_string(n));
  const WorldConfig rc = render_config(cfg, mode);
  LabeledSet set{mode, seed, stream, {}};
  set.examples.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    set.examples.push_back(to_example(sample_scene(latent(cfg, seed, stream, static_cast<std::uint64_t>(i)), rc), mode));
  return set;
}

// Throws unless every stream id is distinct.
inline void assert_disjoint_streams(std::initializer_list<Stream> streams) {
  std::vector<Stream> seen;
  for (auto s : streams) {
    for (auto t : seen)
      if (t == s) throw ConfigError("latent stream '" + std::string(stream_name(s)) + "' is used for two purposes");
    seen.push_back(s);
  }
}

}  // namespace gmlabel::world
