#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace gmlabel {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull)); }

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Named random streams. Latents for different purposes are drawn from
// different domains, so two streams never share a draw.
enum class Stream : std::uint64_t {
  labeled = 1,
  validation = 2,
  test = 3,
  train_synthetic = 4,
  init = 5,
  labeled_batch = 6,
  probe = 7,
  export_set = 8,
  pseudo = 9,
  reinit = 10,
  gradcheck = 11,
};

inline std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::labeled: return "labeled";
    case Stream::validation: return "validation";
    case Stream::test: return "test";
    case Stream::train_synthetic: return "train_synthetic";
    case Stream::init: return "init";
    case Stream::labeled_batch: return "labeled_batch";
    case Stream::probe: return "probe";
    case Stream::export_set: return "export";
    case Stream::pseudo: return "pseudo";
    case Stream::reinit: return "reinit";
    case Stream::gradcheck: return "gradcheck";
  }
  return "?";
}

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t index = 0) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(s) * 0x1000193ull), index);
}

// Portable generator: the engine is fully specified by the standard and the
// distributions below are written out, so draws do not depend on the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gmlabel
