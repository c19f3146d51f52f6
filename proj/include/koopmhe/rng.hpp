#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace koopmhe {

// 64-bit FNV-1a, used for stream names and config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Deterministic random source. Uniform and normal draws are computed from raw
// mt19937_64 words so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent child stream derived from this stream's seed and a name.
  Rng stream(std::string_view name) const;
  Rng stream(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  // Standard normal scaled by sd, redrawn until |value| <= bound.
  double truncated_normal(double sd, double bound);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace koopmhe
