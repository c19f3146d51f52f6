#include "koopmhe/rng.hpp"

#include <cmath>
#include <numbers>

#include "koopmhe/error.hpp"

namespace koopmhe {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::stream(std::string_view name) const {
  return Rng(splitmix64(seed_ ^ fnv1a64(name)));
}

Rng Rng::stream(std::uint64_t index) const {
  return Rng(splitmix64(seed_ + splitmix64(index + 0x632be59bd9b4e019ULL)));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  require(n > 0, ErrorCode::kContract, "uniform_index on empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double Rng::truncated_normal(double sd, double bound) {
  if (sd == 0.0) return 0.0;
  require(sd > 0.0 && bound > 0.0, ErrorCode::kConfiguration,
          "truncated normal needs positive sd and bound");
  for (;;) {
    const double w = sd * normal();
    if (std::abs(w) <= bound) return w;
  }
}

}  // namespace koopmhe
