#include "varjepa/rng.hpp"

#include <cmath>
#include <numbers>

namespace varjepa {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kStreamSalt = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kSplitSalt = 0x8CB92BA72F3D8DD7ULL;
}  // namespace

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : key_(mix64(seed ^ mix64(stream + kStreamSalt))) {}

std::uint64_t Rng::next_u64() { return mix64(key_ + (++counter_) * kGolden); }

double Rng::uniform() {
  // (k + 0.5) / 2^53 never hits 0 or 1
  const std::uint64_t k = next_u64() >> 11;
  return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // rejection to remove modulo bias
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Rng Rng::split(std::uint64_t child) const {
  return Rng(Raw{}, mix64(key_ ^ mix64(child * kGolden + kSplitSalt)));
}

}  // namespace varjepa
