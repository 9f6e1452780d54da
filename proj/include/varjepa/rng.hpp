#pragma once

#include <cstdint>

namespace varjepa {

/// Named top-level streams. A run derives every random quantity from
/// Rng(seed, stream) so that, e.g., changing projection sampling never
/// perturbs the data.
enum class Stream : std::uint64_t {
  process = 1,
  data = 2,
  train_noise = 3,
  projection = 4,
  init = 5,
  shuffle = 6,
  mask = 7,
  probe = 8,
  corrupt = 9,
};

/// Counter-based generator: output i is a pure function of (key, i).
/// split() derives an independent child key, which is how per-sample
/// generation stays reproducible when parallelized.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);
  Rng(std::uint64_t seed, Stream s) : Rng(seed, static_cast<std::uint64_t>(s)) {}

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1) with 53 bits.
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Rng split(std::uint64_t child) const;
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  struct Raw {};
  Rng(Raw, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace varjepa
