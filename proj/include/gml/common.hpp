#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gml {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/rank mismatches and invalid tensor geometry.
class DimError : public Error {
 public:
  using Error::Error;
};

// Invalid run/model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures (open/read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized data. `kind()` distinguishes the failure modes so
// callers and tests can tell a bad magic from a truncated payload.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kBadDtype, kBadRank, kDimOverflow, kTruncated, kBadRecord };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Counter-based 64-bit PRNG (splitmix64). The whole 64-bit state fits in one
// word, which is what the checkpoint format stores. Deterministic across
// platforms, unlike the stdlib distributions.
struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

// Derives an independent stream from a base seed and a stream tag.
inline SplitMix64 seed_stream(std::uint64_t seed, std::uint64_t tag) {
  SplitMix64 mixer(seed ^ (tag * 0xD1B54A32D192ED03ULL));
  return SplitMix64(mixer.next());
}

}  // namespace gml
