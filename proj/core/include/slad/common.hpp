#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slad {

// Error taxonomy. The CLI catches Error at the boundary and maps it to a
// non-zero exit code; library code throws the most specific subtype.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ValueError : public Error {
 public:
  using Error::Error;
};
class BindingError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Deterministic random stream. mt19937_64 output is pinned by the standard;
/// the derived draws (uniform, normal, shuffle) are implemented here instead
/// of <random> distributions so sequences are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Box-Muller; consumes exactly two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Uniform index in [0, n) via 128-bit multiply-shift.
  std::size_t below(std::size_t n);

  void shuffle(std::span<std::size_t> idx);

 private:
  std::mt19937_64 gen_;
};

/// Fans one run seed out into independent per-component streams.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

std::uint64_t fnv1a(const void* data, std::size_t bytes,
                    std::uint64_t seed = 1469598103934665603ull);
std::uint64_t checksum(std::span<const double> values);

int max_threads();
void set_max_threads(int n);

/// Runs fn over disjoint chunks of [begin, end). Chunks never overlap and
/// each chunk runs its own fixed-order loop, so results are bitwise
/// independent of the thread count.
void parallel_for(std::size_t begin, std::size_t end, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace slad
