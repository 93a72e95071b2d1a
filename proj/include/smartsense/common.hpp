#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace smartsense {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Mode { kTrain, kEval };

// Raised for malformed input files; message carries the line number.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for bad command-line or API usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a computation produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Uniform in [0, 1). Hand-rolled so results do not depend on the standard
// library's distribution implementation.
inline double next_double(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double next_uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * next_double(rng);
}

// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
inline std::uint64_t next_below(Rng& rng, std::uint64_t n) {
  if (n == 0) throw UsageError("next_below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// In-place Fisher-Yates shuffle driven by next_below.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[next_below(rng, i)]);
  }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace smartsense
