#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace twophase {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract input (schema violations, broken invariants).
class InputError : public Error {
 public:
  using Error::Error;
};

/// The requested design cannot be realised under the budget.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// An iterative fit failed to converge or diverged.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Monotone likelihood in a binary regression.
class SeparationError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` under `seed`. Deterministic and independent of
/// how work is scheduled.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix_seed(mix_seed(seed) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads (0 = hardware
/// concurrency). Iterations must write to disjoint state.
void parallel_for(std::size_t count, unsigned workers,
                  const std::function<void(std::size_t)>& fn);

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Shortest-round-trip is not required; 17 significant digits always
/// reproduces the double bit-exactly.
std::string format_double(double value);

/// Parses a full string as a double; throws InputError on trailing garbage.
double parse_double(std::string_view text);

double mean(std::span<const double> values);
/// Sample variance with divisor (n - 1).
double sample_variance(std::span<const double> values);
/// Linear-interpolation quantile (type 7) of unsorted data.
double quantile(std::vector<double> values, double prob);

}  // namespace twophase
