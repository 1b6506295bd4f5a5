#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace lac {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Error type for all contract violations and I/O failures in this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic random source. mt19937_64 supplies bits; the distributions
/// are coded here explicitly so results are pinned by this file, not by the
/// standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased-enough index draw in [0, n) via the multiply-shift trick.
  int64_t index(int64_t n);

  /// Standard normal via Box-Muller; two bit draws per value, no cached spare
  /// (keeps the stream position a pure function of call count).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

/// Hierarchical seed derivation (splitmix64 finalizer over a combined word).
uint64_t mix_seed(uint64_t a, uint64_t b);

/// Worker-thread cap: LAC_THREADS if set, else hardware concurrency, min 1.
int effective_threads();

/// Runs fn(i) for i in [0, n). Work is chunked statically; results must be
/// written to per-index slots so the schedule cannot affect the output.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace lac
