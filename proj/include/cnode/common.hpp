#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnode {

// Error taxonomy, mirrored by CLI exit codes:
//   ContractError -> caller misuse (exit 1)
//   DataError     -> malformed or inconsistent input data (exit 2)
//   NumericError  -> non-finite values, divergence (exit 3)
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic random stream. All randomness in the project flows through
// this wrapper so a single seed fully determines every artifact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare, keeps the stream
  // position independent of call history).
  double normal();

  // Gamma(alpha, 1) for alpha >= 1, Marsaglia-Tsang squeeze.
  double gamma(double alpha);

  double beta(double a, double b);

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Shortest round-trip decimal form of a double; used for every CSV cell so
// save/load cycles are bit-exact.
std::string format_double(double x);

double parse_double(const std::string& s, const std::string& context);

}  // namespace cnode
