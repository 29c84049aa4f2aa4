#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// Seed for a named sub-stream ("teacher", "data", "distill", "sample", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

/// Deterministic generator whose complete state is the engine state.
/// Normal draws use Box-Muller without caching a spare value, so saving and
/// restoring `state()` reproduces every subsequent draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Tensor normal_tensor(Shape shape, double stddev = 1.0);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace hqdm
