#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "hqdm/qkernels.hpp"

namespace hqdm::cli {

/// Fast invariant checks; returns the number of failures.
int run_selftest(std::ostream& os);

struct BenchOptions {
  std::vector<std::size_t> dims{256, 1024};
  int bits = 4;
  Scheme scheme = Scheme::single_hadamard;
  std::size_t reps = 20;
  std::size_t tokens = 64;
};
void run_bench(std::ostream& os, const BenchOptions& opt);

/// Plain (P2) PGM of an [n x 1 x S x S] batch laid out in a grid, [-1,1] -> [0,255].
void write_pgm(std::ostream& os, const Tensor& batch, std::size_t columns);

}  // namespace hqdm::cli
