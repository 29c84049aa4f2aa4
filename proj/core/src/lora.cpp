#include "hqdm/lora.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hqdm/rng.hpp"

namespace hqdm {

namespace {

void require_conforming(const Tensor& w, const LoraAdapter& a, const char* op) {
  if (w.rank() != 2 || a.A.rank() != 2 || a.B.rank() != 2 || a.B.dim(1) != a.rank || a.A.dim(0) != a.rank ||
      w.dim(0) != a.B.dim(0) || w.dim(1) != a.A.dim(1)) {
    throw ValidationError(std::string(op) + ": adapter B" + shape_str(a.B.shape()) + " A" + shape_str(a.A.shape()) +
                          " does not fit weight " + shape_str(w.shape()));
  }
}

}  // namespace

LoraAdapter lora_init(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed, double scaling) {
  if (rank < 1 || 2 * rank > std::min(rows, cols)) {
    throw ValidationError("LoRA rank " + std::to_string(rank) + " invalid for " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " weight (need 1 <= r <= min/2)");
  }
  Rng rng(seed);
  LoraAdapter a;
  a.rank = rank;
  a.scaling = scaling;
  a.A = zeros({rank, cols});
  a.B = rng.normal_tensor({rows, rank}, 1.0 / std::sqrt(static_cast<double>(rank)));
  return a;
}

Tensor lora_apply(const Tensor& w, const LoraAdapter& adapter) {
  require_conforming(w, adapter, "lora_apply");
  Tensor out = w;
  axpy(out, adapter.scaling, matmul(adapter.B, adapter.A));
  return out;
}

LoraGrads lora_backward(const Tensor& w, const LoraAdapter& adapter, const Tensor& upstream) {
  require_conforming(w, adapter, "lora_backward");
  if (upstream.shape() != w.shape()) {
    throw ValidationError("lora_backward: upstream " + shape_str(upstream.shape()) + " != weight " +
                          shape_str(w.shape()));
  }
  LoraGrads g;
  g.dA = scale(matmul_tn(adapter.B, upstream), adapter.scaling);
  g.dB = scale(matmul_nt(upstream, adapter.A), adapter.scaling);
  return g;
}

}  // namespace hqdm
