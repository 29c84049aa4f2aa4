#pragma once

#include <cstdint>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// Low-rank update W' = W + scaling * B * A over a frozen [rows x cols] weight,
/// with B in R^{rows x r} and A in R^{r x cols}. For a linear layer rows = C_i
/// and cols = C_o; convolution kernels use their [C_out x C_in*L*L] view.
struct LoraAdapter {
  Tensor A;
  Tensor B;
  std::size_t rank = 0;
  double scaling = 1.0;

  std::size_t rows() const { return B.dim(0); }
  std::size_t cols() const { return A.dim(1); }
  std::size_t trainable_parameters() const { return A.size() + B.size(); }
};

struct LoraGrads {
  Tensor dA;
  Tensor dB;
};

/// A = 0, B ~ N(0, 1/r); requires 1 <= r <= min(rows, cols) / 2.
LoraAdapter lora_init(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed,
                      double scaling = 1.0);

Tensor lora_apply(const Tensor& w, const LoraAdapter& adapter);

/// Gradients of the adapter given G = dL/dW'. The frozen W gets none.
LoraGrads lora_backward(const Tensor& w, const LoraAdapter& adapter, const Tensor& upstream);

}  // namespace hqdm
