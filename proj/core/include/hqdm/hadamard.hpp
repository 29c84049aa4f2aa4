#pragma once

#include <cstddef>
#include <span>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// Largest supported Hadamard order for explicit matrix construction.
inline constexpr int kMaxHadamardOrder = 12;
/// Base block order used when a layer does not override it (32x32 blocks).
inline constexpr int kDefaultHadamardOrder = 5;

/// Block-diagonal Hadamard operator over a dimension `dim = m * 2^k`.
///
/// The implied matrix is BlockDiag(H_k, ..., H_k) with H_k = norm * H_k^raw,
/// so it is symmetric, orthogonal and its own inverse. k == 0 is the identity
/// plan used when a dimension has no power-of-two factor to exploit.
struct HadamardPlan {
  int k = 0;
  std::size_t m = 1;
  std::size_t dim = 1;
  double norm = 1.0;

  std::size_t block() const noexcept { return std::size_t{1} << k; }
  bool is_identity() const noexcept { return k == 0; }
  friend bool operator==(const HadamardPlan&, const HadamardPlan&) = default;
};

/// 2^(-k/2), computed so that odd orders share the correctly rounded sqrt(1/2).
double hadamard_norm(int k);

/// Largest k <= k_preferred such that 2^k divides dim; identity plan when none.
HadamardPlan make_plan(std::size_t dim, int k_preferred = kDefaultHadamardOrder);
/// Plan with exactly order k; throws if 2^k does not divide dim.
HadamardPlan plan_with_order(std::size_t dim, int k);

/// Normalized Sylvester-Hadamard matrix, 2^k x 2^k.
Tensor build_hadamard(int k);
/// Unnormalized +-1 Sylvester-Hadamard matrix.
IntTensor build_hadamard_raw(int k);
/// Dense BlockDiag(H_k, ...) for a plan; oracle/testing use.
Tensor build_block_hadamard(const HadamardPlan& plan);

/// Unnormalized in-place butterfly over a power-of-two length buffer.
void fwht_raw_inplace(std::span<double> v);
/// Integer butterfly; throws OverflowError rather than wrapping.
void fwht_raw_inplace(std::span<std::int64_t> v);

/// x * H_k along the last axis, which must have length 2^k.
Tensor fwht(const Tensor& x, int k);

/// Applies the plan to every contiguous 2^k segment of the last axis.
Tensor block_transform(const Tensor& x, const HadamardPlan& plan);
/// Same as block_transform but along axis 0 of a 2-D tensor (H^T * W).
Tensor block_transform_rows(const Tensor& w, const HadamardPlan& plan);
/// Integer x * BlockDiag(H_k^raw) along the last axis (no normalization).
IntTensor block_transform_raw(const IntTensor& x, const HadamardPlan& plan);

}  // namespace hqdm
