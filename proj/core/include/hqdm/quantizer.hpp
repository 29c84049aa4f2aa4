#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// Lower bound applied to every scale (initialization and after optimizer steps).
inline constexpr double kMinScale = 1e-8;
/// Widest accepted bit-width. Training configs stay within [2, 8]; wider
/// widths exist for quantization-free reference limits in tests.
inline constexpr int kMaxBits = 24;

/// Symmetric N-bit integer range [-2^(N-1), 2^(N-1) - 1], per-tensor granularity.
struct QuantParams {
  int bits = 8;
  std::int64_t q_min = -128;
  std::int64_t q_max = 127;

  static QuantParams symmetric(int bits);
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Per-timestep scales. A table built with `per_timestep == false` stores a
/// single shared entry and ignores the timestep on lookup.
class ScaleTable {
 public:
  ScaleTable() = default;
  ScaleTable(std::size_t timesteps, double init, bool per_timestep = true, bool learnable = true);

  double at(std::size_t t) const { return scales_[index(t)]; }
  void set(std::size_t t, double s);
  /// Index of the stored entry serving timestep t.
  std::size_t index(std::size_t t) const;

  std::size_t timesteps() const noexcept { return timesteps_; }
  bool per_timestep() const noexcept { return per_timestep_; }
  bool learnable() const noexcept { return learnable_; }
  const std::vector<double>& entries() const noexcept { return scales_; }
  std::vector<double>& entries() noexcept { return scales_; }

  /// Clamps every entry to at least kMinScale.
  void project();

  friend bool operator==(const ScaleTable&, const ScaleTable&) = default;

 private:
  std::size_t timesteps_ = 0;
  bool per_timestep_ = true;
  bool learnable_ = true;
  std::vector<double> scales_;
};

struct QuantizedTensor {
  IntTensor ints;
  double scale = 1.0;
  QuantParams params;
};

/// ints = clamp(round_half_even(x / s), q_min, q_max).
QuantizedTensor quantize(const Tensor& x, double s, const QuantParams& p);
Tensor dequantize(const QuantizedTensor& q);
/// dequantize(quantize(x)): the straight-through forward.
Tensor fake_quant(const Tensor& x, double s, const QuantParams& p);

/// STE input gradient: upstream masked to coordinates with q_min <= x/s <= q_max.
Tensor ste_backward_input(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream);

/// Unnormalized LSQ scale gradient: sum_i upstream_i * g_i with
/// g_i = round(x_i/s) - x_i/s inside the range, q_min / q_max when clipped.
double lsq_scale_grad_sum(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream);
/// LSQ gradient-scale normalizer 1 / sqrt(numel * q_max).
double lsq_grad_normalizer(std::size_t numel, const QuantParams& p);
/// lsq_scale_grad_sum scaled by lsq_grad_normalizer(x.size()).
double ste_backward_scale(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream);

/// max|calib| / q_max, floored at kMinScale.
double init_scale(const Tensor& calib, const QuantParams& p);

}  // namespace hqdm
