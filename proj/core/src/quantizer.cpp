#include "hqdm/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hqdm {

namespace {

void require_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("quantization scale must be positive and finite");
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

// std::nearbyint under the default FE_TONEAREST mode rounds ties to even.
inline double round_half_even(double v) { return std::nearbyint(v); }

inline std::int64_t quantize_one(double v, double s, const QuantParams& p) {
  const double r = round_half_even(v / s);
  if (r <= static_cast<double>(p.q_min)) return p.q_min;
  if (r >= static_cast<double>(p.q_max)) return p.q_max;
  return static_cast<std::int64_t>(r);
}

}  // namespace

QuantParams QuantParams::symmetric(int bits) {
  if (bits < 2 || bits > kMaxBits) throw ValidationError("bit-width " + std::to_string(bits) + " outside [2, " + std::to_string(kMaxBits) + "]");
  const std::int64_t half = std::int64_t{1} << (bits - 1);
  return QuantParams{bits, -half, half - 1};
}

ScaleTable::ScaleTable(std::size_t timesteps, double init, bool per_timestep, bool learnable)
    : timesteps_(timesteps), per_timestep_(per_timestep), learnable_(learnable) {
  if (timesteps == 0) throw ValidationError("ScaleTable needs at least one timestep");
  require_scale(init);
  scales_.assign(per_timestep ? timesteps : 1, init);
}

std::size_t ScaleTable::index(std::size_t t) const {
  if (t >= timesteps_) {
    throw ValidationError("timestep " + std::to_string(t) + " outside scale table of " +
                          std::to_string(timesteps_) + " steps");
  }
  return per_timestep_ ? t : 0;
}

void ScaleTable::set(std::size_t t, double s) {
  require_scale(s);
  scales_[index(t)] = s;
}

void ScaleTable::project() {
  for (double& s : scales_) s = std::max(s, kMinScale);
}

QuantizedTensor quantize(const Tensor& x, double s, const QuantParams& p) {
  require_scale(s);
  IntTensor ints(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i])) throw NumericError("quantize: NaN input at index " + std::to_string(i));
    ints[i] = quantize_one(x[i], s, p);
  }
  return QuantizedTensor{std::move(ints), s, p};
}

Tensor dequantize(const QuantizedTensor& q) {
  Tensor out(q.ints.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.scale * static_cast<double>(q.ints[i]);
  return out;
}

Tensor fake_quant(const Tensor& x, double s, const QuantParams& p) {
  require_scale(s);
  Tensor out(x.shape());
  // NaN passes through so callers can locate where it entered.
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = std::isnan(x[i]) ? x[i] : s * static_cast<double>(quantize_one(x[i], s, p));
  return out;
}

Tensor ste_backward_input(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream) {
  require_scale(s);
  require_same(x, upstream, "ste_backward_input");
  const double lo = static_cast<double>(p.q_min), hi = static_cast<double>(p.q_max);
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] / s;
    g[i] = (v >= lo && v <= hi) ? upstream[i] : 0.0;
  }
  return g;
}

double lsq_scale_grad_sum(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream) {
  require_scale(s);
  require_same(x, upstream, "lsq_scale_grad_sum");
  const double lo = static_cast<double>(p.q_min), hi = static_cast<double>(p.q_max);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] / s;
    double g;
    if (v <= lo) {
      g = lo;
    } else if (v >= hi) {
      g = hi;
    } else {
      g = round_half_even(v) - v;
    }
    acc += upstream[i] * g;
  }
  return acc;
}

double lsq_grad_normalizer(std::size_t numel, const QuantParams& p) {
  if (numel == 0) return 0.0;
  return 1.0 / std::sqrt(static_cast<double>(numel) * static_cast<double>(p.q_max));
}

double ste_backward_scale(const Tensor& x, double s, const QuantParams& p, const Tensor& upstream) {
  return lsq_scale_grad_sum(x, s, p, upstream) * lsq_grad_normalizer(x.size(), p);
}

double init_scale(const Tensor& calib, const QuantParams& p) {
  if (calib.empty()) throw ValidationError("init_scale: empty calibration tensor");
  return std::max(max_abs(calib) / static_cast<double>(p.q_max), kMinScale);
}

}  // namespace hqdm
