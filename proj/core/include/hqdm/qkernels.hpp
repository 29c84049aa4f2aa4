#pragma once

#include <optional>
#include <string_view>

#include "hqdm/hadamard.hpp"
#include "hqdm/lora.hpp"
#include "hqdm/quantizer.hpp"
#include "hqdm/tensor.hpp"

namespace hqdm {

/// How activations and weights meet the Hadamard transform.
///  - plain:           Y = S_X S_W * X_int * W_int
///  - single_hadamard: Y = S_XH S_W 2^(-k/2) * (XH)_int * H_raw * W_int   (W untouched)
///  - double_hadamard: Y = S_XH S_HW * (XH)_int * (H^T W)_int              (linear only)
enum class Scheme { plain, single_hadamard, double_hadamard };

std::string_view to_string(Scheme s);
Scheme parse_scheme(std::string_view name);

/// Quantized linear layer Y = X * W' with X [T x C_i], W' [C_i x C_o].
struct QLinearLayer {
  Tensor weight;
  std::optional<LoraAdapter> lora;
  QuantParams w_params = QuantParams::symmetric(8);
  QuantParams a_params = QuantParams::symmetric(8);
  ScaleTable act_scales;
  /// Scale of the quantized weight matrix: W' for plain/single, H^T W' for double.
  ScaleTable w_scales;
  HadamardPlan plan;
  Scheme scheme = Scheme::plain;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// Quantized NCHW convolution with a square kernel [C_out x C_in x L x L].
/// The Hadamard plan runs along the activation width and is rebuilt per call.
struct QConvLayer {
  Tensor weight;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::optional<LoraAdapter> lora;
  QuantParams w_params = QuantParams::symmetric(8);
  QuantParams a_params = QuantParams::symmetric(8);
  ScaleTable act_scales;
  ScaleTable w_scales;
  int k_preferred = kDefaultHadamardOrder;
  Scheme scheme = Scheme::plain;

  /// Plan for an activation of width w: identity for the plain scheme.
  HadamardPlan plan_for_width(std::size_t w) const;
};

/// Activation-side plan of a linear layer: identity for the plain scheme.
HadamardPlan activation_plan(const QLinearLayer& layer);

/// W + B*A when an adapter is attached, otherwise W.
Tensor weight_effective(const QLinearLayer& layer);
/// Convolution kernels adapt their flattened [C_out x C_in*L*L] view.
Tensor weight_effective(const QConvLayer& layer);

/// Integer weights as the scheme stores them (H^T W' for double_hadamard).
QuantizedTensor quantized_weight(const QLinearLayer& layer, std::size_t t);
QuantizedTensor quantized_weight(const QConvLayer& layer, std::size_t t);

/// Float fake-quant reference: dequantize in the transformed domain, undo the
/// transform with the orthonormal FWHT, multiply with dequantized weights.
Tensor qlinear_forward(const QLinearLayer& layer, const Tensor& x, std::size_t t);
/// Integer execution: int64 GEMMs, real prefactor applied once at the end.
Tensor qlinear_forward_int_path(const QLinearLayer& layer, const Tensor& x, std::size_t t);
/// The double-Hadamard comparison baseline; same as qlinear_forward with the
/// scheme forced to double_hadamard.
Tensor double_hadamard_linear(const QLinearLayer& layer, const Tensor& x, std::size_t t);

Tensor qconv_forward(const QConvLayer& layer, const Tensor& x, std::size_t t);
Tensor qconv_forward_int_path(const QConvLayer& layer, const Tensor& x, std::size_t t);

/// Quantized activations of a layer input in the scheme's transformed domain.
QuantizedTensor quantize_activation(const Tensor& x, const HadamardPlan& plan, double scale, const QuantParams& p);


// Layer-local training contracts. `enabled == false` turns a quantizer into the identity.

struct ActQuantCache {
  Tensor transformed;  // x * H (or x for an identity plan)
  HadamardPlan plan;
  double scale = 1.0;
  QuantParams params;
  bool enabled = false;
};

/// x_hat = FQ(x H) H along the last axis.
Tensor act_quant_forward(const Tensor& x, const HadamardPlan& plan, double scale, const QuantParams& p, bool enabled,
                         ActQuantCache* cache);

struct ActQuantGrads {
  Tensor dx;
  /// Unnormalized LSQ sum; callers apply lsq_grad_normalizer over the full tensor.
  double dscale_sum = 0.0;
};
ActQuantGrads act_quant_backward(const ActQuantCache& cache, const Tensor& dxhat);

struct WeightQuantCache {
  Tensor w_eff;
  Tensor w_hat;
  double scale = 1.0;
  QuantParams params;
  bool enabled = false;
};
WeightQuantCache weight_quant_forward(Tensor w_eff, double scale, const QuantParams& p, bool enabled);

struct WeightQuantGrads {
  Tensor dw_eff;
  double dscale = 0.0;  // normalized
};
WeightQuantGrads weight_quant_backward(const WeightQuantCache& cache, const Tensor& dw_hat);

}  // namespace hqdm
