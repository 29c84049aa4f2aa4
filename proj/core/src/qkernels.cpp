#include "hqdm/qkernels.hpp"

#include <string>

#include "hqdm/nn_ops.hpp"

namespace hqdm {

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::plain:
      return "plain";
    case Scheme::single_hadamard:
      return "single_hadamard";
    case Scheme::double_hadamard:
      return "double_hadamard";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "plain") return Scheme::plain;
  if (name == "single_hadamard" || name == "single") return Scheme::single_hadamard;
  if (name == "double_hadamard" || name == "double") return Scheme::double_hadamard;
  throw ValidationError("unknown scheme '" + std::string(name) + "'");
}

namespace {

void require_linear_input(const QLinearLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != layer.in_features()) {
    throw ValidationError("qlinear: input " + shape_str(x.shape()) + " does not match C_i=" +
                          std::to_string(layer.in_features()));
  }
  if (layer.plan.dim != layer.in_features()) {
    throw ValidationError("qlinear: Hadamard plan dim " + std::to_string(layer.plan.dim) + " != C_i");
  }
}

Tensor kernel_view(const Tensor& w) { return reshape(w, {w.dim(0), w.size() / w.dim(0)}); }

}  // namespace

HadamardPlan activation_plan(const QLinearLayer& layer) {
  return layer.scheme == Scheme::plain ? make_plan(layer.in_features(), 0) : layer.plan;
}

HadamardPlan QConvLayer::plan_for_width(std::size_t w) const {
  if (scheme == Scheme::double_hadamard) {
    throw ValidationError("double_hadamard is not defined for convolution layers");
  }
  return scheme == Scheme::single_hadamard ? make_plan(w, k_preferred) : make_plan(w, 0);
}

Tensor weight_effective(const QLinearLayer& layer) {
  return layer.lora ? lora_apply(layer.weight, *layer.lora) : layer.weight;
}

Tensor weight_effective(const QConvLayer& layer) {
  if (!layer.lora) return layer.weight;
  return reshape(lora_apply(kernel_view(layer.weight), *layer.lora), layer.weight.shape());
}

QuantizedTensor quantized_weight(const QLinearLayer& layer, std::size_t t) {
  const Tensor w = weight_effective(layer);
  const double s = layer.w_scales.at(t);
  if (layer.scheme == Scheme::double_hadamard) return quantize(block_transform_rows(w, layer.plan), s, layer.w_params);
  return quantize(w, s, layer.w_params);
}

QuantizedTensor quantized_weight(const QConvLayer& layer, std::size_t t) {
  if (layer.scheme == Scheme::double_hadamard) {
    throw ValidationError("double_hadamard is not defined for convolution layers");
  }
  return quantize(weight_effective(layer), layer.w_scales.at(t), layer.w_params);
}

QuantizedTensor quantize_activation(const Tensor& x, const HadamardPlan& plan, double scale, const QuantParams& p) {
  return quantize(block_transform(x, plan), scale, p);
}

Tensor qlinear_forward(const QLinearLayer& layer, const Tensor& x, std::size_t t) {
  require_linear_input(layer, x);
  const HadamardPlan plan = activation_plan(layer);
  const Tensor xhat_t = dequantize(quantize_activation(x, plan, layer.act_scales.at(t), layer.a_params));
  const Tensor what = dequantize(quantized_weight(layer, t));
  switch (layer.scheme) {
    case Scheme::plain:
      return matmul(xhat_t, what);
    case Scheme::single_hadamard:
      return matmul(block_transform(xhat_t, plan), what);
    case Scheme::double_hadamard:
      return matmul(xhat_t, what);
  }
  return {};
}

Tensor qlinear_forward_int_path(const QLinearLayer& layer, const Tensor& x, std::size_t t) {
  require_linear_input(layer, x);
  const HadamardPlan plan = activation_plan(layer);
  const QuantizedTensor qa = quantize_activation(x, plan, layer.act_scales.at(t), layer.a_params);
  const QuantizedTensor qw = quantized_weight(layer, t);
  double prefactor = qa.scale * qw.scale;
  IntTensor acc;
  if (layer.scheme == Scheme::single_hadamard) {
    // (XH)_int * H_raw * W_int; the 2^(-k/2) joins the scalar prefactor.
    acc = matmul_int(block_transform_raw(qa.ints, plan), qw.ints);
    prefactor *= plan.norm;
  } else {
    acc = matmul_int(qa.ints, qw.ints);
  }
  Tensor y = to_real(acc);
  for (double& v : y.data()) v *= prefactor;
  return y;
}

Tensor double_hadamard_linear(const QLinearLayer& layer, const Tensor& x, std::size_t t) {
  QLinearLayer copy = layer;
  copy.scheme = Scheme::double_hadamard;
  return qlinear_forward(copy, x, t);
}

Tensor qconv_forward(const QConvLayer& layer, const Tensor& x, std::size_t t) {
  if (x.rank() != 4) throw ValidationError("qconv: expected NCHW input, got " + shape_str(x.shape()));
  const HadamardPlan plan = layer.plan_for_width(x.dim(3));
  const Tensor xhat_t = dequantize(quantize_activation(x, plan, layer.act_scales.at(t), layer.a_params));
  const Tensor xhat = block_transform(xhat_t, plan);
  return conv2d(xhat, dequantize(quantized_weight(layer, t)), layer.stride, layer.padding);
}

Tensor qconv_forward_int_path(const QConvLayer& layer, const Tensor& x, std::size_t t) {
  if (x.rank() != 4) throw ValidationError("qconv: expected NCHW input, got " + shape_str(x.shape()));
  const std::size_t w = x.dim(3);
  const HadamardPlan plan = layer.plan_for_width(w);
  // Width-axis view [(B*C_in*h) x w] of the activation.
  const Tensor flat = reshape(x, {x.size() / w, w});
  const QuantizedTensor qa = quantize_activation(flat, plan, layer.act_scales.at(t), layer.a_params);
  const QuantizedTensor qw = quantized_weight(layer, t);
  IntTensor act = qa.ints;
  double prefactor = qa.scale * qw.scale;
  if (layer.scheme == Scheme::single_hadamard) {
    act = block_transform_raw(act, plan);
    prefactor *= plan.norm;
  }
  Tensor y = to_real(conv2d_int(reshape(act, x.shape()), qw.ints, layer.stride, layer.padding));
  for (double& v : y.data()) v *= prefactor;
  return y;
}

Tensor act_quant_forward(const Tensor& x, const HadamardPlan& plan, double scale, const QuantParams& p, bool enabled,
                         ActQuantCache* cache) {
  if (!enabled) {
    if (cache) *cache = ActQuantCache{Tensor{}, plan, scale, p, false};
    return x;
  }
  Tensor transformed = block_transform(x, plan);
  Tensor xhat = block_transform(fake_quant(transformed, scale, p), plan);
  if (cache) *cache = ActQuantCache{std::move(transformed), plan, scale, p, true};
  return xhat;
}

ActQuantGrads act_quant_backward(const ActQuantCache& cache, const Tensor& dxhat) {
  if (!cache.enabled) return ActQuantGrads{dxhat, 0.0};
  const Tensor dq = block_transform(dxhat, cache.plan);
  ActQuantGrads g;
  g.dscale_sum = lsq_scale_grad_sum(cache.transformed, cache.scale, cache.params, dq);
  g.dx = block_transform(ste_backward_input(cache.transformed, cache.scale, cache.params, dq), cache.plan);
  return g;
}

WeightQuantCache weight_quant_forward(Tensor w_eff, double scale, const QuantParams& p, bool enabled) {
  WeightQuantCache c;
  c.scale = scale;
  c.params = p;
  c.enabled = enabled;
  c.w_hat = enabled ? fake_quant(w_eff, scale, p) : w_eff;
  c.w_eff = std::move(w_eff);
  return c;
}

WeightQuantGrads weight_quant_backward(const WeightQuantCache& cache, const Tensor& dw_hat) {
  if (!cache.enabled) return WeightQuantGrads{dw_hat, 0.0};
  return WeightQuantGrads{ste_backward_input(cache.w_eff, cache.scale, cache.params, dw_hat),
                          ste_backward_scale(cache.w_eff, cache.scale, cache.params, dw_hat)};
}

}  // namespace hqdm
