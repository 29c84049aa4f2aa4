#include "hqdm/denoiser.hpp"

#include <cmath>
#include <string>

#include "hqdm/diffusion.hpp"
#include "hqdm/nn_ops.hpp"
#include "hqdm/parallel.hpp"
#include "hqdm/rng.hpp"

namespace hqdm {

namespace {

constexpr std::size_t kConvIn = 0, kDown = 1, kMid = 2, kFc1 = 3, kFc2 = 4, kUp = 5, kConvOut = 6;

Tensor kernel_view(const Tensor& w) { return reshape(w, {w.dim(0), w.size() / w.dim(0)}); }

// [1 x C x H x W] -> [H*W x C]
Tensor to_tokens(const Tensor& h) {
  const std::size_t c = h.dim(1), hw = h.dim(2) * h.dim(3);
  Tensor out({hw, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out.at(p, ch) = h[ch * hw + p];
  return out;
}

Tensor from_tokens(const Tensor& v, const Shape& shape) {
  const std::size_t c = shape[1], hw = shape[2] * shape[3];
  Tensor out(shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = v.at(p, ch);
  return out;
}

void add_channel_bias(Tensor& y, const Tensor& bias, const Tensor& temb, std::size_t t) {
  const std::size_t c = y.dim(1), plane = y.size() / (y.dim(0) * c);
  for (std::size_t n = 0; n < y.dim(0); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double b = bias[ch] + (temb.empty() ? 0.0 : temb.at(t, ch));
      double* p = y.data().data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

void add_row_bias(Tensor& y, const Tensor& bias) {
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y.at(r, c) += bias[c];
}

Tensor one_hot_grad(std::size_t size, std::size_t index, double value) {
  Tensor g({size});
  g[index] = value;
  return g;
}

void add_into(Tensor& acc, const Tensor& v) {
  if (v.empty()) return;
  if (acc.empty()) {
    acc = v;
  } else {
    axpy(acc, 1.0, v);
  }
}

}  // namespace

std::size_t layer_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumLayers; ++i)
    if (kLayerNames[i] == name) return i;
  throw ValidationError("unknown layer '" + std::string(name) + "'");
}

void ToyDenoiser::SampleGrads::accumulate(const SampleGrads& other) {
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    add_into(d_what[i], other.d_what[i]);
    add_into(d_bias[i], other.d_bias[i]);
    add_into(d_temb[i], other.d_temb[i]);
    d_act_scale_sum[i] += other.d_act_scale_sum[i];
    act_numel[i] += other.act_numel[i];
  }
}

ToyDenoiser::ToyDenoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  if (config.image_size < 4 || config.image_size % 2 != 0) throw ValidationError("image size must be even and >= 4");
  if (config.timesteps < 2) throw ValidationError("denoiser needs at least two timesteps");
  Rng rng(seed);
  const std::size_t C = config.base_channels, C2 = config.mid_channels, Hd = config.hidden, T = config.timesteps;
  auto conv = [&](std::size_t cout, std::size_t cin, std::size_t stride, double gain) {
    QConvLayer l;
    const double fan_in = static_cast<double>(cin * 9);
    l.weight = rng.normal_tensor({cout, cin, 3, 3}, gain / std::sqrt(fan_in));
    l.stride = stride;
    l.padding = 1;
    return l;
  };
  auto linear = [&](std::size_t cin, std::size_t cout, double gain) {
    QLinearLayer l;
    l.weight = rng.normal_tensor({cin, cout}, gain / std::sqrt(static_cast<double>(cin)));
    l.plan = make_plan(cin, 0);
    return l;
  };
  slots_[kConvIn] = Slot{conv(C, 1, 1, 1.0), zeros({C}), zeros({T, C})};
  slots_[kDown] = Slot{conv(C2, C, 2, 1.0), zeros({C2}), zeros({T, C2})};
  slots_[kMid] = Slot{conv(C2, C2, 1, 1.0), zeros({C2}), zeros({T, C2})};
  slots_[kFc1] = Slot{linear(C2, Hd, 1.0), zeros({Hd}), Tensor{}};
  slots_[kFc2] = Slot{linear(Hd, C2, 1.0), zeros({C2}), Tensor{}};
  slots_[kUp] = Slot{conv(C, C2, 1, 1.0), zeros({C}), zeros({T, C})};
  slots_[kConvOut] = Slot{conv(1, C, 1, 0.5), zeros({1}), Tensor{}};
}

void ToyDenoiser::enable_quantization(const StudentQuantConfig& q) {
  if (q.scheme == Scheme::double_hadamard) {
    throw ValidationError("double_hadamard is a comparison baseline only and cannot drive a student");
  }
  const QuantParams wp = QuantParams::symmetric(q.w_bits);
  const QuantParams ap = QuantParams::symmetric(q.a_bits);
  const std::size_t T = config_.timesteps;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::uint64_t lora_seed = derive_seed(q.seed, std::string("lora.") + std::string(kLayerNames[i]));
    std::visit(
        [&](auto& l) {
          l.w_params = wp;
          l.a_params = ap;
          l.scheme = q.scheme;
          l.act_scales = ScaleTable(T, 1.0, true);
          l.w_scales = ScaleTable(T, 1.0, q.weight_scales_per_timestep);
          const Tensor view = kernel_view(l.weight);
          // Rank is capped at min(rows, cols)/2; layers too narrow for rank 1 stay unadapted.
          const std::size_t cap = std::min(view.dim(0), view.dim(1)) / 2;
          const std::size_t rank = std::min(q.lora_rank, cap);
          l.lora.reset();
          if (rank >= 1) l.lora = lora_init(view.dim(0), view.dim(1), rank, lora_seed, q.lora_scaling);
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, QConvLayer>) {
            l.k_preferred = q.k_preferred;
          } else {
            l.plan = make_plan(l.in_features(), q.k_preferred);
          }
        },
        slots_[i].layer);
  }
  quant_ = q;
  quantized_ = true;
}

void ToyDenoiser::disable_quantization() {
  for (auto& s : slots_) {
    std::visit(
        [](auto& l) {
          l.lora.reset();
          l.act_scales = ScaleTable();
          l.w_scales = ScaleTable();
          l.scheme = Scheme::plain;
        },
        s.layer);
  }
  quantized_ = false;
}

ToyDenoiser::Prepared ToyDenoiser::prepare(std::size_t t) const {
  Prepared p;
  p.t = t;
  if (t >= config_.timesteps) throw ValidationError("timestep " + std::to_string(t) + " outside model range");
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    std::visit(
        [&](const auto& l) {
          const double s = quantized_ ? l.w_scales.at(t) : 1.0;
          p.weights[i] = weight_quant_forward(weight_effective(l), s, l.w_params, quantized_);
        },
        slots_[i].layer);
  }
  return p;
}

Tensor ToyDenoiser::forward(const Prepared& prepared, const Tensor& x, Tape* tape, const Hook* hook) const {
  const std::size_t S = config_.image_size;
  if (x.shape() != Shape{1, 1, S, S}) throw ValidationError("denoiser input must be [1x1xSxS], got " + shape_str(x.shape()));
  const std::size_t t = prepared.t;
  if (tape) tape->t = t;

  auto run = [&](std::size_t i, const Tensor& in) {
    if (hook) (*hook)(kLayerNames[i], t, in);
    const Slot& slot = slots_[i];
    ActQuantCache cache;
    Tensor xhat, y;
    if (const auto* c = std::get_if<QConvLayer>(&slot.layer)) {
      const HadamardPlan plan = quantized_ ? c->plan_for_width(in.dim(3)) : make_plan(in.dim(3), 0);
      const double s = quantized_ ? c->act_scales.at(t) : 1.0;
      xhat = act_quant_forward(in, plan, s, c->a_params, quantized_, tape ? &cache : nullptr);
      y = conv2d(xhat, prepared.weights[i].w_hat, c->stride, c->padding);
      add_channel_bias(y, slot.bias, slot.temb, t);
    } else {
      const auto& l = std::get<QLinearLayer>(slot.layer);
      const HadamardPlan plan = quantized_ ? activation_plan(l) : make_plan(l.in_features(), 0);
      const double s = quantized_ ? l.act_scales.at(t) : 1.0;
      xhat = act_quant_forward(in, plan, s, l.a_params, quantized_, tape ? &cache : nullptr);
      y = matmul(xhat, prepared.weights[i].w_hat);
      add_row_bias(y, slot.bias);
    }
    if (tape) {
      tape->act[i] = std::move(cache);
      tape->xhat[i] = std::move(xhat);
      tape->input_numel[i] = in.size();
    }
    return y;
  };

  Tensor z0 = run(kConvIn, x);
  Tensor h0 = silu(z0);
  Tensor z1 = run(kDown, h0);
  Tensor h1 = silu(z1);
  Tensor z2 = run(kMid, h1);
  Tensor h2 = silu(z2);
  Tensor u_pre = run(kFc1, to_tokens(h2));
  Tensor u = silu(u_pre);
  Tensor v = run(kFc2, u);
  Tensor h3 = add(h2, from_tokens(v, h2.shape()));
  Tensor z5 = run(kUp, upsample2x(h3));
  Tensor h5 = add(silu(z5), h0);
  Tensor out = run(kConvOut, h5);
  if (tape) {
    tape->z0 = std::move(z0);
    tape->z1 = std::move(z1);
    tape->z2 = std::move(z2);
    tape->u_pre = std::move(u_pre);
    tape->z5 = std::move(z5);
  }
  return out;
}

ToyDenoiser::SampleGrads ToyDenoiser::backward(const Prepared& prepared, const Tape& tape, const Tensor& dout) const {
  SampleGrads g;
  const std::size_t t = tape.t;

  auto back = [&](std::size_t i, const Tensor& dy) {
    const Slot& slot = slots_[i];
    Tensor dxhat;
    if (const auto* c = std::get_if<QConvLayer>(&slot.layer)) {
      Conv2dGrads cg = conv2d_backward(tape.xhat[i], prepared.weights[i].w_hat, c->stride, c->padding, dy);
      g.d_what[i] = std::move(cg.dw);
      dxhat = std::move(cg.dx);
      const std::size_t ch = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
      Tensor db({ch});
      for (std::size_t c2 = 0; c2 < ch; ++c2)
        for (std::size_t p = 0; p < plane; ++p) db[c2] += dy[c2 * plane + p];
      if (!slot.temb.empty()) {
        Tensor dt(slot.temb.shape());
        for (std::size_t c2 = 0; c2 < ch; ++c2) dt.at(t, c2) = db[c2];
        g.d_temb[i] = std::move(dt);
      }
      g.d_bias[i] = std::move(db);
    } else {
      g.d_what[i] = matmul_tn(tape.xhat[i], dy);
      dxhat = matmul_nt(dy, prepared.weights[i].w_hat);
      Tensor db({dy.cols()});
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c2 = 0; c2 < dy.cols(); ++c2) db[c2] += dy.at(r, c2);
      g.d_bias[i] = std::move(db);
    }
    ActQuantGrads ag = act_quant_backward(tape.act[i], dxhat);
    g.d_act_scale_sum[i] = ag.dscale_sum;
    g.act_numel[i] = tape.input_numel[i];
    return std::move(ag.dx);
  };

  Tensor dh5 = back(kConvOut, dout);
  Tensor dh0 = dh5;  // skip connection
  Tensor dh4 = back(kUp, silu_backward(tape.z5, dh5));
  Tensor dh3 = upsample2x_backward(dh4);
  Tensor du = back(kFc2, to_tokens(dh3));
  Tensor dtok = back(kFc1, silu_backward(tape.u_pre, du));
  Tensor dh2 = add(dh3, from_tokens(dtok, dh3.shape()));
  Tensor dh1 = back(kMid, silu_backward(tape.z2, dh2));
  axpy(dh0, 1.0, back(kDown, silu_backward(tape.z1, dh1)));
  back(kConvIn, silu_backward(tape.z0, dh0));
  return g;
}

Tensor ToyDenoiser::predict(const Tensor& batch, std::size_t t, const Hook* hook) const {
  const Prepared prepared = prepare(t);
  const std::size_t n = batch.dim(0);
  std::vector<Tensor> outs(n);
  if (hook) {
    // Hooks observe samples in order.
    for (std::size_t i = 0; i < n; ++i) outs[i] = forward(prepared, unstack(batch, i), nullptr, hook);
  } else {
    parallel_for(n, [&](std::size_t i) { outs[i] = forward(prepared, unstack(batch, i)); });
  }
  Tensor y = stack(outs);
  check_finite(y, "denoiser forward");
  return y;
}

GradMap ToyDenoiser::teacher_grads(const SampleGrads& g) const {
  GradMap out;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::string name(kLayerNames[i]);
    const Tensor& w = std::visit([](const auto& l) -> const Tensor& { return l.weight; }, slots_[i].layer);
    out[name + ".weight"] = Grad{reshape(g.d_what[i], w.shape()), std::nullopt};
    out[name + ".bias"] = Grad{g.d_bias[i], std::nullopt};
    if (!slots_[i].temb.empty()) out[name + ".temb"] = Grad{g.d_temb[i], std::nullopt};
  }
  return out;
}

GradMap ToyDenoiser::student_grads(const Prepared& prepared, const SampleGrads& g) const {
  if (!quantized_) throw ValidationError("student_grads on a full-precision model");
  GradMap out;
  const std::size_t t = prepared.t;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::string name(kLayerNames[i]);
    std::visit(
        [&](const auto& l) {
          const std::size_t ai = l.act_scales.index(t);
          const double ds = g.d_act_scale_sum[i] * lsq_grad_normalizer(g.act_numel[i], l.a_params);
          out[name + ".act_scales"] = Grad{one_hot_grad(l.act_scales.entries().size(), ai, ds), ai};
          const WeightQuantGrads wg = weight_quant_backward(prepared.weights[i], reshape(g.d_what[i], l.weight.shape()));
          const std::size_t wi = l.w_scales.index(t);
          out[name + ".w_scales"] = Grad{one_hot_grad(l.w_scales.entries().size(), wi, wg.dscale), wi};
          if (l.lora) {
            const LoraGrads lg = lora_backward(kernel_view(l.weight), *l.lora, kernel_view(wg.dw_eff));
            out[name + ".lora_A"] = Grad{lg.dA, std::nullopt};
            out[name + ".lora_B"] = Grad{lg.dB, std::nullopt};
          }
        },
        slots_[i].layer);
  }
  return out;
}

std::vector<ParamSlot> ToyDenoiser::teacher_parameters(double lr, double weight_decay) {
  std::vector<ParamSlot> out;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::string name(kLayerNames[i]);
    Slot& s = slots_[i];
    Tensor& w = std::visit([](auto& l) -> Tensor& { return l.weight; }, s.layer);
    out.push_back(ParamSlot{name + ".weight", w.data(), lr, weight_decay, std::nullopt});
    out.push_back(ParamSlot{name + ".bias", s.bias.data(), lr, 0.0, std::nullopt});
    if (!s.temb.empty()) out.push_back(ParamSlot{name + ".temb", s.temb.data(), lr, 0.0, std::nullopt});
  }
  return out;
}

std::vector<ParamSlot> ToyDenoiser::student_parameters(double lr_act_scale, double lr_w_scale, double lr_lora,
                                                       double lora_weight_decay) {
  if (!quantized_) throw ValidationError("student_parameters on a full-precision model");
  std::vector<ParamSlot> out;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::string name(kLayerNames[i]);
    std::visit(
        [&](auto& l) {
          out.push_back(ParamSlot{name + ".act_scales", l.act_scales.entries(), lr_act_scale, 0.0, kMinScale});
          out.push_back(ParamSlot{name + ".w_scales", l.w_scales.entries(), lr_w_scale, 0.0, kMinScale});
          if (l.lora) {
            out.push_back(ParamSlot{name + ".lora_A", l.lora->A.data(), lr_lora, lora_weight_decay, std::nullopt});
            out.push_back(ParamSlot{name + ".lora_B", l.lora->B.data(), lr_lora, lora_weight_decay, std::nullopt});
          }
        },
        slots_[i].layer);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ToyDenoiser::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const std::string name(kLayerNames[i]);
    const Slot& s = slots_[i];
    std::visit(
        [&](const auto& l) {
          out.emplace_back(name + ".weight", l.weight);
          out.emplace_back(name + ".bias", s.bias);
          if (!s.temb.empty()) out.emplace_back(name + ".temb", s.temb);
          if (quantized_) {
            const auto& a = l.act_scales.entries();
            const auto& w = l.w_scales.entries();
            out.emplace_back(name + ".act_scales", Tensor({a.size()}, a));
            out.emplace_back(name + ".w_scales", Tensor({w.size()}, w));
            if (l.lora) {
              out.emplace_back(name + ".lora_A", l.lora->A);
              out.emplace_back(name + ".lora_B", l.lora->B);
            }
          }
        },
        s.layer);
  }
  return out;
}

void ToyDenoiser::load_named_tensor(const std::string& full, const Tensor& value) {
  const auto dot = full.find('.');
  if (dot == std::string::npos) throw ValidationError("malformed parameter name '" + full + "'");
  Slot& s = slots_[layer_index(full.substr(0, dot))];
  const std::string field = full.substr(dot + 1);
  auto assign = [&](Tensor& dst) {
    if (dst.shape() != value.shape()) {
      throw ValidationError("parameter '" + full + "' has shape " + shape_str(value.shape()) + ", expected " +
                            shape_str(dst.shape()));
    }
    dst = value;
  };
  auto assign_table = [&](ScaleTable& table) {
    auto& e = table.entries();
    if (value.rank() != 1 || value.size() != e.size()) throw ValidationError("scale table '" + full + "' size mismatch");
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!(value[i] > 0.0)) throw ValidationError("scale table '" + full + "' has a non-positive entry");
      e[i] = value[i];
    }
  };
  std::visit(
      [&](auto& l) {
        if (field == "weight") {
          assign(l.weight);
        } else if (field == "bias") {
          assign(s.bias);
        } else if (field == "temb" && !s.temb.empty()) {
          assign(s.temb);
        } else if (field == "act_scales" && quantized_) {
          assign_table(l.act_scales);
        } else if (field == "w_scales" && quantized_) {
          assign_table(l.w_scales);
        } else if (field == "lora_A" && l.lora) {
          assign(l.lora->A);
        } else if (field == "lora_B" && l.lora) {
          assign(l.lora->B);
        } else {
          throw ValidationError("unexpected parameter '" + full + "'");
        }
      },
      s.layer);
}

QConvLayer& ToyDenoiser::conv(std::string_view name) {
  auto* c = std::get_if<QConvLayer>(&slots_[layer_index(name)].layer);
  if (!c) throw ValidationError("layer '" + std::string(name) + "' is not a convolution");
  return *c;
}

QLinearLayer& ToyDenoiser::linear(std::string_view name) {
  auto* l = std::get_if<QLinearLayer>(&slots_[layer_index(name)].layer);
  if (!l) throw ValidationError("layer '" + std::string(name) + "' is not linear");
  return *l;
}

const QConvLayer& ToyDenoiser::conv(std::string_view name) const { return const_cast<ToyDenoiser*>(this)->conv(name); }
const QLinearLayer& ToyDenoiser::linear(std::string_view name) const {
  return const_cast<ToyDenoiser*>(this)->linear(name);
}

ScaleTable& ToyDenoiser::act_scales(std::size_t layer) {
  return std::visit([](auto& l) -> ScaleTable& { return l.act_scales; }, slots_.at(layer).layer);
}
ScaleTable& ToyDenoiser::w_scales(std::size_t layer) {
  return std::visit([](auto& l) -> ScaleTable& { return l.w_scales; }, slots_.at(layer).layer);
}
const ScaleTable& ToyDenoiser::act_scales(std::size_t layer) const {
  return const_cast<ToyDenoiser*>(this)->act_scales(layer);
}
const ScaleTable& ToyDenoiser::w_scales(std::size_t layer) const {
  return const_cast<ToyDenoiser*>(this)->w_scales(layer);
}

void ToyDenoiser::round_parameters_to_f32() {
  auto round = [](std::span<double> v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& s : slots_) {
    round(s.bias.data());
    if (!s.temb.empty()) round(s.temb.data());
    std::visit(
        [&](auto& l) {
          round(l.weight.data());
          if (l.lora) {
            round(l.lora->A.data());
            round(l.lora->B.data());
          }
          round(l.act_scales.entries());
          round(l.w_scales.entries());
          l.act_scales.project();
          l.w_scales.project();
        },
        s.layer);
  }
}

}  // namespace hqdm
