#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hqdm/optim.hpp"
#include "hqdm/qkernels.hpp"

namespace hqdm {

struct DenoiserConfig {
  std::size_t image_size = 16;
  std::size_t base_channels = 16;
  std::size_t mid_channels = 32;
  std::size_t hidden = 64;
  std::size_t timesteps = 100;
};

/// Quantization settings that turn a teacher copy into a student.
struct StudentQuantConfig {
  Scheme scheme = Scheme::single_hadamard;
  int w_bits = 4;
  int a_bits = 4;
  int k_preferred = kDefaultHadamardOrder;
  std::size_t lora_rank = 2;
  double lora_scaling = 1.0;
  bool weight_scales_per_timestep = false;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kNumLayers = 7;
inline constexpr std::array<std::string_view, kNumLayers> kLayerNames = {"conv_in", "down", "mid", "fc1",
                                                                         "fc2",     "up",   "conv_out"};

/// Index of a layer name in kLayerNames; throws ValidationError when unknown.
std::size_t layer_index(std::string_view name);

/// Toy UNet-style noise predictor for 1-channel square images:
///
///   h0 = silu(conv_in(x) + e0[t])                    3x3/s1, 1 -> C
///   h1 = silu(down(h0) + e1[t])                      3x3/s2, C -> 2C
///   h2 = silu(mid(h1) + e2[t])                       3x3/s1
///   h3 = h2 + fc2(silu(fc1(tokens(h2))))             per-pixel bottleneck MLP
///   h5 = silu(up(upsample2x(h3)) + e3[t]) + h0       3x3/s1, 2C -> C
///   eps = conv_out(h5)                               3x3/s1, C -> 1
///
/// Every conv/linear is a quantizable layer with its own bias (kept in float).
/// With quantization disabled the model is the full-precision teacher.
class ToyDenoiser {
 public:
  using Layer = std::variant<QConvLayer, QLinearLayer>;
  /// Receives (layer name, timestep, raw layer input) before quantization.
  using Hook = std::function<void(std::string_view, std::size_t, const Tensor&)>;

  struct Slot {
    Layer layer;
    Tensor bias;  // [C_out]
    Tensor temb;  // [T x C_out], empty for layers without a timestep bias
  };

  /// Weight-side state for one forward timestep (fake-quantized W').
  struct Prepared {
    std::size_t t = 0;
    std::array<WeightQuantCache, kNumLayers> weights;
  };

  /// Per-sample activations kept for the backward pass.
  struct Tape {
    std::size_t t = 0;
    std::array<ActQuantCache, kNumLayers> act;
    std::array<Tensor, kNumLayers> xhat;  // quantizer outputs fed to each layer
    Tensor z0, z1, z2, u_pre, z5;         // SiLU pre-activations
    std::array<std::size_t, kNumLayers> input_numel{};
  };

  struct SampleGrads {
    std::array<Tensor, kNumLayers> d_what;
    std::array<Tensor, kNumLayers> d_bias;
    std::array<Tensor, kNumLayers> d_temb;  // dense [T x C] tables
    std::array<double, kNumLayers> d_act_scale_sum{};
    std::array<std::size_t, kNumLayers> act_numel{};

    void accumulate(const SampleGrads& other);
  };

  ToyDenoiser() = default;
  ToyDenoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const noexcept { return config_; }
  bool quantized() const noexcept { return quantized_; }
  const StudentQuantConfig& quant_config() const noexcept { return quant_; }

  /// Attaches LoRA adapters and scale tables (initialized to 1) and enables
  /// fake quantization. Frozen weights are left as they are.
  void enable_quantization(const StudentQuantConfig& q);
  /// Drops adapters and scales, returning to full precision.
  void disable_quantization();

  Prepared prepare(std::size_t t) const;
  /// Forward for one sample x [1 x 1 x S x S].
  Tensor forward(const Prepared& prepared, const Tensor& x, Tape* tape = nullptr, const Hook* hook = nullptr) const;
  SampleGrads backward(const Prepared& prepared, const Tape& tape, const Tensor& dout) const;

  /// Batched prediction at a single timestep; samples run in parallel.
  Tensor predict(const Tensor& batch, std::size_t t, const Hook* hook = nullptr) const;

  /// Gradients for the full-precision parameters (weight, bias, temb).
  GradMap teacher_grads(const SampleGrads& g) const;
  /// Gradients for LoRA factors and the scale entries serving timestep t.
  GradMap student_grads(const Prepared& prepared, const SampleGrads& g) const;

  std::vector<ParamSlot> teacher_parameters(double lr, double weight_decay = 0.0);
  std::vector<ParamSlot> student_parameters(double lr_act_scale, double lr_w_scale, double lr_lora,
                                            double lora_weight_decay = 0.0);

  /// Every stored tensor by name, for checkpoints (scale tables as 1-D tensors).
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  void load_named_tensor(const std::string& name, const Tensor& value);

  std::array<Slot, kNumLayers>& slots() noexcept { return slots_; }
  const std::array<Slot, kNumLayers>& slots() const noexcept { return slots_; }
  QConvLayer& conv(std::string_view name);
  QLinearLayer& linear(std::string_view name);
  const QConvLayer& conv(std::string_view name) const;
  const QLinearLayer& linear(std::string_view name) const;
  ScaleTable& act_scales(std::size_t layer);
  ScaleTable& w_scales(std::size_t layer);
  const ScaleTable& act_scales(std::size_t layer) const;
  const ScaleTable& w_scales(std::size_t layer) const;

  /// Rounds every parameter through binary32 (checkpoint precision).
  void round_parameters_to_f32();

 private:
  DenoiserConfig config_;
  bool quantized_ = false;
  StudentQuantConfig quant_;
  std::array<Slot, kNumLayers> slots_;
};

}  // namespace hqdm
