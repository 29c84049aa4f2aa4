#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hqdm/denoiser.hpp"
#include "hqdm/diffusion.hpp"
#include "hqdm/optim.hpp"

namespace hqdm {

struct DistillConfig {
  int w_bits = 4;
  int a_bits = 4;
  Scheme scheme = Scheme::single_hadamard;
  int hadamard_k_preferred = kDefaultHadamardOrder;
  std::size_t lora_rank = 2;
  double lora_scaling = 1.0;
  double lr_act_scale = 1e-3;
  double lr_w_scale = 1e-4;
  double lr_lora = 1e-3;
  double lora_weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  std::size_t batches_per_timestep = 2;
  std::size_t n_steps = 20;
  std::size_t n_calib = 16;
  std::size_t pool_size = 64;
  std::size_t eval_samples = 16;
  std::uint64_t seed = 0;
  bool weight_scales_per_timestep = false;

  /// Throws ValidationError on out-of-range settings.
  void validate() const;
  /// "W4A4"-style label.
  std::string bits_label() const;
  StudentQuantConfig student_quant() const;
};

/// One metrics CSV row. Epoch 0 holds the evaluation loss of the PTQ
/// initialization; epochs >= 1 hold the mean training loss of that epoch.
struct MetricRow {
  std::size_t epoch = 0;
  std::size_t timestep = 0;
  double loss = 0.0;
};

/// Everything needed to continue a distillation run bitwise.
struct DistillState {
  DistillConfig config;
  ToyDenoiser student;
  AdamW optimizer{0.9, 0.999, 1e-8, true};
  std::size_t epoch = 0;
  std::string rng_state;
  double ptq_eval_loss = 0.0;
  std::vector<MetricRow> metrics;
};

struct DistillResult {
  ToyDenoiser student;
  std::vector<MetricRow> metrics;
  double ptq_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  /// Per-timestep evaluation losses of the final student (DDIM order).
  std::vector<MetricRow> final_eval;
};

/// Data-free post-training quantization: copies the teacher, attaches the
/// student quantizers, and sets act_scales[t] from max-abs statistics of the
/// teacher's own DDIM trajectories (n_calib noise seeds) and weight scales
/// from W'. Timesteps off the sub-schedule inherit the nearest calibrated one.
ToyDenoiser calibrate_ptq(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config);

/// Noisy inputs and matching teacher targets for one step.
struct DistillBatch {
  Tensor x_t;
  Tensor teacher_eps;
};

/// One update at timestep t: L = mean (eps_fp - eps_quant)^2, backpropagated
/// through the student; updates act_scales[t], the weight scales serving t and
/// the LoRA factors. A full-precision student only reports the loss.
double distill_step(const ToyDenoiser& teacher, ToyDenoiser& student, std::size_t t, const DistillBatch& batch,
                    AdamW& optimizer, const DistillConfig& config);

/// Loss-only variant (no update).
double distill_loss(const ToyDenoiser& student, std::size_t t, const DistillBatch& batch);

/// Teacher-generated x0 pool (data-free), [n x 1 x S x S].
Tensor teacher_pool(const ToyDenoiser& teacher, const NoiseSchedule& schedule, std::size_t n, std::size_t n_steps,
                    std::uint64_t seed);

/// Calibrates the student and evaluates the PTQ loss (epoch 0).
DistillState distill_init(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config);
/// Runs epochs until state.epoch == until_epoch (capped at config.epochs).
void distill_epochs(const ToyDenoiser& teacher, const NoiseSchedule& schedule, DistillState& state,
                    std::size_t until_epoch);
/// Mean evaluation loss over the fixed evaluation set at every DDIM timestep.
std::vector<MetricRow> distill_evaluate(const ToyDenoiser& teacher, const ToyDenoiser& student,
                                        const NoiseSchedule& schedule, const DistillConfig& config);
double mean_loss(const std::vector<MetricRow>& rows);

DistillResult distill_run(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config);

/// RunState directory: `state.json` (config, epoch, RNG state, metrics,
/// optimizer step counts) plus TensorFiles for student parameters and moments.
void save_run_state(const std::filesystem::path& dir, const DistillState& state, const NoiseSchedule& schedule);
DistillState load_run_state(const std::filesystem::path& dir);

/// CSV with columns epoch,timestep,loss,scheme,bits.
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows, const DistillConfig& config,
                       bool header = true);

/// Hadamard-order ablation: one full distillation per k.
struct SweepRow {
  int k = 0;
  double ptq_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};
std::vector<SweepRow> sweep_hadamard_order(const ToyDenoiser& teacher, const NoiseSchedule& schedule,
                                           const DistillConfig& config, const std::vector<int>& orders);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, const DistillConfig& config);

}  // namespace hqdm
