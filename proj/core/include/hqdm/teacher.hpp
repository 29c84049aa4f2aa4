#pragma once

#include <cstdint>
#include <vector>

#include "hqdm/denoiser.hpp"
#include "hqdm/diffusion.hpp"

namespace hqdm {

struct TeacherTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

struct TeacherTrainResult {
  ToyDenoiser model;
  std::vector<double> epoch_losses;
};

/// Minimizes E||eps - eps_theta(x_t, t)||^2 with AdamW over shuffled minibatches.
/// The returned weights are rounded to binary32 (checkpoint precision).
TeacherTrainResult train_teacher(const SyntheticDataset& data, const NoiseSchedule& schedule,
                                 const DenoiserConfig& model_config, const TeacherTrainConfig& config);

/// Mean epsilon-prediction loss over `n` seeded (x0, t, eps) draws.
double evaluate_eps_loss(const ToyDenoiser& model, const SyntheticDataset& data, const NoiseSchedule& schedule,
                         std::size_t n, std::uint64_t seed);

/// Deterministic DDIM (eta = 0) from seeded Gaussian noise over a uniform
/// sub-schedule. Predicted x0 is clipped to [-1, 1] and eps re-derived from the
/// clipped value. A quantized model uses act_scales[t] at each visited
/// timestep. `trajectory`, when given, receives the input x_t of every step.
Tensor ddim_sample(const ToyDenoiser& model, const NoiseSchedule& schedule, std::size_t n_steps,
                   std::size_t n_samples, std::uint64_t seed, const ToyDenoiser::Hook* hook = nullptr,
                   std::vector<Tensor>* trajectory = nullptr);

}  // namespace hqdm
