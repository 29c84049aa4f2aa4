#pragma once

#include <filesystem>

#include "hqdm/denoiser.hpp"
#include "hqdm/diffusion.hpp"

namespace hqdm {

/// Model checkpoint directory: `manifest.json` (architecture, schedule
/// constants, quantization settings, parameter names and shapes) plus one
/// TensorFile per parameter.
struct Checkpoint {
  ToyDenoiser model;
  NoiseSchedule schedule;
};

void save_checkpoint(const std::filesystem::path& dir, const ToyDenoiser& model, const NoiseSchedule& schedule);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace hqdm
