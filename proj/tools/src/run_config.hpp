#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "hqdm/diffusion.hpp"
#include "hqdm/distill.hpp"
#include "hqdm/teacher.hpp"

namespace hqdm::cli {

/// Everything a run needs; loaded from JSON, then overridden by flags.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> dataset_seed;  // derived from seed when unset
  std::size_t dataset_size = 512;
  std::size_t timesteps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  std::size_t teacher_epochs = 30;
  std::size_t teacher_batch = 16;
  double teacher_lr = 2e-3;
  std::filesystem::path out_dir = "runs";
  DistillConfig distill;

  std::uint64_t data_seed() const;
  NoiseSchedule schedule() const;
  TeacherTrainConfig teacher() const;
  /// Distill settings with the seed taken from the root seed.
  DistillConfig distill_config() const;
};

/// Reads a JSON object; unknown keys and wrong types are ValidationErrors.
RunConfig load_run_config(const std::filesystem::path& path);
std::string config_help();

}  // namespace hqdm::cli
