#pragma once

#include "hqdm/diffusion.hpp"
#include "hqdm/teacher.hpp"

namespace hqdm::testing {

inline constexpr std::uint64_t kDataSeed = 1;
inline constexpr std::uint64_t kTeacherSeed = 7;

const SyntheticDataset& shared_dataset();
const NoiseSchedule& shared_schedule();
/// Teacher trained once per process.
const TeacherTrainResult& shared_teacher();
TeacherTrainConfig shared_teacher_config();

}  // namespace hqdm::testing
