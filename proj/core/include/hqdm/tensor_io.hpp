#pragma once

#include <filesystem>
#include <iosfwd>

#include "hqdm/tensor.hpp"

namespace hqdm {

// TensorFile layout (all little-endian):
//   "HQDM" | version:u8 | rank:u8 | dims:u32 x rank | payload:f32 x numel (row-major)
inline constexpr std::uint8_t kTensorFileVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Rounds every element through IEEE-754 binary32, i.e. what a file round trip preserves.
Tensor round_to_f32(const Tensor& t);

}  // namespace hqdm
