#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hqdm/denoiser.hpp"
#include "hqdm/diffusion.hpp"
#include "hqdm/hadamard.hpp"
#include "hqdm/tensor.hpp"

namespace hqdm {

/// Column statistics of a [rows x channels] matrix.
struct ChannelStats {
  std::vector<double> max_abs;
  std::vector<double> rms;
  std::vector<double> min;
  std::vector<double> max;
  double global_max = 0.0;
  double global_rms = 0.0;
  double ratio = 0.0;     // global_max / global_rms (0 for an all-zero input)
  double kurtosis = 0.0;  // non-excess, over all entries
};

ChannelStats channel_outlier_stats(const Tensor& x);

struct OutlierReport {
  std::string layer;
  std::size_t timestep = 0;
  HadamardPlan plan;
  ChannelStats pre;
  ChannelStats post;
};

/// Stats before and after the block transform of the last axis.
OutlierReport outlier_report(std::string layer, std::size_t timestep, const Tensor& x, const HadamardPlan& plan);

/// Largest relative change of a segment's RMS under the transform.
double block_rms_deviation(const Tensor& x, const HadamardPlan& plan);

/// max|x| / (2^(-k/2) * max over segments of ||seg||_1). Above 1 the
/// transform is guaranteed to lower the maximum.
double dominance_ratio(const Tensor& x, const HadamardPlan& plan);

/// Layer inputs viewed as [rows x channels]: conv inputs fold batch,
/// channel and height into rows so that channels are image columns.
Tensor activation_matrix(const Tensor& layer_input);

using CaptureKey = std::pair<std::string, std::size_t>;
using Captures = std::map<CaptureKey, Tensor>;

/// First, middle and last timestep of an n-step DDIM schedule (in visit order).
std::vector<std::size_t> capture_timesteps(std::size_t T, std::size_t n_steps);

/// Runs the model's DDIM sampler and records every raw layer input at the
/// requested timesteps, concatenated over samples. Conv inputs stay rank 4;
/// pass them through activation_matrix for row statistics.
Captures capture_activations(const ToyDenoiser& model, const NoiseSchedule& schedule, std::size_t n_steps,
                             std::size_t n_samples, std::uint64_t seed, const std::vector<std::size_t>& timesteps);

/// Plan the single-Hadamard student would use for this layer input.
HadamardPlan layer_plan(const ToyDenoiser& model, std::string_view layer, const Tensor& layer_input, int k_preferred);

struct SchemeComparison {
  std::string layer;
  std::size_t timestep = 0;
  int bits = 0;
  double mse_plain = 0.0;
  double mse_single = 0.0;
  std::optional<double> mse_double;  // linear layers only
  double w_max_plain = 0.0;
  double w_max_single = 0.0;
  std::optional<double> w_max_double;
};

/// Output MSE of each scheme against the float matmul X*W with weight and
/// activation scales calibrated by max-abs. X is [T x C_i], W is [C_i x C_o].
SchemeComparison compare_linear_schemes(const Tensor& x, const Tensor& w, int bits, int k_preferred);

/// Same comparison on captured teacher activations for the selected layers.
std::vector<SchemeComparison> compare_schemes(const ToyDenoiser& teacher, const Captures& captures,
                                              const std::vector<std::string>& layers,
                                              const std::vector<std::size_t>& timesteps,
                                              const std::vector<int>& bits_list, int k_preferred);

void emit_report(std::ostream& os, const std::vector<OutlierReport>& reports);
void emit_report(const std::filesystem::path& path, const std::vector<OutlierReport>& reports);
void emit_comparison(std::ostream& os, const std::vector<SchemeComparison>& rows);

}  // namespace hqdm
