#pragma once

#include <cstdint>
#include <vector>

#include "hqdm/rng.hpp"
#include "hqdm/tensor.hpp"

namespace hqdm {

/// Linear-beta noise schedule with cumulative products alpha_bar[t] = prod_{i<=t} (1 - beta[i]).
struct NoiseSchedule {
  std::size_t T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas_bar;
};

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end);

/// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);

/// Descending uniform sub-schedule of n_steps timesteps ending at 0.
std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t n_steps);

/// Seeded 16x16-style grayscale images: two random Gaussian blobs plus a
/// fixed high-contrast vertical stripe, clipped to [-1, 1].
class SyntheticDataset {
 public:
  SyntheticDataset(std::size_t count, std::uint64_t seed, std::size_t size = 16);

  std::size_t count() const noexcept { return images_.size(); }
  std::size_t image_size() const noexcept { return size_; }
  /// One image as [1 x 1 x size x size].
  const Tensor& image(std::size_t i) const { return images_.at(i); }
  /// Stack of the given indices as [n x 1 x size x size].
  Tensor batch(const std::vector<std::size_t>& indices) const;

  /// Column index of the fixed stripe.
  static std::size_t stripe_column(std::size_t size) { return size / 2 - 3; }

 private:
  std::size_t size_;
  std::vector<Tensor> images_;
};

/// Stacks [1 x C x H x W] items into [n x C x H x W].
Tensor stack(const std::vector<Tensor>& items);
/// Item i of an [n x ...] tensor as [1 x ...].
Tensor unstack(const Tensor& batch, std::size_t i);

}  // namespace hqdm
