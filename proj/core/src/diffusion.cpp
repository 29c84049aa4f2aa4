#include "hqdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hqdm {

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 2) throw ValidationError("noise schedule needs T >= 2");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ValidationError("noise schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s{T, beta_start, beta_end, std::vector<double>(T), std::vector<double>(T)};
  double prod = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    s.betas[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
    prod *= 1.0 - s.betas[t];
    s.alphas_bar[t] = prod;
  }
  return s;
}

Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (t >= schedule.T) throw ValidationError("timestep " + std::to_string(t) + " outside schedule");
  if (x0.shape() != eps.shape()) throw ValidationError("forward_noise: x0 and eps shapes differ");
  const double a = std::sqrt(schedule.alphas_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alphas_bar[t]);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t n_steps) {
  if (n_steps == 0 || n_steps > T) {
    throw ValidationError("DDIM step count " + std::to_string(n_steps) + " outside [1, " + std::to_string(T) + "]");
  }
  std::vector<std::size_t> ts(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) ts[i] = (i * T) / n_steps;
  std::reverse(ts.begin(), ts.end());
  return ts;
}

SyntheticDataset::SyntheticDataset(std::size_t count, std::uint64_t seed, std::size_t size) : size_(size) {
  if (count == 0 || size < 8) throw ValidationError("SyntheticDataset needs count >= 1 and size >= 8");
  Rng rng(seed);
  const std::size_t stripe = stripe_column(size);
  const double n = static_cast<double>(size);
  images_.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Tensor img({1, 1, size, size}, -0.2);
    for (int blob = 0; blob < 2; ++blob) {
      const double cy = rng.uniform(0.2 * n, 0.8 * n);
      const double cx = rng.uniform(0.2 * n, 0.8 * n);
      const double sigma = rng.uniform(0.08 * n, 0.2 * n);
      const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.4, 0.8);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          img[y * size + x] += amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        }
    }
    for (std::size_t y = 0; y < size; ++y) img[y * size + stripe] = 1.0;
    for (double& v : img.data()) v = std::clamp(v, -1.0, 1.0);
    images_.push_back(std::move(img));
  }
}

Tensor SyntheticDataset::batch(const std::vector<std::size_t>& indices) const {
  std::vector<Tensor> items;
  items.reserve(indices.size());
  for (std::size_t i : indices) items.push_back(image(i));
  return stack(items);
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ValidationError("stack: no items");
  Shape s = items.front().shape();
  if (s.empty() || s[0] != 1) throw ValidationError("stack expects [1 x ...] items");
  const std::size_t per = items.front().size();
  s[0] = items.size();
  std::vector<double> data;
  data.reserve(per * items.size());
  for (const Tensor& t : items) {
    if (t.shape() != items.front().shape()) throw ValidationError("stack: ragged items");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  if (batch.rank() == 0 || i >= batch.dim(0)) throw ValidationError("unstack: index out of range");
  Shape s = batch.shape();
  const std::size_t per = batch.size() / s[0];
  s[0] = 1;
  const auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(i * per);
  return Tensor(std::move(s), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

}  // namespace hqdm
