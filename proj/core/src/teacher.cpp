#include "hqdm/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hqdm/parallel.hpp"

namespace hqdm {

TeacherTrainResult train_teacher(const SyntheticDataset& data, const NoiseSchedule& schedule,
                                 const DenoiserConfig& model_config, const TeacherTrainConfig& config) {
  if (model_config.timesteps != schedule.T) throw ValidationError("teacher timesteps must match the schedule");
  if (config.batch == 0 || config.epochs == 0) throw ValidationError("teacher training needs epochs and batch >= 1");
  TeacherTrainResult result{ToyDenoiser(model_config, derive_seed(config.seed, "init")), {}};
  ToyDenoiser& model = result.model;
  Rng rng(derive_seed(config.seed, "teacher"));
  AdamW opt;
  auto params = model.teacher_parameters(config.lr);

  std::vector<std::size_t> order(data.count());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t n = std::min(config.batch, order.size() - start);
      std::vector<std::size_t> ts(n);
      std::vector<Tensor> eps(n);
      for (std::size_t j = 0; j < n; ++j) {
        ts[j] = rng.index(schedule.T);
        eps[j] = rng.normal_tensor(data.image(order[start + j]).shape());
      }
      // Weights do not depend on t in full precision.
      const ToyDenoiser::Prepared prepared = model.prepare(0);
      std::vector<ToyDenoiser::SampleGrads> grads(n);
      std::vector<double> losses(n);
      const double per = static_cast<double>(data.image(0).size());
      parallel_for(n, [&](std::size_t j) {
        ToyDenoiser::Prepared p = prepared;
        p.t = ts[j];
        ToyDenoiser::Tape tape;
        const Tensor xt = forward_noise(data.image(order[start + j]), ts[j], eps[j], schedule);
        const Tensor pred = model.forward(p, xt, &tape);
        Tensor diff = sub(pred, eps[j]);
        losses[j] = sum(mul(diff, diff)) / per;
        grads[j] = model.backward(p, tape, scale(diff, 2.0 / (per * static_cast<double>(n))));
      });
      ToyDenoiser::SampleGrads total = std::move(grads[0]);
      for (std::size_t j = 1; j < n; ++j) total.accumulate(grads[j]);
      const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
      if (!std::isfinite(loss)) throw NumericError("teacher training diverged at epoch " + std::to_string(epoch));
      opt.step(params, model.teacher_grads(total));
      loss_sum += loss;
      ++batches;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  model.round_parameters_to_f32();
  return result;
}

double evaluate_eps_loss(const ToyDenoiser& model, const SyntheticDataset& data, const NoiseSchedule& schedule,
                         std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> idx(n), ts(n);
  std::vector<Tensor> eps(n);
  for (std::size_t j = 0; j < n; ++j) {
    idx[j] = rng.index(data.count());
    ts[j] = rng.index(schedule.T);
    eps[j] = rng.normal_tensor(data.image(idx[j]).shape());
  }
  std::vector<double> losses(n);
  parallel_for(n, [&](std::size_t j) {
    const Tensor xt = forward_noise(data.image(idx[j]), ts[j], eps[j], schedule);
    losses[j] = mse(model.forward(model.prepare(ts[j]), xt), eps[j]);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
}

Tensor ddim_sample(const ToyDenoiser& model, const NoiseSchedule& schedule, std::size_t n_steps,
                   std::size_t n_samples, std::uint64_t seed, const ToyDenoiser::Hook* hook,
                   std::vector<Tensor>* trajectory) {
  if (n_samples == 0) throw ValidationError("ddim_sample needs at least one sample");
  if (model.config().timesteps != schedule.T) throw ValidationError("model timesteps must match the schedule");
  const std::vector<std::size_t> ts = ddim_timesteps(schedule.T, n_steps);
  const std::size_t S = model.config().image_size;
  Rng rng(seed);
  Tensor x = rng.normal_tensor({n_samples, 1, S, S});
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (trajectory) trajectory->push_back(x);
    const std::size_t t = ts[i];
    const Tensor eps = model.predict(x, t, hook);
    const double ab = schedule.alphas_bar[t];
    const double ab_prev = i + 1 < ts.size() ? schedule.alphas_bar[ts[i + 1]] : 1.0;
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
    for (std::size_t k = 0; k < x.size(); ++k) {
      // Re-derive eps from the clipped x0 so the step stays on a consistent (x0, eps) pair.
      const double x0 = std::clamp((x[k] - sb * eps[k]) / sa, -1.0, 1.0);
      x[k] = pa * x0 + pb * (x[k] - sa * x0) / sb;
    }
  }
  check_finite(x, "ddim_sample");
  return x;
}

}  // namespace hqdm
