#include "hqdm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "hqdm/checkpoint.hpp"
#include "hqdm/parallel.hpp"
#include "hqdm/teacher.hpp"
#include "hqdm/tensor_io.hpp"
#include "json.hpp"

namespace hqdm {

namespace fs = std::filesystem;
using nlohmann::json;

void DistillConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("distill config: " + m); };
  if (w_bits < 2 || w_bits > 8 || a_bits < 2 || a_bits > 8) fail("bit-widths must lie in [2, 8]");
  if (scheme == Scheme::double_hadamard) fail("double_hadamard is comparison-only and cannot be distilled");
  if (hadamard_k_preferred < 0 || hadamard_k_preferred > kMaxHadamardOrder) fail("hadamard_k_preferred out of range");
  if (!(lr_act_scale > 0.0) || !(lr_w_scale > 0.0) || !(lr_lora > 0.0)) fail("learning rates must be positive");
  if (lora_weight_decay < 0.0) fail("lora_weight_decay must be non-negative");
  if (lora_rank == 0) fail("lora_rank must be >= 1");
  if (batch == 0 || batches_per_timestep == 0) fail("batch sizes must be >= 1");
  if (n_steps == 0 || n_calib == 0 || pool_size == 0 || eval_samples == 0) fail("sample counts must be >= 1");
}

std::string DistillConfig::bits_label() const { return "W" + std::to_string(w_bits) + "A" + std::to_string(a_bits); }

StudentQuantConfig DistillConfig::student_quant() const {
  StudentQuantConfig q;
  q.scheme = scheme;
  q.w_bits = w_bits;
  q.a_bits = a_bits;
  q.k_preferred = hadamard_k_preferred;
  q.lora_rank = lora_rank;
  q.lora_scaling = lora_scaling;
  q.weight_scales_per_timestep = weight_scales_per_timestep;
  q.seed = derive_seed(seed, "lora");
  return q;
}

ToyDenoiser calibrate_ptq(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config) {
  config.validate();
  if (teacher.quantized()) throw ValidationError("calibrate_ptq expects a full-precision teacher");
  ToyDenoiser student = teacher;
  student.enable_quantization(config.student_quant());
  const std::size_t T = schedule.T;
  std::vector<std::size_t> ts = ddim_timesteps(T, config.n_steps);
  std::array<std::vector<double>, kNumLayers> maxima;
  for (auto& m : maxima) m.assign(T, 0.0);

  const ToyDenoiser::Hook hook = [&](std::string_view name, std::size_t t, const Tensor& in) {
    const std::size_t i = layer_index(name);
    const auto& layer = student.slots()[i].layer;
    HadamardPlan plan;
    if (const auto* c = std::get_if<QConvLayer>(&layer)) {
      plan = c->plan_for_width(in.dim(3));
    } else {
      plan = activation_plan(std::get<QLinearLayer>(layer));
    }
    maxima[i][t] = std::max(maxima[i][t], max_abs(block_transform(in, plan)));
  };
  ddim_sample(teacher, schedule, config.n_steps, config.n_calib, derive_seed(config.seed, "calib"), &hook);

  std::sort(ts.begin(), ts.end());
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    ScaleTable& acts = student.act_scales(i);
    const QuantParams ap = std::visit([](const auto& l) { return l.a_params; }, student.slots()[i].layer);
    for (std::size_t t = 0; t < T; ++t) {
      // Nearest calibrated timestep (ties go to the smaller one).
      auto it = std::lower_bound(ts.begin(), ts.end(), t);
      std::size_t src;
      if (it == ts.end()) {
        src = ts.back();
      } else if (it == ts.begin() || *it == t) {
        src = *it;
      } else {
        src = (t - *(it - 1) <= *it - t) ? *(it - 1) : *it;
      }
      acts.set(t, std::max(maxima[i][src] / static_cast<double>(ap.q_max), kMinScale));
    }
    std::visit(
        [](auto& l) {
          const double s = init_scale(weight_effective(l), l.w_params);
          for (double& e : l.w_scales.entries()) e = s;
        },
        student.slots()[i].layer);
  }
  student.round_parameters_to_f32();
  return student;
}

namespace {

struct StepOutcome {
  double loss = 0.0;
  ToyDenoiser::SampleGrads grads;
};

StepOutcome loss_and_grads(const ToyDenoiser& student, const ToyDenoiser::Prepared& prepared,
                           const DistillBatch& batch, bool need_grads) {
  const std::size_t n = batch.x_t.dim(0);
  if (batch.teacher_eps.shape() != batch.x_t.shape()) throw ValidationError("distill batch: target shape mismatch");
  const double per = static_cast<double>(batch.x_t.size() / n);
  std::vector<double> losses(n);
  std::vector<ToyDenoiser::SampleGrads> grads(need_grads ? n : 0);
  parallel_for(n, [&](std::size_t j) {
    ToyDenoiser::Tape tape;
    const Tensor pred = student.forward(prepared, unstack(batch.x_t, j), need_grads ? &tape : nullptr);
    const Tensor diff = sub(pred, unstack(batch.teacher_eps, j));
    losses[j] = sum(mul(diff, diff));
    if (need_grads) grads[j] = student.backward(prepared, tape, scale(diff, 2.0 / (per * static_cast<double>(n))));
  });
  StepOutcome out;
  out.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / (per * static_cast<double>(n));
  if (need_grads) {
    out.grads = std::move(grads[0]);
    for (std::size_t j = 1; j < n; ++j) out.grads.accumulate(grads[j]);
  }
  return out;
}

[[noreturn]] void diagnose_non_finite(const ToyDenoiser& student, const ToyDenoiser::Prepared& prepared,
                                      const DistillBatch& batch) {
  std::string culprit = "conv_out";
  bool found = false;
  std::string_view previous = "input";
  const ToyDenoiser::Hook hook = [&](std::string_view name, std::size_t, const Tensor& in) {
    if (found) return;
    for (double v : in.data()) {
      if (!std::isfinite(v)) {
        culprit = std::string(previous);
        found = true;
        return;
      }
    }
    previous = name;
  };
  for (std::size_t j = 0; j < batch.x_t.dim(0) && !found; ++j) student.forward(prepared, unstack(batch.x_t, j), nullptr, &hook);
  throw NumericError("distillation loss is not finite; first non-finite output from layer '" + culprit + "' at t=" +
                     std::to_string(prepared.t));
}

}  // namespace

double distill_loss(const ToyDenoiser& student, std::size_t t, const DistillBatch& batch) {
  return loss_and_grads(student, student.prepare(t), batch, false).loss;
}

double distill_step(const ToyDenoiser& teacher, ToyDenoiser& student, std::size_t t, const DistillBatch& batch,
                    AdamW& optimizer, const DistillConfig& config) {
  (void)teacher;  // targets arrive precomputed in the batch
  const ToyDenoiser::Prepared prepared = student.prepare(t);
  StepOutcome out = loss_and_grads(student, prepared, batch, student.quantized());
  if (!std::isfinite(out.loss)) diagnose_non_finite(student, prepared, batch);
  if (!student.quantized()) return out.loss;
  auto params = student.student_parameters(config.lr_act_scale, config.lr_w_scale, config.lr_lora,
                                           config.lora_weight_decay);
  optimizer.step(params, student.student_grads(prepared, out.grads));
  return out.loss;
}

Tensor teacher_pool(const ToyDenoiser& teacher, const NoiseSchedule& schedule, std::size_t n, std::size_t n_steps,
                    std::uint64_t seed) {
  return ddim_sample(teacher, schedule, n_steps, n, seed);
}

namespace {

struct EvalSet {
  std::vector<std::size_t> timesteps;
  std::vector<DistillBatch> batches;
};

EvalSet make_eval_set(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config) {
  EvalSet set;
  set.timesteps = ddim_timesteps(schedule.T, config.n_steps);
  const Tensor x0 =
      teacher_pool(teacher, schedule, config.eval_samples, config.n_steps, derive_seed(config.seed, "eval_pool"));
  Rng rng(derive_seed(config.seed, "eval_eps"));
  for (std::size_t t : set.timesteps) {
    const Tensor xt = forward_noise(x0, t, rng.normal_tensor(x0.shape()), schedule);
    set.batches.push_back(DistillBatch{xt, teacher.predict(xt, t)});
  }
  return set;
}

}  // namespace

std::vector<MetricRow> distill_evaluate(const ToyDenoiser& teacher, const ToyDenoiser& student,
                                        const NoiseSchedule& schedule, const DistillConfig& config) {
  const EvalSet set = make_eval_set(teacher, schedule, config);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < set.timesteps.size(); ++i) {
    rows.push_back(MetricRow{0, set.timesteps[i], distill_loss(student, set.timesteps[i], set.batches[i])});
  }
  return rows;
}

double mean_loss(const std::vector<MetricRow>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.loss;
  return s / static_cast<double>(rows.size());
}

DistillState distill_init(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config) {
  config.validate();
  DistillState state;
  state.config = config;
  state.student = calibrate_ptq(teacher, schedule, config);
  state.rng_state = Rng(derive_seed(config.seed, "distill")).state();
  state.metrics = distill_evaluate(teacher, state.student, schedule, config);
  state.ptq_eval_loss = mean_loss(state.metrics);
  return state;
}

void distill_epochs(const ToyDenoiser& teacher, const NoiseSchedule& schedule, DistillState& state,
                    std::size_t until_epoch) {
  const DistillConfig& config = state.config;
  until_epoch = std::min(until_epoch, config.epochs);
  if (state.epoch >= until_epoch) return;
  const Tensor pool =
      teacher_pool(teacher, schedule, config.pool_size, config.n_steps, derive_seed(config.seed, "pool"));
  const std::vector<std::size_t> ts = ddim_timesteps(schedule.T, config.n_steps);
  Rng rng;
  rng.set_state(state.rng_state);
  while (state.epoch < until_epoch) {
    for (std::size_t t : ts) {
      double total = 0.0;
      for (std::size_t b = 0; b < config.batches_per_timestep; ++b) {
        std::vector<Tensor> items;
        for (std::size_t j = 0; j < config.batch; ++j) items.push_back(unstack(pool, rng.index(config.pool_size)));
        const Tensor x0 = stack(items);
        const Tensor xt = forward_noise(x0, t, rng.normal_tensor(x0.shape()), schedule);
        const DistillBatch batch{xt, teacher.predict(xt, t)};
        total += distill_step(teacher, state.student, t, batch, state.optimizer, config);
      }
      state.metrics.push_back(MetricRow{state.epoch + 1, t, total / static_cast<double>(config.batches_per_timestep)});
    }
    ++state.epoch;
    state.rng_state = rng.state();
  }
}

DistillResult distill_run(const ToyDenoiser& teacher, const NoiseSchedule& schedule, const DistillConfig& config) {
  DistillState state = distill_init(teacher, schedule, config);
  distill_epochs(teacher, schedule, state, config.epochs);
  DistillResult r;
  r.final_eval = distill_evaluate(teacher, state.student, schedule, config);
  r.final_eval_loss = mean_loss(r.final_eval);
  r.ptq_eval_loss = state.ptq_eval_loss;
  r.metrics = std::move(state.metrics);
  r.student = std::move(state.student);
  return r;
}

namespace {

json config_to_json(const DistillConfig& c) {
  return json{{"w_bits", c.w_bits},
              {"a_bits", c.a_bits},
              {"scheme", std::string(to_string(c.scheme))},
              {"hadamard_k_preferred", c.hadamard_k_preferred},
              {"lora_rank", c.lora_rank},
              {"lora_scaling", c.lora_scaling},
              {"lr_act_scale", c.lr_act_scale},
              {"lr_w_scale", c.lr_w_scale},
              {"lr_lora", c.lr_lora},
              {"lora_weight_decay", c.lora_weight_decay},
              {"epochs", c.epochs},
              {"batch", c.batch},
              {"batches_per_timestep", c.batches_per_timestep},
              {"n_steps", c.n_steps},
              {"n_calib", c.n_calib},
              {"pool_size", c.pool_size},
              {"eval_samples", c.eval_samples},
              {"seed", c.seed},
              {"weight_scales_per_timestep", c.weight_scales_per_timestep}};
}

DistillConfig config_from_json(const json& j) {
  DistillConfig c;
  c.w_bits = j.at("w_bits").get<int>();
  c.a_bits = j.at("a_bits").get<int>();
  c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  c.hadamard_k_preferred = j.at("hadamard_k_preferred").get<int>();
  c.lora_rank = j.at("lora_rank").get<std::size_t>();
  c.lora_scaling = j.at("lora_scaling").get<double>();
  c.lr_act_scale = j.at("lr_act_scale").get<double>();
  c.lr_w_scale = j.at("lr_w_scale").get<double>();
  c.lr_lora = j.at("lr_lora").get<double>();
  c.lora_weight_decay = j.at("lora_weight_decay").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.batches_per_timestep = j.at("batches_per_timestep").get<std::size_t>();
  c.n_steps = j.at("n_steps").get<std::size_t>();
  c.n_calib = j.at("n_calib").get<std::size_t>();
  c.pool_size = j.at("pool_size").get<std::size_t>();
  c.eval_samples = j.at("eval_samples").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.weight_scales_per_timestep = j.at("weight_scales_per_timestep").get<bool>();
  c.validate();
  return c;
}

}  // namespace

void save_run_state(const fs::path& dir, const DistillState& state, const NoiseSchedule& schedule) {
  save_checkpoint(dir / "student", state.student, schedule);
  fs::create_directories(dir / "optimizer");
  json moments = json::object();
  for (const auto& [name, mo] : state.optimizer.state()) {
    write_tensor(dir / "optimizer" / (name + ".m.hqt"), Tensor({mo.m.size()}, mo.m));
    write_tensor(dir / "optimizer" / (name + ".v.hqt"), Tensor({mo.v.size()}, mo.v));
    moments[name] = mo.steps;
  }
  json rows = json::array();
  for (const auto& r : state.metrics) rows.push_back({r.epoch, r.timestep, r.loss});
  const json j{{"format", "hqdm-runstate"},
               {"version", 1},
               {"config", config_to_json(state.config)},
               {"epoch", state.epoch},
               {"rng_state", state.rng_state},
               {"ptq_eval_loss", state.ptq_eval_loss},
               {"metrics", rows},
               {"optimizer_steps", moments}};
  std::ofstream os(dir / "state.json");
  if (!os) throw IoError("cannot write run state in " + dir.string());
  os << j.dump(2) << '\n';
}

DistillState load_run_state(const fs::path& dir) {
  std::ifstream is(dir / "state.json");
  if (!is) throw IoError("no state.json in " + dir.string());
  try {
    const json j = json::parse(is);
    if (j.at("format") != "hqdm-runstate") throw IoError("not an hqdm run state: " + dir.string());
    DistillState state;
    state.config = config_from_json(j.at("config"));
    state.student = load_checkpoint(dir / "student").model;
    state.epoch = j.at("epoch").get<std::size_t>();
    state.rng_state = j.at("rng_state").get<std::string>();
    state.ptq_eval_loss = j.at("ptq_eval_loss").get<double>();
    for (const json& r : j.at("metrics")) {
      state.metrics.push_back(MetricRow{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<double>()});
    }
    for (const auto& [name, steps] : j.at("optimizer_steps").items()) {
      AdamW::Moments mo;
      const Tensor m = read_tensor(dir / "optimizer" / (name + ".m.hqt"));
      const Tensor v = read_tensor(dir / "optimizer" / (name + ".v.hqt"));
      mo.m = m.values();
      mo.v = v.values();
      mo.steps = steps.get<std::vector<std::int64_t>>();
      if (mo.m.size() != mo.steps.size() || mo.v.size() != mo.steps.size()) {
        throw IoError("optimizer state for '" + name + "' is inconsistent");
      }
      state.optimizer.state()[name] = std::move(mo);
    }
    return state;
  } catch (const json::exception& e) {
    throw IoError("malformed run state in " + dir.string() + ": " + e.what());
  }
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows, const DistillConfig& config,
                       bool header) {
  if (header) os << "epoch,timestep,loss,scheme,bits\n";
  const std::string scheme(to_string(config.scheme));
  const std::string bits = config.bits_label();
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    os << r.epoch << ',' << r.timestep << ',' << buf << ',' << scheme << ',' << bits << '\n';
  }
}

std::vector<SweepRow> sweep_hadamard_order(const ToyDenoiser& teacher, const NoiseSchedule& schedule,
                                           const DistillConfig& config, const std::vector<int>& orders) {
  std::vector<SweepRow> rows;
  for (int k : orders) {
    DistillConfig c = config;
    c.hadamard_k_preferred = k;
    const DistillResult r = distill_run(teacher, schedule, c);
    rows.push_back(SweepRow{k, r.ptq_eval_loss, r.final_eval_loss});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, const DistillConfig& config) {
  os << "k,scheme,bits,ptq_loss,final_loss\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", r.ptq_eval_loss, r.final_eval_loss);
    os << r.k << ',' << to_string(config.scheme) << ',' << config.bits_label() << ',' << buf << '\n';
  }
}

}  // namespace hqdm
