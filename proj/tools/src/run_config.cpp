#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hqdm/error.hpp"
#include "hqdm/rng.hpp"
#include "json.hpp"

namespace hqdm::cli {

using nlohmann::json;

std::uint64_t RunConfig::data_seed() const { return dataset_seed ? *dataset_seed : derive_seed(seed, "data"); }

NoiseSchedule RunConfig::schedule() const { return make_schedule(timesteps, beta_start, beta_end); }

TeacherTrainConfig RunConfig::teacher() const {
  return TeacherTrainConfig{teacher_epochs, teacher_batch, teacher_lr, derive_seed(seed, "teacher")};
}

DistillConfig RunConfig::distill_config() const {
  DistillConfig c = distill;
  c.seed = derive_seed(seed, "distill");
  return c;
}

namespace {

using Setter = std::function<void(RunConfig&, const json&)>;

template <class T>
Setter field(T RunConfig::*member) {
  return [member](RunConfig& c, const json& v) { c.*member = v.get<T>(); };
}

template <class T>
Setter dfield(T DistillConfig::*member) {
  return [member](RunConfig& c, const json& v) { c.distill.*member = v.get<T>(); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", field(&RunConfig::seed)},
      {"dataset_seed", [](RunConfig& c, const json& v) { c.dataset_seed = v.get<std::uint64_t>(); }},
      {"dataset_size", field(&RunConfig::dataset_size)},
      {"timesteps", field(&RunConfig::timesteps)},
      {"beta_start", field(&RunConfig::beta_start)},
      {"beta_end", field(&RunConfig::beta_end)},
      {"teacher_epochs", field(&RunConfig::teacher_epochs)},
      {"teacher_batch", field(&RunConfig::teacher_batch)},
      {"teacher_lr", field(&RunConfig::teacher_lr)},
      {"out_dir", [](RunConfig& c, const json& v) { c.out_dir = v.get<std::string>(); }},
      {"w_bits", dfield(&DistillConfig::w_bits)},
      {"a_bits", dfield(&DistillConfig::a_bits)},
      {"scheme", [](RunConfig& c, const json& v) { c.distill.scheme = parse_scheme(v.get<std::string>()); }},
      {"hadamard_k_preferred", dfield(&DistillConfig::hadamard_k_preferred)},
      {"lora_rank", dfield(&DistillConfig::lora_rank)},
      {"lora_scaling", dfield(&DistillConfig::lora_scaling)},
      {"lr_act_scale", dfield(&DistillConfig::lr_act_scale)},
      {"lr_w_scale", dfield(&DistillConfig::lr_w_scale)},
      {"lr_lora", dfield(&DistillConfig::lr_lora)},
      {"lora_weight_decay", dfield(&DistillConfig::lora_weight_decay)},
      {"epochs", dfield(&DistillConfig::epochs)},
      {"batch", dfield(&DistillConfig::batch)},
      {"batches_per_timestep", dfield(&DistillConfig::batches_per_timestep)},
      {"n_steps", dfield(&DistillConfig::n_steps)},
      {"n_calib", dfield(&DistillConfig::n_calib)},
      {"pool_size", dfield(&DistillConfig::pool_size)},
      {"eval_samples", dfield(&DistillConfig::eval_samples)},
      {"weight_scales_per_timestep", dfield(&DistillConfig::weight_scales_per_timestep)},
  };
  return table;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ValidationError("unknown config key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const json::exception&) {
      throw ValidationError("config key '" + key + "' has the wrong type");
    }
  }
  return c;
}

std::string config_help() {
  const RunConfig d;
  const DistillConfig& x = d.distill;
  std::ostringstream os;
  os << "Config keys (JSON object, defaults in brackets):\n"
     << "  seed [0]  dataset_seed [derived]  dataset_size [" << d.dataset_size << "]\n"
     << "  timesteps [" << d.timesteps << "]  beta_start [" << d.beta_start << "]  beta_end [" << d.beta_end << "]\n"
     << "  teacher_epochs [" << d.teacher_epochs << "]  teacher_batch [" << d.teacher_batch << "]  teacher_lr ["
     << d.teacher_lr << "]\n"
     << "  out_dir [" << d.out_dir.string() << "]\n"
     << "  w_bits [" << x.w_bits << "]  a_bits [" << x.a_bits << "]  scheme [" << to_string(x.scheme)
     << "]  hadamard_k_preferred [" << x.hadamard_k_preferred << "]\n"
     << "  lora_rank [" << x.lora_rank << "]  lora_scaling [" << x.lora_scaling << "]  lora_weight_decay ["
     << x.lora_weight_decay << "]\n"
     << "  lr_act_scale [" << x.lr_act_scale << "]  lr_w_scale [" << x.lr_w_scale << "]  lr_lora [" << x.lr_lora
     << "]\n"
     << "  epochs [" << x.epochs << "]  batch [" << x.batch << "]  batches_per_timestep [" << x.batches_per_timestep
     << "]\n"
     << "  n_steps [" << x.n_steps << "]  n_calib [" << x.n_calib << "]  pool_size [" << x.pool_size
     << "]  eval_samples [" << x.eval_samples << "]\n"
     << "  weight_scales_per_timestep [false]\n";
  return os.str();
}

}  // namespace hqdm::cli
