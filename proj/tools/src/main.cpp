#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "hqdm/analysis.hpp"
#include "hqdm/checkpoint.hpp"
#include "hqdm/distill.hpp"
#include "hqdm/error.hpp"
#include "hqdm/parallel.hpp"
#include "hqdm/teacher.hpp"
#include "hqdm/tensor_io.hpp"
#include "json.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace hqdm;
using namespace hqdm::cli;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

// Flags shared by every command that reads a RunConfig.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "root seed");
    app->add_option("--out", out, "output directory");
  }
  RunConfig load() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.seed = *seed;
    if (out) c.out_dir = *out;
    return c;
  }
};

int cmd_train_teacher(const RunConfig& c) {
  const NoiseSchedule schedule = c.schedule();
  const SyntheticDataset data(c.dataset_size, c.data_seed());
  const TeacherTrainResult r = train_teacher(data, schedule, DenoiserConfig{.timesteps = c.timesteps}, c.teacher());
  save_checkpoint(c.out_dir / "teacher", r.model, schedule);
  std::ofstream os = open_out(c.out_dir / "teacher_losses.csv");
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) os << e + 1 << ',' << r.epoch_losses[e] << '\n';
  const double eval = evaluate_eps_loss(r.model, data, schedule, 256, derive_seed(c.seed, "teacher_eval"));
  std::printf("teacher saved to %s; final epoch loss %.6g, eval loss %.6g\n", (c.out_dir / "teacher").c_str(),
              r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back(), eval);
  return 0;
}

struct DistillFlags {
  std::string teacher;
  std::string name;
  std::vector<int> sweep_k;
  bool resume = false;
};

int cmd_distill(const RunConfig& c, const DistillFlags& f) {
  const fs::path teacher_dir = f.teacher.empty() ? c.out_dir / "teacher" : fs::path(f.teacher);
  const Checkpoint ck = load_checkpoint(teacher_dir);
  if (ck.model.quantized()) throw ValidationError("distill needs a full-precision teacher checkpoint");
  DistillConfig cfg = c.distill_config();
  cfg.validate();
  const std::string name =
      f.name.empty() ? std::string(to_string(cfg.scheme)) + "_" + cfg.bits_label() : f.name;
  const fs::path dir = c.out_dir / name;

  if (!f.sweep_k.empty()) {
    const std::vector<SweepRow> rows = sweep_hadamard_order(ck.model, ck.schedule, cfg, f.sweep_k);
    std::ofstream os = open_out(dir / "sweep.csv");
    write_sweep_csv(os, rows, cfg);
    write_sweep_csv(std::cout, rows, cfg);
    return 0;
  }

  const fs::path state_dir = dir / "runstate";
  DistillState state;
  if (f.resume && fs::exists(state_dir / "state.json")) {
    state = load_run_state(state_dir);
    state.config.epochs = cfg.epochs;  // the only setting a resumed run may change
    std::printf("resuming %s at epoch %zu\n", name.c_str(), state.epoch);
  } else {
    state = distill_init(ck.model, ck.schedule, cfg);
    save_run_state(state_dir, state, ck.schedule);
  }
  std::printf("PTQ eval loss %.6g\n", state.ptq_eval_loss);
  while (state.epoch < state.config.epochs) {
    distill_epochs(ck.model, ck.schedule, state, state.epoch + 1);
    save_run_state(state_dir, state, ck.schedule);
    std::vector<MetricRow> last(state.metrics.end() - static_cast<std::ptrdiff_t>(state.config.n_steps),
                                state.metrics.end());
    std::printf("epoch %zu train loss %.6g\n", state.epoch, mean_loss(last));
    std::fflush(stdout);
  }
  const std::vector<MetricRow> eval = distill_evaluate(ck.model, state.student, ck.schedule, state.config);
  const double final_loss = mean_loss(eval);
  save_checkpoint(dir / "student", state.student, ck.schedule);
  {
    std::ofstream os = open_out(dir / "metrics.csv");
    write_metrics_csv(os, state.metrics, state.config);
  }
  {
    std::ofstream os = open_out(dir / "eval.csv");
    write_metrics_csv(os, eval, state.config);
  }
  const nlohmann::json summary{{"scheme", std::string(to_string(state.config.scheme))},
                               {"bits", state.config.bits_label()},
                               {"epochs", state.epoch},
                               {"ptq_eval_loss", state.ptq_eval_loss},
                               {"final_eval_loss", final_loss}};
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
  std::printf("final eval loss %.6g (PTQ %.6g); outputs in %s\n", final_loss, state.ptq_eval_loss, dir.c_str());
  return 0;
}

struct SampleFlags {
  std::string checkpoint;
  std::size_t n = 16;
  std::size_t steps = 20;
  std::string prefix = "samples";
};

int cmd_sample(const RunConfig& c, const SampleFlags& f) {
  const Checkpoint ck = load_checkpoint(f.checkpoint.empty() ? c.out_dir / "teacher" : fs::path(f.checkpoint));
  if (f.n == 0) throw ValidationError("--n must be >= 1");
  const Tensor x = ddim_sample(ck.model, ck.schedule, f.steps, f.n, derive_seed(c.seed, "sample"));
  const fs::path base = c.out_dir / f.prefix;
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  write_tensor(fs::path(base.string() + ".hqt"), x);
  std::ofstream os = open_out(fs::path(base.string() + ".pgm"));
  write_pgm(os, x, 8);
  std::printf("wrote %zu samples (%zu DDIM steps) to %s.{hqt,pgm}\n", f.n, f.steps, base.c_str());
  return 0;
}

struct AnalyzeFlags {
  std::string checkpoint;
  std::vector<std::string> layers;
  std::vector<std::size_t> timesteps;
  std::vector<int> bits{3, 4};
  std::size_t samples = 8;
  std::size_t steps = 20;
  int k = kDefaultHadamardOrder;
};

int cmd_analyze(const RunConfig& c, AnalyzeFlags f) {
  const Checkpoint ck = load_checkpoint(f.checkpoint.empty() ? c.out_dir / "teacher" : fs::path(f.checkpoint));
  if (f.layers.empty()) f.layers.assign(kLayerNames.begin(), kLayerNames.end());
  for (const auto& l : f.layers) (void)layer_index(l);
  if (f.timesteps.empty()) f.timesteps = capture_timesteps(ck.schedule.T, f.steps);
  const Captures caps =
      capture_activations(ck.model, ck.schedule, f.steps, f.samples, derive_seed(c.seed, "analyze"), f.timesteps);

  std::vector<OutlierReport> reports;
  std::printf("%-8s %4s %3s %9s %9s %9s %8s\n", "layer", "t", "k", "max_pre", "max_post", "dominance", "rms_dev");
  for (const auto& l : f.layers) {
    for (std::size_t t : f.timesteps) {
      const auto it = caps.find({l, t});
      if (it == caps.end()) throw ValidationError("timestep " + std::to_string(t) + " is not on the DDIM sub-schedule");
      const Tensor m = activation_matrix(it->second);
      const HadamardPlan plan = layer_plan(ck.model, l, it->second, f.k);
      reports.push_back(outlier_report(l, t, m, plan));
      const auto& r = reports.back();
      std::printf("%-8s %4zu %3d %9.4g %9.4g %9.4g %8.2g\n", l.c_str(), t, plan.k, r.pre.global_max,
                  r.post.global_max, dominance_ratio(m, plan), block_rms_deviation(m, plan));
    }
  }
  fs::create_directories(c.out_dir);
  emit_report(c.out_dir / "outliers.csv", reports);
  std::ofstream os = open_out(c.out_dir / "schemes.csv");
  emit_comparison(os, compare_schemes(ck.model, caps, f.layers, f.timesteps, f.bits, f.k));
  std::printf("wrote %s and %s\n", (c.out_dir / "outliers.csv").c_str(), (c.out_dir / "schemes.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hqdm: Hadamard-quantized toy diffusion toolkit"};
  app.require_subcommand(1);
  app.footer(config_help() + "\nHQDM_THREADS caps worker threads.");

  auto* selftest = app.add_subcommand("selftest", "run fast invariant checks");

  Common teacher_common;
  auto* teacher = app.add_subcommand("train-teacher", "train the full-precision toy denoiser");
  teacher_common.add(teacher);
  std::optional<std::size_t> teacher_epochs;
  teacher->add_option("--epochs", teacher_epochs, "teacher epochs");

  Common distill_common;
  DistillFlags dflags;
  auto* distill = app.add_subcommand("distill", "PTQ-calibrate and distill a quantized student");
  distill_common.add(distill);
  std::optional<std::string> scheme;
  std::optional<int> wbits, abits, k;
  std::optional<std::size_t> epochs, lora_rank;
  distill->add_option("--teacher", dflags.teacher, "teacher checkpoint directory [OUT/teacher]");
  distill->add_option("--scheme", scheme, "plain | single_hadamard");
  distill->add_option("--wbits", wbits, "weight bits");
  distill->add_option("--abits", abits, "activation bits");
  distill->add_option("--k", k, "preferred Hadamard order");
  distill->add_option("--epochs", epochs, "distillation epochs");
  distill->add_option("--lora-rank", lora_rank, "LoRA rank");
  distill->add_option("--name", dflags.name, "run subdirectory [<scheme>_W<w>A<a>]");
  distill->add_option("--sweep-k", dflags.sweep_k, "run one distillation per order, e.g. 3,4,5,6")->delimiter(',');
  distill->add_flag("--resume", dflags.resume, "continue from the saved run state");

  Common sample_common;
  SampleFlags sflags;
  auto* sample = app.add_subcommand("sample", "draw DDIM samples from a checkpoint");
  sample_common.add(sample);
  sample->add_option("--checkpoint", sflags.checkpoint, "checkpoint directory [OUT/teacher]");
  sample->add_option("--n", sflags.n, "number of samples");
  sample->add_option("--steps", sflags.steps, "DDIM steps");
  sample->add_option("--prefix", sflags.prefix, "output file prefix inside OUT");

  Common analyze_common;
  AnalyzeFlags aflags;
  auto* analyze = app.add_subcommand("analyze", "activation outlier statistics of a teacher");
  analyze_common.add(analyze);
  analyze->add_option("--checkpoint", aflags.checkpoint, "checkpoint directory [OUT/teacher]");
  analyze->add_option("--layers", aflags.layers, "layer names")->delimiter(',');
  analyze->add_option("--timesteps", aflags.timesteps, "timesteps [first,middle,last DDIM step]")->delimiter(',');
  analyze->add_option("--bits", aflags.bits, "bit-widths for the scheme comparison")->delimiter(',');
  analyze->add_option("--samples", aflags.samples, "DDIM trajectories to capture");
  analyze->add_option("--steps", aflags.steps, "DDIM steps");
  analyze->add_option("--k", aflags.k, "preferred Hadamard order");

  BenchOptions bopt;
  std::string bench_scheme = "single_hadamard";
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "time transforms and quantized linear kernels");
  bench->add_option("--dims", bopt.dims, "feature dimensions")->delimiter(',');
  bench->add_option("--bits", bopt.bits, "bit-width");
  bench->add_option("--scheme", bench_scheme, "plain | single_hadamard | double_hadamard");
  bench->add_option("--reps", bopt.reps, "repetitions");
  bench->add_option("--tokens", bopt.tokens, "rows per activation");
  bench->add_option("--out", bench_out, "CSV path [stdout]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitValidation;
  }

  try {
    if (*selftest) return run_selftest(std::cout) == 0 ? 0 : kExitRuntime;
    if (*teacher) {
      RunConfig c = teacher_common.load();
      if (teacher_epochs) c.teacher_epochs = *teacher_epochs;
      return cmd_train_teacher(c);
    }
    if (*distill) {
      RunConfig c = distill_common.load();
      if (scheme) c.distill.scheme = parse_scheme(*scheme);
      if (wbits) c.distill.w_bits = *wbits;
      if (abits) c.distill.a_bits = *abits;
      if (k) c.distill.hadamard_k_preferred = *k;
      if (epochs) c.distill.epochs = *epochs;
      if (lora_rank) c.distill.lora_rank = *lora_rank;
      return cmd_distill(c, dflags);
    }
    if (*sample) return cmd_sample(sample_common.load(), sflags);
    if (*analyze) return cmd_analyze(analyze_common.load(), aflags);
    if (*bench) {
      bopt.scheme = parse_scheme(bench_scheme);
      if (bopt.bits < 2 || bopt.bits > 8) throw ValidationError("--bits must lie in [2, 8]");
      if (bench_out.empty()) {
        run_bench(std::cout, bopt);
      } else {
        std::ofstream os = open_out(bench_out);
        run_bench(os, bopt);
      }
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
