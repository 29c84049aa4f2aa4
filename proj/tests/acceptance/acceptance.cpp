// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hqdm/analysis.hpp"
#include "hqdm/checkpoint.hpp"
#include "hqdm/distill.hpp"
#include "hqdm/error.hpp"
#include "hqdm/qkernels.hpp"
#include "hqdm/teacher.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hqdm;

namespace {

constexpr std::uint64_t kRootSeed = 2024;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Suite {
  fs::path workdir;
  NoiseSchedule schedule = make_schedule(100, 1e-3, 0.2);
  SyntheticDataset data{512, derive_seed(kRootSeed, "data")};
  TeacherTrainConfig teacher_config{30, 16, 2e-3, derive_seed(kRootSeed, "teacher")};
  ToyDenoiser teacher;
  Captures captures;
  std::string w4a4_single_csv;
  int failures = 0;

  void report(int id, const std::string& name, double seconds, double limit, Outcome o) {
    const bool in_time = seconds < limit;
    if (!in_time) o.detail += "; over time limit " + fmt(limit) + " s";
    const bool ok = o.pass && in_time;
    failures += ok ? 0 : 1;
    std::printf("%s %d %s (%.1f s) %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), seconds, o.detail.c_str());
    std::fflush(stdout);
  }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome hadamard_correctness() {
  double worst_orth = 0.0, worst_fwht = 0.0;
  bool symmetric = true;
  Rng rng(derive_seed(kRootSeed, "c1"));
  for (int k = 0; k <= 6; ++k) {
    const Tensor h = build_hadamard(k);
    symmetric = symmetric && h == transpose(h);
    worst_orth = std::max(worst_orth, max_abs_diff(matmul(h, transpose(h)), identity(h.dim(0))));
    const Tensor dense = oracle::dense_hadamard(k);
    const Tensor x = rng.normal_tensor({1000, h.dim(0)});
    worst_fwht = std::max(worst_fwht, max_abs_diff(fwht(x, k), oracle::naive_matmul(x, dense)));
  }
  Outcome o;
  o.pass = symmetric && worst_orth < 1e-9 && worst_fwht < 1e-9;
  o.detail = "max|HH^T-I| " + Suite::fmt(worst_orth) + ", symmetric " + (symmetric ? "yes" : "no") +
             ", fwht vs dense " + Suite::fmt(worst_fwht);
  return o;
}

Outcome spike_and_constant_identities() {
  for (int k = 1; k <= 6; ++k) {
    const std::size_t n = std::size_t{1} << k;
    const double expect = hadamard_norm(k);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor e({1, n});
      e[i] = 1.0;
      const Tensor y = fwht(e, k);
      for (double v : y.data())
        if (std::abs(v) != expect) return {false, "fwht(e_" + std::to_string(i) + ") at k=" + std::to_string(k)};
    }
    const Tensor c = fwht(Tensor({1, n}, 1.0), k);
    if (c[0] != std::sqrt(static_cast<double>(n)))
      return {false, "fwht(1)[0] at k=" + std::to_string(k) + ": " + Suite::fmt(c[0])};
    for (std::size_t i = 1; i < n; ++i)
      if (c[i] != 0.0) return {false, "fwht(1) nonzero tail at k=" + std::to_string(k)};
  }
  return {true, "exact for k=1..6"};
}

// s * (clamp(x/s) + r) with r = round(x/s) - x/s frozen inside the range.
double ste_surrogate(double x, double s, double r, const QuantParams& p) {
  const double v = x / s;
  if (v > p.q_max) return s * p.q_max;
  if (v < p.q_min) return s * p.q_min;
  return s * (v + r);
}

Outcome quantizer_contract() {
  Rng rng(derive_seed(kRootSeed, "c3"));
  std::size_t violations = 0;
  for (int i = 0; i < 100000; ++i) {
    const int bits = 2 + static_cast<int>(rng.index(7));
    const QuantParams p = QuantParams::symmetric(bits);
    const double s = std::exp(rng.uniform(-6.0, 2.0));
    const double x = rng.uniform(s * p.q_min, s * p.q_max);
    const double err = std::abs(x - fake_quant(Tensor({1}, {x}), s, p)[0]);
    violations += err > s / 2.0;
  }

  const QuantParams p4 = QuantParams::symmetric(4);
  double ste_worst = 0.0, lsq_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double s = rng.uniform(0.05, 0.5);
    const double x = rng.normal() * 2.0;
    const double up = rng.normal();
    const double v = x / s;
    const double r = std::nearbyint(v) - v;
    if (std::abs(v - p4.q_max) < 1e-2 || std::abs(v - p4.q_min) < 1e-2 || std::abs(std::abs(r) - 0.5) < 1e-2) continue;
    const double h = 1e-6;
    const double g = ste_backward_input(Tensor({1}, {x}), s, p4, Tensor({1}, {up}))[0];
    const double fd = up * (ste_surrogate(x + h, s, r, p4) - ste_surrogate(x - h, s, r, p4)) / (2 * h);
    ste_worst = std::max(ste_worst, std::abs(g - fd) / std::max(std::abs(fd), 1e-12));
    auto f = [&](double sc) {
      if (v > p4.q_max) return sc * p4.q_max;
      if (v < p4.q_min) return sc * p4.q_min;
      return sc * (x / sc + r);
    };
    const double gs = lsq_scale_grad_sum(Tensor({1}, {x}), s, p4, Tensor({1}, {up}));
    const double fds = up * (f(s + h) - f(s - h)) / (2 * h);
    if (std::abs(fds) > 1e-9) lsq_worst = std::max(lsq_worst, std::abs(gs - fds) / std::abs(fds));
  }
  Outcome o;
  o.pass = violations == 0 && ste_worst <= 1e-3 && lsq_worst <= 1e-2;
  o.detail = std::to_string(violations) + " rounding violations in 1e5, STE rel err " + Suite::fmt(ste_worst) +
             ", LSQ rel err " + Suite::fmt(lsq_worst);
  return o;
}

QLinearLayer random_linear(Rng& rng, int bits, Scheme scheme, const Tensor& x, const Tensor& w) {
  QLinearLayer l;
  l.weight = w;
  l.w_params = l.a_params = QuantParams::symmetric(bits);
  l.scheme = scheme;
  l.plan = make_plan(w.dim(0), scheme == Scheme::plain ? 0 : 5);
  l.act_scales = ScaleTable(1, init_scale(block_transform(x, l.plan), l.a_params) * rng.uniform(0.6, 1.0));
  const Tensor wq = scheme == Scheme::double_hadamard ? block_transform_rows(w, l.plan) : w;
  l.w_scales = ScaleTable(1, init_scale(wq, l.w_params));
  return l;
}

Outcome integer_path_equivalence() {
  Rng rng(derive_seed(kRootSeed, "c4"));
  const int bits_list[] = {3, 4, 8};
  const std::size_t widths[] = {16, 24, 32, 48, 64};
  double worst = 0.0;
  std::size_t overflows = 0, cases = 0;
  for (int i = 0; i < 200; ++i) {
    const int bits = bits_list[i % 3];
    const int kind = (i / 3) % 6;
    try {
      if (kind < 3) {
        const Scheme scheme = kind == 0 ? Scheme::plain : kind == 1 ? Scheme::single_hadamard : Scheme::double_hadamard;
        const std::size_t ci = widths[rng.index(5)], co = 4 + rng.index(13), tokens = 8 + rng.index(25);
        Tensor x = rng.normal_tensor({tokens, ci});
        x[rng.index(x.size())] *= 20.0;
        const Tensor w = rng.normal_tensor({ci, co}, 0.3);
        const QLinearLayer l = random_linear(rng, bits, scheme, x, w);
        worst = std::max(worst, oracle::max_rel_err(qlinear_forward_int_path(l, x, 0), qlinear_forward(l, x, 0)));
      } else {
        const std::size_t ksize = kind == 3 ? 1 : 3, stride = kind == 5 ? 2 : 1;
        const std::size_t ci = 2 + rng.index(3), co = 2 + rng.index(4);
        const std::size_t width = widths[rng.index(3)], height = 4 + rng.index(6);
        const Tensor x = rng.normal_tensor({2, ci, height, width});
        QConvLayer c;
        c.weight = rng.normal_tensor({co, ci, ksize, ksize}, 0.3);
        c.stride = stride;
        c.padding = ksize / 2;
        c.w_params = c.a_params = QuantParams::symmetric(bits);
        c.scheme = (i / 18) % 2 ? Scheme::single_hadamard : Scheme::plain;
        c.act_scales = ScaleTable(1, init_scale(block_transform(x, c.plan_for_width(width)), c.a_params));
        c.w_scales = ScaleTable(1, init_scale(c.weight, c.w_params));
        worst = std::max(worst, oracle::max_rel_err(qconv_forward_int_path(c, x, 0), qconv_forward(c, x, 0)));
      }
      ++cases;
    } catch (const OverflowError&) {
      ++overflows;
    }
  }
  Outcome o;
  o.pass = overflows == 0 && cases == 200 && worst <= 1e-4;
  o.detail = std::to_string(cases) + " cases, max rel err " + Suite::fmt(worst) + ", overflow events " +
             std::to_string(overflows);
  return o;
}

Outcome weight_integrity() {
  Rng rng(derive_seed(kRootSeed, "c5"));
  bool identical = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = rng.normal_tensor({8, 64}), w = rng.normal_tensor({64, 12});
    QLinearLayer p = random_linear(rng, 4, Scheme::plain, x, w);
    QLinearLayer s = p;
    s.scheme = Scheme::single_hadamard;
    s.plan = make_plan(64, 5);
    identical = identical && quantized_weight(p, 0).ints == quantized_weight(s, 0).ints;
    QConvLayer cp;
    cp.weight = rng.normal_tensor({3, 2, 3, 3});
    cp.w_params = cp.a_params = QuantParams::symmetric(4);
    cp.act_scales = ScaleTable(1, 0.1);
    cp.w_scales = ScaleTable(1, init_scale(cp.weight, cp.w_params));
    QConvLayer cs = cp;
    cs.scheme = Scheme::single_hadamard;
    identical = identical && quantized_weight(cp, 0).ints == quantized_weight(cs, 0).ints;
  }

  const int k = 5;
  const std::size_t block = std::size_t{1} << k;
  Tensor w = rng.normal_tensor({64, 16}, 0.02);
  const std::size_t contaminated[] = {3, 9};
  for (std::size_t c : contaminated)
    for (std::size_t r = 0; r < 64; ++r) w.at(r, c) += 1.0;
  const Tensor hw = block_transform_rows(w, plan_with_order(64, k));
  double worst_ratio = 1e300;
  for (std::size_t c : contaminated)
    for (std::size_t b = 0; b < 64 / block; ++b) {
      double plain = 0.0, dbl = 0.0;
      for (std::size_t r = b * block; r < (b + 1) * block; ++r) {
        plain = std::max(plain, std::abs(w.at(r, c)));
        dbl = std::max(dbl, std::abs(hw.at(r, c)));
      }
      worst_ratio = std::min(worst_ratio, dbl / plain);
    }
  const double need = 0.9 * std::sqrt(static_cast<double>(block));
  Outcome o;
  o.pass = identical && worst_ratio >= need;
  o.detail = std::string("single ints ") + (identical ? "identical" : "DIFFER") + " to plain; double/plain max " +
             Suite::fmt(worst_ratio) + " (need >= " + Suite::fmt(need) + ")";
  return o;
}

Outcome outlier_diffusion(Suite& suite) {
  const auto ts = capture_timesteps(suite.schedule.T, 20);
  suite.captures = capture_activations(suite.teacher, suite.schedule, 20, 8, derive_seed(kRootSeed, "c6"), ts);
  double worst_rms = 0.0;
  std::size_t dominant = 0, decreased = 0;
  std::vector<OutlierReport> reports;
  for (const auto& [key, raw] : suite.captures) {
    const Tensor x = activation_matrix(raw);
    const HadamardPlan plan = layer_plan(suite.teacher, key.first, x, kDefaultHadamardOrder);
    worst_rms = std::max(worst_rms, block_rms_deviation(x, plan));
    const OutlierReport r = outlier_report(key.first, key.second, x, plan);
    if (dominance_ratio(x, plan) > 1.0) {
      ++dominant;
      decreased += r.post.global_max < r.pre.global_max;
    }
    reports.push_back(r);
  }
  emit_report(suite.workdir / "outliers.csv", reports);
  Outcome o;
  o.pass = worst_rms < 1e-6 && decreased == dominant && suite.captures.size() == kNumLayers * ts.size();
  o.detail = std::to_string(suite.captures.size()) + " captures, block RMS deviation " + Suite::fmt(worst_rms) +
             ", dominant " + std::to_string(dominant) + ", max decreased in " + std::to_string(decreased);
  return o;
}

DistillConfig distill_config(Scheme scheme, int a_bits) {
  DistillConfig c;
  c.seed = derive_seed(kRootSeed, "distill");
  c.scheme = scheme;
  c.a_bits = a_bits;
  return c;
}

std::string metrics_text(const DistillResult& r, const DistillConfig& c) {
  std::ostringstream os;
  write_metrics_csv(os, r.metrics, c);
  write_metrics_csv(os, r.final_eval, c, false);
  return os.str();
}

Outcome qat_benefit(Suite& suite) {
  double final_loss[2][2], ptq[2][2];
  const int a_bits[] = {4, 3};
  const Scheme schemes[] = {Scheme::plain, Scheme::single_hadamard};
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < 2; ++s) {
      const DistillConfig c = distill_config(schemes[s], a_bits[a]);
      const DistillResult r = distill_run(suite.teacher, suite.schedule, c);
      final_loss[a][s] = r.final_eval_loss;
      ptq[a][s] = r.ptq_eval_loss;
      const std::string text = metrics_text(r, c);
      std::ofstream(suite.workdir / ("metrics_" + c.bits_label() + "_" + std::string(to_string(c.scheme)) + ".csv"))
          << text;
      if (a == 0 && s == 1) suite.w4a4_single_csv = text;
      std::printf("  %s %-15s ptq %.6f final %.6f\n", c.bits_label().c_str(), std::string(to_string(c.scheme)).c_str(),
                  r.ptq_eval_loss, r.final_eval_loss);
    }
  const double gain_plain = 1.0 - final_loss[0][0] / ptq[0][0];
  const double gain_single = 1.0 - final_loss[0][1] / ptq[0][1];
  const double ratio_a4 = final_loss[0][0] / final_loss[0][1];
  const double ratio_a3 = final_loss[1][0] / final_loss[1][1];
  const bool a = gain_plain >= 0.2 && gain_single >= 0.2;
  const bool b = final_loss[0][1] <= final_loss[0][0];
  const bool c = ratio_a3 >= ratio_a4;
  Outcome o;
  o.pass = a && b && c;
  o.detail = std::string("(a) ") + (a ? "ok" : "no") + " W4A4 gain plain " + Suite::fmt(100 * gain_plain) +
             "%, single " + Suite::fmt(100 * gain_single) + "%; (b) " + (b ? "ok" : "no") + " single " +
             Suite::fmt(final_loss[0][1]) + " vs plain " + Suite::fmt(final_loss[0][0]) + "; (c) " + (c ? "ok" : "no") +
             " plain/single A3 " + Suite::fmt(ratio_a3) + " vs A4 " + Suite::fmt(ratio_a4);
  return o;
}

Outcome ablation_sweep(Suite& suite) {
  const DistillConfig c = distill_config(Scheme::single_hadamard, 4);
  const std::vector<int> orders = {3, 4, 5, 6};
  std::string text[2];
  std::size_t rows = 0;
  for (auto& t : text) {
    const auto sweep = sweep_hadamard_order(suite.teacher, suite.schedule, c, orders);
    rows = sweep.size();
    std::ostringstream os;
    write_sweep_csv(os, sweep, c);
    t = os.str();
  }
  std::ofstream(suite.workdir / "sweep_k.csv") << text[0];
  Outcome o;
  o.pass = rows == orders.size() && text[0] == text[1];
  o.detail = std::to_string(rows) + " configs, repeat " + (text[0] == text[1] ? "identical" : "DIFFERS");
  return o;
}

Outcome reproducibility(Suite& suite) {
  const TeacherTrainResult again = train_teacher(suite.data, suite.schedule, DenoiserConfig{}, suite.teacher_config);
  const bool teacher_same = again.model.named_tensors() == suite.teacher.named_tensors();
  const auto ts = capture_timesteps(suite.schedule.T, 20);
  const bool captures_same =
      capture_activations(suite.teacher, suite.schedule, 20, 8, derive_seed(kRootSeed, "c6"), ts) == suite.captures;
  const DistillConfig c = distill_config(Scheme::single_hadamard, 4);
  const bool distill_same = metrics_text(distill_run(suite.teacher, suite.schedule, c), c) == suite.w4a4_single_csv;
  Outcome o;
  o.pass = teacher_same && captures_same && distill_same && !suite.w4a4_single_csv.empty();
  o.detail = std::string("teacher ") + (teacher_same ? "same" : "DIFFERS") + ", captures " +
             (captures_same ? "same" : "DIFFER") + ", W4A4 distill metrics " + (distill_same ? "same" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Suite suite;
  suite.workdir = "acceptance_work";
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--workdir" && i + 1 < argc) {
      suite.workdir = argv[++i];
    } else if (arg == "--quick") {
      quick = true;
    } else {
      std::fprintf(stderr, "usage: %s [--workdir DIR] [--quick]\n  --quick  criteria 1-5 only (no teacher)\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(suite.workdir);

  try {
    auto run = [&](int id, const std::string& name, double limit, const std::function<Outcome()>& fn) {
      const auto t0 = std::chrono::steady_clock::now();
      Outcome o = fn();
      suite.report(id, name, seconds_since(t0), limit, std::move(o));
    };
    run(1, "hadamard correctness", 5, hadamard_correctness);
    run(2, "spike/constant identities", 1, spike_and_constant_identities);
    run(3, "quantizer contract", 30, quantizer_contract);
    run(4, "integer-path equivalence", 120, integer_path_equivalence);
    run(5, "single-vs-double weight integrity", 30, weight_integrity);
    if (quick) {
      std::printf("%d criteria failed (quick run: 6-9 skipped)\n", suite.failures);
      return suite.failures == 0 ? 0 : 1;
    }

    auto t0 = std::chrono::steady_clock::now();
    suite.teacher = train_teacher(suite.data, suite.schedule, DenoiserConfig{}, suite.teacher_config).model;
    save_checkpoint(suite.workdir / "teacher", suite.teacher, suite.schedule);
    std::printf("  teacher trained in %.1f s\n", seconds_since(t0));

    run(6, "outlier diffusion", 120, [&] { return outlier_diffusion(suite); });
    run(7, "end-to-end QAT benefit", 900, [&] { return qat_benefit(suite); });
    run(8, "hadamard-order ablation", 1800, [&] { return ablation_sweep(suite); });
    run(9, "bitwise reproducibility", 1800, [&] { return reproducibility(suite); });
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", suite.failures);
  return suite.failures == 0 ? 0 : 1;
}
