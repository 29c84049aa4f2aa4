#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "commands.hpp"
#include "hqdm/hadamard.hpp"
#include "hqdm/nn_ops.hpp"
#include "hqdm/quantizer.hpp"
#include "hqdm/rng.hpp"

namespace hqdm::cli {

namespace {

struct Reporter {
  std::ostream& os;
  int failures = 0;
  void check(const std::string& name, bool ok, double measured) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-4s %-40s %.3g\n", ok ? "ok" : "FAIL", name.c_str(), measured);
    os << buf;
    if (!ok) ++failures;
  }
};

double rel_err(const Tensor& a, const Tensor& b) {
  return max_abs_diff(a, b) / std::max(max_abs(b), 1e-12);
}

}  // namespace

int run_selftest(std::ostream& os) {
  Reporter r{os};
  Rng rng(derive_seed(0x5e1f, "selftest"));

  double ortho = 0.0, oracle = 0.0;
  for (int k = 0; k <= 6; ++k) {
    const Tensor h = build_hadamard(k);
    ortho = std::max(ortho, max_abs_diff(matmul_nt(h, h), identity(h.rows())));
    const Tensor x = rng.normal_tensor({32, h.rows()}, 1.0);
    oracle = std::max(oracle, max_abs_diff(fwht(x, k), matmul(x, h)));
  }
  r.check("hadamard orthogonality k=0..6", ortho < 1e-9, ortho);
  r.check("fwht matches dense product", oracle < 1e-9, oracle);

  double lin = 0.0;
  for (int bits : {3, 4, 8}) {
    for (Scheme s : {Scheme::plain, Scheme::single_hadamard}) {
      QLinearLayer l;
      l.weight = rng.normal_tensor({64, 48}, 0.2);
      l.w_params = l.a_params = QuantParams::symmetric(bits);
      l.scheme = s;
      l.plan = make_plan(64, s == Scheme::plain ? 0 : 5);
      const Tensor x = rng.normal_tensor({16, 64}, 1.0);
      l.act_scales = ScaleTable(1, init_scale(block_transform(x, l.plan), l.a_params));
      l.w_scales = ScaleTable(1, init_scale(l.weight, l.w_params));
      lin = std::max(lin, rel_err(qlinear_forward_int_path(l, x, 0), qlinear_forward(l, x, 0)));
    }
  }
  r.check("qlinear integer path == fake-quant reference", lin <= 1e-4, lin);

  double conv = 0.0;
  for (std::size_t stride : {1, 2}) {
    QConvLayer c;
    c.weight = rng.normal_tensor({4, 3, 3, 3}, 0.3);
    c.stride = stride;
    c.padding = 1;
    c.w_params = c.a_params = QuantParams::symmetric(4);
    c.scheme = Scheme::single_hadamard;
    const Tensor x = rng.normal_tensor({2, 3, 8, 16}, 1.0);
    c.act_scales = ScaleTable(1, init_scale(block_transform(x, c.plan_for_width(16)), c.a_params));
    c.w_scales = ScaleTable(1, init_scale(c.weight, c.w_params));
    conv = std::max(conv, rel_err(qconv_forward_int_path(c, x, 0), qconv_forward(c, x, 0)));
  }
  r.check("qconv integer path == fake-quant reference", conv <= 1e-4, conv);

  // STE: d/dx of s*clamp(x/s + r) with the rounding residual r frozen.
  const QuantParams p = QuantParams::symmetric(4);
  const double s = 0.25, h = 1e-6;
  double ste = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-1.6, 1.6);
    const double v = x / s;
    if (std::abs(v - std::nearbyint(v)) < 1e-3 || std::abs(v - p.q_min) < 1e-3 || std::abs(v - p.q_max) < 1e-3) continue;
    const double res = std::nearbyint(v) - v;
    auto surrogate = [&](double z) { return s * std::clamp(z / s + res, double(p.q_min), double(p.q_max)); };
    const double fd = (surrogate(x + h) - surrogate(x - h)) / (2 * h);
    const Tensor g = ste_backward_input(Tensor({1}, {x}), s, p, Tensor({1}, {1.0}));
    ste = std::max(ste, std::abs(g[0] - fd));
  }
  r.check("STE input gradient vs finite differences", ste <= 1e-3, ste);

  os << (r.failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return r.failures;
}

}  // namespace hqdm::cli
