#include <chrono>
#include <cstdio>
#include <ostream>

#include "commands.hpp"
#include "hqdm/rng.hpp"

namespace hqdm::cli {

namespace {

template <class F>
double time_us(std::size_t reps, F&& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::micro>(t1 - t0).count() / static_cast<double>(reps);
}

}  // namespace

void run_bench(std::ostream& os, const BenchOptions& opt) {
  Rng rng(derive_seed(0xbe0c, "bench"));
  os << "op,dim,tokens,bits,scheme,reps,mean_us\n";
  auto row = [&](const char* op, std::size_t dim, double us) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", us);
    os << op << ',' << dim << ',' << opt.tokens << ',' << opt.bits << ',' << to_string(opt.scheme) << ','
       << opt.reps << ',' << buf << '\n';
  };
  for (std::size_t dim : opt.dims) {
    QLinearLayer l;
    l.weight = rng.normal_tensor({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)));
    l.w_params = l.a_params = QuantParams::symmetric(opt.bits);
    l.scheme = opt.scheme;
    l.plan = make_plan(dim, opt.scheme == Scheme::plain ? 0 : kDefaultHadamardOrder);
    const Tensor x = rng.normal_tensor({opt.tokens, dim}, 1.0);
    l.act_scales = ScaleTable(1, init_scale(block_transform(x, l.plan), l.a_params));
    const Tensor wq = opt.scheme == Scheme::double_hadamard ? block_transform_rows(l.weight, l.plan) : l.weight;
    l.w_scales = ScaleTable(1, init_scale(wq, l.w_params));

    row("block_transform", dim, time_us(opt.reps, [&] { (void)block_transform(x, l.plan); }));
    row("matmul_float", dim, time_us(opt.reps, [&] { (void)matmul(x, l.weight); }));
    if (opt.scheme == Scheme::double_hadamard) {
      row("qlinear_double", dim, time_us(opt.reps, [&] { (void)double_hadamard_linear(l, x, 0); }));
    } else {
      row("qlinear_fake_quant", dim, time_us(opt.reps, [&] { (void)qlinear_forward(l, x, 0); }));
      row("qlinear_int_path", dim, time_us(opt.reps, [&] { (void)qlinear_forward_int_path(l, x, 0); }));
    }
  }
}

void write_pgm(std::ostream& os, const Tensor& batch, std::size_t columns) {
  const std::size_t n = batch.dim(0), s = batch.dim(3);
  columns = std::max<std::size_t>(1, std::min(columns, n));
  const std::size_t rows = (n + columns - 1) / columns;
  const std::size_t W = columns * s, H = rows * s;
  os << "P2\n" << W << ' ' << H << "\n255\n";
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = (y / s) * columns + x / s;
      int v = 0;
      if (i < n) {
        const double p = batch[(i * s + y % s) * s + x % s];
        v = static_cast<int>(std::lround((std::clamp(p, -1.0, 1.0) + 1.0) * 127.5));
      }
      os << v << (x + 1 == W ? '\n' : ' ');
    }
  }
}

}  // namespace hqdm::cli
