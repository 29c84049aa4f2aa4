#include <benchmark/benchmark.h>

#include "hqdm/hadamard.hpp"
#include "hqdm/qkernels.hpp"
#include "hqdm/rng.hpp"

namespace {

using namespace hqdm;

void BM_Fwht(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = rng.normal_tensor({64, std::size_t{1} << k});
  for (auto _ : state) benchmark::DoNotOptimize(fwht(x, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}
BENCHMARK(BM_Fwht)->DenseRange(3, 10, 1);

QLinearLayer make_layer(std::size_t dim, int bits, Scheme scheme, const Tensor& x) {
  Rng rng(2);
  QLinearLayer l;
  l.weight = rng.normal_tensor({dim, dim}, 0.1);
  l.w_params = l.a_params = QuantParams::symmetric(bits);
  l.scheme = scheme;
  l.plan = make_plan(dim, scheme == Scheme::plain ? 0 : kDefaultHadamardOrder);
  l.act_scales = ScaleTable(1, init_scale(block_transform(x, l.plan), l.a_params));
  l.w_scales = ScaleTable(1, init_scale(l.weight, l.w_params));
  return l;
}

void BM_QLinearIntPath(benchmark::State& state) {
  const std::size_t dim = static_cast<std::size_t>(state.range(0));
  const auto scheme = static_cast<Scheme>(state.range(1));
  Rng rng(3);
  const Tensor x = rng.normal_tensor({64, dim});
  const QLinearLayer l = make_layer(dim, 4, scheme, x);
  for (auto _ : state) benchmark::DoNotOptimize(qlinear_forward_int_path(l, x, 0));
  state.SetLabel(std::string(to_string(scheme)));
}
BENCHMARK(BM_QLinearIntPath)
    ->ArgsProduct({{64, 128, 256}, {static_cast<int>(Scheme::plain), static_cast<int>(Scheme::single_hadamard)}});

void BM_QConvIntPath(benchmark::State& state) {
  const auto scheme = static_cast<Scheme>(state.range(0));
  Rng rng(4);
  const Tensor x = rng.normal_tensor({4, 16, 16, 16});
  QConvLayer c;
  c.weight = rng.normal_tensor({32, 16, 3, 3}, 0.1);
  c.stride = 2;
  c.padding = 1;
  c.w_params = c.a_params = QuantParams::symmetric(4);
  c.scheme = scheme;
  c.act_scales = ScaleTable(1, init_scale(block_transform(x, c.plan_for_width(16)), c.a_params));
  c.w_scales = ScaleTable(1, init_scale(c.weight, c.w_params));
  for (auto _ : state) benchmark::DoNotOptimize(qconv_forward_int_path(c, x, 0));
  state.SetLabel(std::string(to_string(scheme)));
}
BENCHMARK(BM_QConvIntPath)->Arg(static_cast<int>(Scheme::plain))->Arg(static_cast<int>(Scheme::single_hadamard));

}  // namespace

BENCHMARK_MAIN();
