#include <gtest/gtest.h>

#include <cmath>

#include "hqdm/error.hpp"
#include "hqdm/nn_ops.hpp"
#include "hqdm/qkernels.hpp"
#include "hqdm/rng.hpp"
#include "oracles.hpp"

namespace hqdm {
namespace {

QLinearLayer linear(const Tensor& w, int bits, Scheme scheme, int k, double sa, double sw) {
  QLinearLayer l;
  l.weight = w;
  l.w_params = l.a_params = QuantParams::symmetric(bits);
  l.scheme = scheme;
  l.plan = make_plan(w.dim(0), scheme == Scheme::plain ? 0 : k);
  l.act_scales = ScaleTable(1, sa);
  l.w_scales = ScaleTable(1, sw);
  return l;
}

QLinearLayer calibrated(const Tensor& x, const Tensor& w, int bits, Scheme scheme, int k = 5) {
  QLinearLayer l = linear(w, bits, scheme, k, 1.0, 1.0);
  l.act_scales = ScaleTable(1, init_scale(block_transform(x, l.plan), l.a_params));
  const Tensor wq = scheme == Scheme::double_hadamard ? block_transform_rows(w, l.plan) : w;
  l.w_scales = ScaleTable(1, init_scale(wq, l.w_params));
  return l;
}

QConvLayer conv(const Tensor& w, std::size_t stride, std::size_t pad, int bits, Scheme scheme, const Tensor& x) {
  QConvLayer c;
  c.weight = w;
  c.stride = stride;
  c.padding = pad;
  c.w_params = c.a_params = QuantParams::symmetric(bits);
  c.scheme = scheme;
  c.act_scales = ScaleTable(1, init_scale(block_transform(x, c.plan_for_width(x.dim(3))), c.a_params));
  c.w_scales = ScaleTable(1, init_scale(w, c.w_params));
  return c;
}

TEST(Scheme, ParseAndPrint) {
  EXPECT_EQ(parse_scheme("plain"), Scheme::plain);
  EXPECT_EQ(parse_scheme("single"), Scheme::single_hadamard);
  EXPECT_EQ(parse_scheme("double_hadamard"), Scheme::double_hadamard);
  EXPECT_EQ(to_string(Scheme::single_hadamard), "single_hadamard");
  EXPECT_THROW(parse_scheme("triple"), ValidationError);
}

TEST(QLinear, QuantizationFreeLimitReproducesMatmul) {
  Rng rng(31);
  const Tensor x = rng.normal_tensor({6, 64}), w = rng.normal_tensor({64, 10});
  for (Scheme s : {Scheme::plain, Scheme::single_hadamard}) {
    const QLinearLayer l = calibrated(x, w, 24, s);
    EXPECT_LT(oracle::max_rel_err(qlinear_forward(l, x, 0), matmul(x, w)), 1e-6) << to_string(s);
    EXPECT_LT(oracle::max_rel_err(qlinear_forward_int_path(l, x, 0), matmul(x, w)), 1e-6) << to_string(s);
  }
  const QLinearLayer d = calibrated(x, w, 24, Scheme::double_hadamard);
  EXPECT_LT(oracle::max_rel_err(double_hadamard_linear(d, x, 0), matmul(x, w)), 1e-6);
}

TEST(QLinear, ExactGridMatchesIntegerOracle) {
  // Build X so that X*H lands exactly on the activation grid.
  Rng rng(32);
  const int k = 3;
  const std::size_t ci = 16, co = 5, rows = 4;
  const double sa = 0.5, sw = 0.25;
  std::vector<std::int64_t> xint(rows * ci), wint(ci * co);
  for (auto& v : xint) v = static_cast<std::int64_t>(rng.index(15)) - 7;
  for (auto& v : wint) v = static_cast<std::int64_t>(rng.index(15)) - 7;
  Tensor xh({rows, ci}), w({ci, co});
  for (std::size_t i = 0; i < xh.size(); ++i) xh[i] = sa * static_cast<double>(xint[i]);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = sw * static_cast<double>(wint[i]);
  const Tensor x = oracle::dense_block_transform(xh, k);
  const QLinearLayer l = linear(w, 4, Scheme::single_hadamard, k, sa, sw);

  // (XH)_int * BlockDiag(H_raw) * W_int, all in integers.
  std::vector<std::int64_t> hraw(ci * ci, 0);
  const auto h = oracle::dense_hadamard_raw(k);
  for (std::size_t seg = 0; seg < ci / 8; ++seg)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) hraw[(seg * 8 + i) * ci + seg * 8 + j] = h[i * 8 + j];
  const auto prod = oracle::naive_matmul_int(oracle::naive_matmul_int(xint, hraw, rows, ci, ci), wint, rows, ci, co);
  Tensor want({rows, co});
  for (std::size_t i = 0; i < want.size(); ++i) want[i] = sa * sw * std::pow(2.0, -1.5) * static_cast<double>(prod[i]);

  EXPECT_LT(oracle::max_rel_err(qlinear_forward_int_path(l, x, 0), want), 1e-12);
  EXPECT_LT(oracle::max_rel_err(qlinear_forward(l, x, 0), want), 1e-12);
}

TEST(QLinear, SpikeRowFavoursSingleHadamard) {
  Rng rng(33);
  Tensor x = rng.normal_tensor({8, 64});
  for (std::size_t c = 0; c < 64; ++c) x.at(3, c) = c == 11 ? 100.0 : 0.0;
  const Tensor w = rng.normal_tensor({64, 16}, 0.2);
  const Tensor ref = matmul(x, w);
  const double plain = mse(qlinear_forward(calibrated(x, w, 4, Scheme::plain), x, 0), ref);
  const double single = mse(qlinear_forward(calibrated(x, w, 4, Scheme::single_hadamard), x, 0), ref);
  EXPECT_LT(single, plain);
}

TEST(QLinear, IntPathMatchesReference) {
  Rng rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = rng.normal_tensor({16, 32}), w = rng.normal_tensor({32, 8});
    for (int bits : {3, 4, 8})
      for (Scheme s : {Scheme::plain, Scheme::single_hadamard}) {
        const QLinearLayer l = calibrated(x, w, bits, s);
        EXPECT_LT(oracle::max_rel_err(qlinear_forward_int_path(l, x, 0), qlinear_forward(l, x, 0)), 1e-4);
      }
  }
}

TEST(QLinear, ZeroInputGivesZero) {
  Rng rng(35);
  const QLinearLayer l = linear(rng.normal_tensor({32, 4}), 4, Scheme::single_hadamard, 5, 0.1, 0.1);
  const Tensor y = qlinear_forward_int_path(l, Tensor({3, 32}), 0);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(QLinear, AccumulatorBoundAtEightBits) {
  // Worst case |sum| = 2^7 * 2^7 * 2^k * dim must stay below 2^63 for dims up to 2^20.
  EXPECT_LT(7 + 7 + kMaxHadamardOrder + 20, 63);
}

TEST(QLinear, ShapeAndTimestepErrors) {
  Rng rng(36);
  const QLinearLayer l = linear(rng.normal_tensor({32, 4}), 4, Scheme::plain, 5, 0.1, 0.1);
  EXPECT_THROW(qlinear_forward(l, Tensor({2, 31}), 0), ValidationError);
  EXPECT_THROW(qlinear_forward(l, Tensor({2, 32}), 1), ValidationError);
}

TEST(QLinear, SingleHadamardLeavesWeightIntegersUntouched) {
  Rng rng(37);
  const Tensor x = rng.normal_tensor({4, 64}), w = rng.normal_tensor({64, 8});
  const QLinearLayer p = calibrated(x, w, 4, Scheme::plain), s = calibrated(x, w, 4, Scheme::single_hadamard);
  EXPECT_EQ(quantized_weight(p, 0).ints, quantized_weight(s, 0).ints);
}

TEST(DoubleHadamard, ConstantColumnsAmplifyBySqrtBlock) {
  const int k = 5;
  Tensor w({64, 3}, 1.0);
  const HadamardPlan plan = make_plan(64, k);
  EXPECT_DOUBLE_EQ(max_abs(block_transform_rows(w, plan)), std::sqrt(32.0) * max_abs(w));
}

TEST(DoubleHadamard, IdentityPlanReducesToPlain) {
  Rng rng(38);
  const Tensor x = rng.normal_tensor({5, 7}), w = rng.normal_tensor({7, 3});
  const QLinearLayer d = calibrated(x, w, 4, Scheme::double_hadamard);
  ASSERT_TRUE(d.plan.is_identity());
  QLinearLayer p = d;
  p.scheme = Scheme::plain;
  EXPECT_EQ(double_hadamard_linear(d, x, 0), qlinear_forward(p, x, 0));
}

TEST(DoubleHadamard, ContaminatedWeightsQuantizeWorse) {
  Rng rng(39);
  Tensor w = rng.normal_tensor({64, 16}, 0.1);
  for (std::size_t r = 0; r < 64; ++r) w.at(r, 5) += 1.0;
  const HadamardPlan plan = make_plan(64, 5);
  const Tensor hw = block_transform_rows(w, plan);
  const QuantParams p = QuantParams::symmetric(4);
  const double e_plain = mse(fake_quant(w, init_scale(w, p), p), w);
  const double e_double = mse(fake_quant(hw, init_scale(hw, p), p), hw);
  EXPECT_GE(e_double, e_plain);
}

TEST(DoubleHadamard, RejectsConvolutionLayers) {
  Rng rng(40);
  const Tensor x = rng.normal_tensor({1, 2, 4, 8});
  QConvLayer c = conv(rng.normal_tensor({2, 2, 3, 3}), 1, 1, 4, Scheme::plain, x);
  c.scheme = Scheme::double_hadamard;
  EXPECT_THROW(qconv_forward(c, x, 0), ValidationError);
}

TEST(QConv, OneByOneEqualsLinearOnChannelLastInput) {
  Rng rng(41);
  const Tensor x = rng.normal_tensor({2, 6, 3, 4}), w = rng.normal_tensor({5, 6, 1, 1});
  const QConvLayer c = conv(w, 1, 0, 4, Scheme::plain, x);
  Tensor xl({2 * 3 * 4, 6});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t ch = 0; ch < 6; ++ch)
      for (std::size_t p = 0; p < 12; ++p) xl[(b * 12 + p) * 6 + ch] = x[(b * 6 + ch) * 12 + p];
  const QLinearLayer l = linear(transpose(reshape(w, {5, 6})), 4, Scheme::plain, 0, c.act_scales.at(0), c.w_scales.at(0));
  const Tensor yl = qlinear_forward(l, xl, 0), yc = qconv_forward(c, x, 0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 5; ++o)
      for (std::size_t p = 0; p < 12; ++p) EXPECT_NEAR(yc[(b * 5 + o) * 12 + p], yl[(b * 12 + p) * 5 + o], 1e-6);
}

TEST(QConv, QuantizationFreeLimitMatchesDirectConv) {
  Rng rng(42);
  const Tensor x = rng.normal_tensor({2, 3, 8, 16}), w = rng.normal_tensor({4, 3, 3, 3});
  const QConvLayer c = conv(w, 1, 1, 24, Scheme::single_hadamard, x);
  EXPECT_EQ(c.plan_for_width(16).k, 4);
  EXPECT_LT(oracle::max_rel_err(qconv_forward(c, x, 0), oracle::direct_conv(x, w, 1, 1)), 1e-6);
}

TEST(QConv, IntPathMatchesFakeQuantStride2) {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = rng.normal_tensor({2, 3, 8, 16}), w = rng.normal_tensor({4, 3, 3, 3});
    for (Scheme s : {Scheme::plain, Scheme::single_hadamard}) {
      const QConvLayer c = conv(w, 2, 1, 4, s, x);
      EXPECT_LT(oracle::max_rel_err(qconv_forward_int_path(c, x, 0), qconv_forward(c, x, 0)), 1e-4);
    }
  }
}

TEST(QConv, IdentityPlanEqualsPlainBitwise) {
  Rng rng(44);
  const Tensor x = rng.normal_tensor({1, 2, 5, 7}), w = rng.normal_tensor({3, 2, 3, 3});
  const QConvLayer p = conv(w, 1, 1, 4, Scheme::plain, x);
  QConvLayer s = p;
  s.scheme = Scheme::single_hadamard;
  ASSERT_TRUE(s.plan_for_width(7).is_identity());
  EXPECT_EQ(qconv_forward(s, x, 0), qconv_forward(p, x, 0));
  EXPECT_EQ(qconv_forward_int_path(s, x, 0), qconv_forward_int_path(p, x, 0));
}

TEST(QConv, SingleHadamardLeavesWeightIntegersUntouched) {
  Rng rng(45);
  const Tensor x = rng.normal_tensor({1, 2, 4, 8}), w = rng.normal_tensor({3, 2, 3, 3});
  QConvLayer s = conv(w, 1, 1, 4, Scheme::single_hadamard, x);
  QConvLayer p = s;
  p.scheme = Scheme::plain;
  EXPECT_EQ(quantized_weight(p, 0).ints, quantized_weight(s, 0).ints);
}

TEST(ActQuant, DominantEntryLowersBlockMaximum) {
  // ||x||_1 * 2^(-k/2) < max|x| guarantees the transformed maximum shrinks.
  Tensor x({1, 32}, 0.01);
  x[9] = 5.0;
  const HadamardPlan p = make_plan(32, 5);
  EXPECT_LT(max_abs(block_transform(x, p)), max_abs(x));
}

TEST(ActQuant, BackwardMatchesSurrogateFiniteDifferences) {
  Rng rng(46);
  const HadamardPlan p = make_plan(16, 4);
  const Tensor x = rng.normal_tensor({3, 16}), up = rng.normal_tensor({3, 16});
  const QuantParams q = QuantParams::symmetric(4);
  const double s = 0.3;
  ActQuantCache cache;
  (void)act_quant_forward(x, p, s, q, true, &cache);
  const ActQuantGrads g = act_quant_backward(cache, up);
  // Surrogate: H * s * (clamp(z/s) + r) with z = xH and r frozen inside the range.
  const Tensor z = block_transform(x, p);
  Tensor r(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) r[i] = std::nearbyint(z[i] / s) - z[i] / s;
  auto f = [&](const Tensor& xx, double sc) {
    const Tensor zz = block_transform(xx, p);
    Tensor q2(zz.shape());
    for (std::size_t i = 0; i < zz.size(); ++i) {
      const double v = zz[i] / sc;
      q2[i] = v > q.q_max ? sc * q.q_max : v < q.q_min ? sc * q.q_min : sc * (v + r[i]);
    }
    return sum(mul(block_transform(q2, p), up));
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 4) {
    Tensor a = x, b = x;
    a[i] += h;
    b[i] -= h;
    EXPECT_NEAR(g.dx[i], (f(a, s) - f(b, s)) / (2 * h), 1e-5);
  }
  // Scale derivative with frozen residual equals the LSQ sum.
  auto fs = [&](double sc) {
    Tensor q2(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double v = z[i] / s;
      q2[i] = v > q.q_max ? sc * q.q_max : v < q.q_min ? sc * q.q_min : sc * (z[i] / sc + r[i]);
    }
    return sum(mul(block_transform(q2, p), up));
  };
  EXPECT_NEAR(g.dscale_sum, (fs(s + h) - fs(s - h)) / (2 * h), 1e-5);
}

TEST(ActQuant, DisabledIsIdentity) {
  Rng rng(47);
  const Tensor x = rng.normal_tensor({2, 8});
  EXPECT_EQ(act_quant_forward(x, make_plan(8, 3), 0.1, QuantParams::symmetric(4), false, nullptr), x);
}

}  // namespace
}  // namespace hqdm
