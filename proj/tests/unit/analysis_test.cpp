#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hqdm/analysis.hpp"
#include "hqdm/error.hpp"
#include "hqdm/rng.hpp"

namespace hqdm {
namespace {

TEST(ChannelStats, ConstantMatrixRatioIsOne) {
  const ChannelStats s = channel_outlier_stats(Tensor({5, 4}, 0.7));
  EXPECT_DOUBLE_EQ(s.ratio, 1.0);
  EXPECT_DOUBLE_EQ(s.rms[2], 0.7);
  EXPECT_EQ(s.min[1], 0.7);
}

TEST(ChannelStats, EmptyThrows) { EXPECT_THROW(channel_outlier_stats(Tensor()), ValidationError); }

TEST(ChannelStats, KurtosisOfSpikeExceedsGaussian) {
  Tensor x({1, 64});
  x[5] = 100.0;
  EXPECT_GT(channel_outlier_stats(x).kurtosis, 3.0);
}

TEST(OutlierReport, SingleSpikeInEightWideBlock) {
  Tensor x({1, 8});
  x[3] = 100.0;
  const OutlierReport r = outlier_report("fc1", 0, x, make_plan(8, 3));
  EXPECT_EQ(r.pre.global_max, 100.0);
  EXPECT_NEAR(r.post.global_max, 100.0 / std::sqrt(8.0), 1e-12);
  EXPECT_NEAR(r.post.global_max / r.pre.global_max, std::pow(2.0, -1.5), 1e-15);
}

TEST(OutlierReport, SpikeFamilyRatioIsPowerOfTwo) {
  for (int k = 1; k <= 6; ++k) {
    Tensor x({2, std::size_t{3} << k});
    x[7] = -4.0;
    const OutlierReport r = outlier_report("l", 0, x, plan_with_order(x.dim(1), k));
    EXPECT_NEAR(r.post.global_max / r.pre.global_max, std::pow(2.0, -0.5 * k), 1e-15);
  }
}

TEST(BlockRms, InvariantUnderTransform) {
  Rng rng(71);
  const Tensor x = rng.normal_tensor({20, 96}, 2.0);
  EXPECT_LT(block_rms_deviation(x, make_plan(96, 5)), 1e-12);
}

TEST(Dominance, ThresholdImpliesMaximumDrops) {
  Rng rng(72);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = rng.normal_tensor({4, 32}, 0.02);
    x[rng.index(x.size())] = rng.uniform(1.0, 5.0);
    const HadamardPlan p = make_plan(32, 5);
    if (dominance_ratio(x, p) > 1.0) EXPECT_LT(max_abs(block_transform(x, p)), max_abs(x));
  }
  Tensor flat({1, 32}, 1.0);
  EXPECT_LT(dominance_ratio(flat, make_plan(32, 5)), 1.0);
}

TEST(ActivationMatrix, FoldsLeadingAxes) {
  const Tensor m = activation_matrix(Tensor({2, 3, 4, 8}));
  EXPECT_EQ(m.shape(), (Shape{24, 8}));
  EXPECT_THROW(activation_matrix(Tensor({2, 3, 4})), ValidationError);
}

TEST(CompareLinearSchemes, GaussianReportFinite) {
  Rng rng(73);
  const Tensor x = rng.normal_tensor({32, 64}), w = rng.normal_tensor({64, 64});
  const SchemeComparison c = compare_linear_schemes(x, w, 4, 5);
  EXPECT_TRUE(std::isfinite(c.mse_plain));
  EXPECT_TRUE(std::isfinite(c.mse_single));
  ASSERT_TRUE(c.mse_double);
  EXPECT_TRUE(std::isfinite(*c.mse_double));
  EXPECT_EQ(c.w_max_single, c.w_max_plain);
}

TEST(CompareLinearSchemes, NearConstantColumnsAmplifyDoubleWeights) {
  Rng rng(74);
  const Tensor x = rng.normal_tensor({8, 64});
  Tensor w = rng.normal_tensor({64, 8}, 1e-3);
  for (std::size_t r = 0; r < 64; ++r) w.at(r, 2) += 0.8;
  const SchemeComparison c = compare_linear_schemes(x, w, 4, 5);
  double mean = 0.0;
  for (std::size_t r = 0; r < 32; ++r) mean += w.at(r, 2) / 32.0;
  EXPECT_GE(*c.w_max_double, std::sqrt(32.0) * mean);
}

TEST(EmitReport, StableColumnsAndSixDigits) {
  OutlierReport r;
  r.layer = "mid";
  r.timestep = 9;
  r.pre.max_abs = {1.23456789};
  r.post.max_abs = {0.5};
  r.pre.rms = {2.0 / 3.0};
  r.post.rms = {2.0 / 3.0};
  std::ostringstream os;
  emit_report(os, {r});
  EXPECT_EQ(os.str(), "layer,timestep,channel,max_pre,max_post,rms_pre,rms_post\nmid,9,0,1.23457,0.5,0.666667,0.666667\n");
}

TEST(EmitReport, UnwritablePathThrows) {
  EXPECT_THROW(emit_report(std::filesystem::path("/nonexistent/dir/x.csv"), {}), IoError);
}

}  // namespace
}  // namespace hqdm
