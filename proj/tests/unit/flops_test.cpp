// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fsvg/errors.hpp"
#include "fsvg/flops.hpp"
#include "fsvg/model.hpp"

namespace fsvg {
namespace {

TEST(Schedule, VitbDenseIsConstant) {
  const auto s = flops::sequence_schedule(ModelConfig::vitb(), 1.0);
  ASSERT_EQ(s.size(), 12u);
  for (const auto& b : s) {
    EXPECT_EQ(b.mhsa_len, 654u);
    EXPECT_EQ(b.ffn_len, 654u);
  }
}

TEST(Schedule, VitbCompoundingAtPointSeven) {
  const auto s = flops::sequence_schedule(ModelConfig::vitb(), 0.7);
  const std::size_t extra = 1 + 77;
  // selection after blocks 4, 7 and 10: 576 -> 403 -> 282 -> 197
  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t before = i < 4 ? 576 : i < 7 ? 403 : i < 10 ? 282 : 197;
    const std::size_t after = i < 3 ? 576 : i < 6 ? 403 : i < 9 ? 282 : 197;
    EXPECT_EQ(s[i].mhsa_len, before + extra) << "block " << i + 1;
    EXPECT_EQ(s[i].ffn_len, after + extra) << "block " << i + 1;
  }
}

TEST(Schedule, ToySingleStage) {
  ModelConfig c = ModelConfig::toy();
  c.fs_layers = {2};
  const auto s = flops::sequence_schedule(c, 0.5);
  EXPECT_EQ(s[1].mhsa_len, 1 + 64 + c.max_text_len);
  EXPECT_EQ(s[1].ffn_len, 1 + 32 + c.max_text_len);
  EXPECT_EQ(s[3].mhsa_len, 1 + 32 + c.max_text_len);
}

TEST(LayerFlops, UnitScale) { EXPECT_EQ(flops::layer_flops(1, 1, 1, 1, 1).total(), 8u); }

TEST(LayerFlops, VitbDenseLayer) {
  const auto c = flops::layer_flops(654, 654, 768, 12, 4);
  const std::uint64_t expected = 12ull * 654 * 768 * 768 + 2ull * 654 * 654 * 768;
  EXPECT_EQ(c.total(), expected);
  EXPECT_NEAR(static_cast<double>(c.total()), 5.29e9, 0.01e9);
}

TEST(LayerFlops, RoughlyLinearInLength) {
  const double one = static_cast<double>(flops::layer_flops(100, 100, 4096, 1, 4).total());
  const double two = static_cast<double>(flops::layer_flops(200, 200, 4096, 1, 4).total());
  EXPECT_NEAR(two / one, 2.0, 0.02);
}

TEST(Table, VitbRatiosWithinTolerance) {
  const std::vector<double> rhos = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
  const std::vector<double> expected = {1.0, 139.2 / 157.2, 123.1 / 157.2, 109.5 / 157.2, 97.8 / 157.2, 87.9 / 157.2};
  const auto rows = flops::flops_table(ModelConfig::vitb(), rhos);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].ratio, 1.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(rows[i].ratio, expected[i], 0.03) << "rho " << rhos[i];
}

TEST(Table, NonCompoundingScheduleWouldMissHalf) {
  // Keeping 0.5 * 576 at every stage (no compounding) stays far above the measured ratio.
  const ModelConfig c = ModelConfig::vitb();
  const std::uint64_t extra = 78, d = 768;
  std::uint64_t dense = 0, flat = 0;
  for (std::size_t i = 1; i <= 12; ++i) {
    dense += flops::layer_flops(576 + extra, 576 + extra, d, 12, 4).total();
    const std::uint64_t before = i <= 4 ? 576 : 288, after = i < 4 ? 576 : 288;
    flat += flops::layer_flops(before + extra, after + extra, d, 12, 4).total();
  }
  const double flat_ratio = static_cast<double>(flat) / static_cast<double>(dense);
  EXPECT_GT(std::abs(flat_ratio - 87.9 / 157.2), 0.1);
  const auto rows = flops::flops_table(c, std::vector<double>{1.0, 0.5});
  EXPECT_LT(rows[1].ratio, flat_ratio);
}

TEST(Table, TotalIsSumOfParts) {
  for (double rho : {1.0, 0.7, 0.3}) {
    const auto b = flops::cost_breakdown(ModelConfig::vitb(), rho, {false, true});
    std::uint64_t sum = b.embedding;
    for (const auto& blk : b.blocks) sum += blk.cost.total();
    EXPECT_EQ(sum, b.total);
    EXPECT_EQ(b.embedding, 576ull * 16 * 16 * 3 * 768);
  }
}

TEST(Table, FlopsFlagDoubles) {
  const auto macs = flops::cost_breakdown(ModelConfig::toy(), 0.7);
  const auto fl = flops::cost_breakdown(ModelConfig::toy(), 0.7, {true, false});
  EXPECT_EQ(fl.total, 2 * macs.total);
}

TEST(Table, MonotoneInRho) {
  const ModelConfig c = ModelConfig::vitb();
  std::uint64_t prev = flops::cost_breakdown(c, 1.0).total;
  for (int i = 99; i >= 1; --i) {
    const std::uint64_t cur = flops::cost_breakdown(c, i / 100.0).total;
    EXPECT_LE(cur, prev) << i;
    prev = cur;
  }
}

TEST(RhoList, ParsesAndRejects) {
  EXPECT_EQ(flops::parse_rho_list("1.0,0.9, 0.5"), (std::vector<double>{1.0, 0.9, 0.5}));
  EXPECT_THROW(flops::parse_rho_list(""), ConfigError);
  EXPECT_THROW(flops::parse_rho_list("1.0,abc"), ConfigError);
  EXPECT_THROW(flops::parse_rho_list("0.0"), ConfigError);
  EXPECT_THROW(flops::parse_rho_list("1.2"), ConfigError);
  EXPECT_THROW(flops::parse_rho_list("0.5,,0.7"), ConfigError);
}

TEST(Format, TableAndJsonLines) {
  const auto rows = flops::flops_table(ModelConfig::vitb(), std::vector<double>{1.0, 0.5});
  const std::string table = flops::format_table(rows);
  EXPECT_NE(table.find("1.0000"), std::string::npos);
  const std::string json = flops::format_json_lines(rows);
  EXPECT_EQ(std::count(json.begin(), json.end(), '\n'), 2);
  EXPECT_NE(json.find("\"ratio\""), std::string::npos);
}

}  // namespace
}  // namespace fsvg
