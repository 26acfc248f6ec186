// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "fsvg/autodiff.hpp"
#include "fsvg/errors.hpp"
#include "fsvg/rng.hpp"
#include "fsvg/tensor.hpp"
#include "support/oracles.hpp"

namespace fsvg {
namespace {

using ad::Tape;
using ad::Var;
using TD = Tensor<double>;

TD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  TD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so relu's kink is never straddled.
TD away_from_zero(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  TD t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// sum(y * W) with a fixed random W, so every output element gets a distinct weight.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  Tape<double>& tape = *y.tape();
  return ad::sum(ad::mul(y, tape.constant(random_tensor(y.shape(), seed))));
}

TEST(Tensor, ShapeAndNumel) {
  TD t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FALSE(t.has_grad());
  t.zero_grad();
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.numel());
  EXPECT_THROW(TD({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, RankOneIsARow) {
  TD v = TD::vector({1, 2, 3});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 3u);
}

TEST(Tensor, CastPreservesValues) {
  TD t = TD::matrix({{0.5, -2.0}, {3.25, 4.0}});
  Tensor<float> f = t.cast<float>();
  EXPECT_EQ(f.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(static_cast<double>(f[i]), t[i]);
}

TEST(Matmul, IdentityReturnsOperand) {
  Tape<double> tape;
  TD b = random_tensor({3, 2}, 1);
  TD eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Var<double> y = ad::matmul(tape.constant(eye), tape.constant(b));
  EXPECT_TRUE(bitwise_equal(y.value(), b));
}

TEST(Matmul, ZeroOperandGivesZero) {
  Tape<double> tape;
  Var<double> y = ad::matmul(tape.constant(TD({2, 2})), tape.constant(random_tensor({2, 2}, 2)));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Tape<double> tape;
  Var<double> y = ad::matmul(tape.constant(TD::matrix({{1, 2}, {3, 4}})), tape.constant(TD::matrix({{5, 6}, {7, 8}})));
  EXPECT_EQ(y.value(), TD::matrix({{19, 22}, {43, 50}}));

  TD a = random_tensor({4, 5}, 3), b = random_tensor({5, 3}, 4);
  oracle::Mat ma(4, std::vector<double>(5)), mb(5, std::vector<double>(3));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 5; ++k) ma[i][k] = a(i, k);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 3; ++j) mb[k][j] = b(k, j);
  const oracle::Mat ref = oracle::matmul(ma, mb);
  Var<double> z = ad::matmul(tape.constant(a), tape.constant(b));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(z.value()(i, j), ref[i][j], 1e-12);
}

TEST(Matmul, InnerMismatchIsShapeError) {
  Tape<double> tape;
  EXPECT_THROW(ad::matmul(tape.constant(TD({2, 3})), tape.constant(TD({2, 3}))), ShapeError);
}

TEST(Softmax, EqualRowIsUniform) {
  Tape<double> tape;
  Var<double> y = ad::softmax_rows(tape.constant(TD::matrix({{2.5, 2.5, 2.5}})));
  for (double v : y.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LogTwoRow) {
  Tape<double> tape;
  Var<double> y = ad::softmax_rows(tape.constant(TD::matrix({{0.0, std::log(2.0)}})));
  EXPECT_NEAR(y.value()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(y.value()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantPerRow) {
  Tape<double> tape;
  TD x = random_tensor({4, 6}, 5, -3, 3);
  TD shifted = x;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) shifted(r, c) += 10.0 * static_cast<double>(r) - 7.0;
  Var<double> a = ad::softmax_rows(tape.constant(x));
  Var<double> b = ad::softmax_rows(tape.constant(shifted));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-14);
}

TEST(Softmax, RowsSumToOneAndEntriesInUnitInterval) {
  Tape<double> tape;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Var<double> y = ad::softmax_rows(tape.constant(random_tensor({5, 9}, seed, -30, 30)));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        const double v = y.value()(r, c);
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, MaskedColumnsGetExactlyZero) {
  Tape<double> tape;
  const std::vector<std::uint8_t> mask = {1, 0, 1, 0};
  Var<double> y = ad::softmax_rows(tape.constant(random_tensor({3, 4}, 9, -2, 2)), mask);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.value()(r, 1), 0.0);
    EXPECT_EQ(y.value()(r, 3), 0.0);
    EXPECT_NEAR(y.value()(r, 0) + y.value()(r, 2), 1.0, 1e-15);
  }
  EXPECT_THROW(ad::softmax_rows(tape.constant(TD({1, 2})), std::vector<std::uint8_t>{0, 0}), ContractError);
}

TEST(LayerNorm, ConstantRowGoesToZero) {
  Tape<double> tape;
  Var<double> y = ad::layernorm_rows(tape.constant(TD({2, 4}, 3.0)), tape.constant(TD({4}, 1.0)),
                                     tape.constant(TD({4}, 0.0)));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOneIsFixed) {
  Tape<double> tape;
  Var<double> y = ad::layernorm_rows(tape.constant(TD::matrix({{1.0, -1.0}})), tape.constant(TD({2}, 1.0)),
                                     tape.constant(TD({2}, 0.0)), 1e-12);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-10);
  EXPECT_NEAR(y.value()[1], -1.0, 1e-10);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  Tape<double> tape;
  TD beta = random_tensor({5}, 11);
  Var<double> y = ad::layernorm_rows(tape.constant(random_tensor({3, 5}, 12)), tape.constant(TD({5}, 0.0)),
                                     tape.constant(beta));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y.value()(r, c), beta[c]);
}

TEST(LayerNorm, MatchesOracle) {
  Tape<double> tape;
  TD x = random_tensor({4, 6}, 13, -2, 2), g = random_tensor({6}, 14), b = random_tensor({6}, 15);
  Var<double> y = ad::layernorm_rows(tape.constant(x), tape.constant(g), tape.constant(b));
  oracle::Mat mx(4, std::vector<double>(6));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) mx[r][c] = x(r, c);
  const oracle::Mat ref = oracle::layernorm(mx, {g.storage().begin(), g.storage().end()},
                                            {b.storage().begin(), b.storage().end()}, 1e-5);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(y.value()(r, c), ref[r][c], 1e-12);
}

TEST(LayerNorm, NonPositiveEpsRejected) {
  Tape<double> tape;
  EXPECT_THROW(ad::layernorm_rows(tape.constant(TD({1, 2})), tape.constant(TD({2}, 1.0)),
                                  tape.constant(TD({2})), 0.0),
               ContractError);
}

TEST(GatherRows, IdentityAndReverse) {
  Tape<double> tape;
  TD x = random_tensor({4, 3}, 16);
  const std::vector<std::size_t> id = {0, 1, 2, 3}, rev = {3, 2, 1, 0};
  EXPECT_TRUE(bitwise_equal(ad::gather_rows(tape.constant(x), std::span<const std::size_t>(id)).value(), x));
  Var<double> r = ad::gather_rows(tape.constant(x), std::span<const std::size_t>(rev));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r.value()(i, c), x(3 - i, c));
}

TEST(GatherRows, PicksListedRows) {
  Tape<double> tape;
  TD x = random_tensor({4, 2}, 17);
  const std::vector<std::size_t> idx = {1, 3};
  Var<double> y = ad::gather_rows(tape.constant(x), std::span<const std::size_t>(idx));
  ASSERT_EQ(y.shape(), (Shape{2, 2}));
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(y.value()(0, c), x(1, c));
    EXPECT_EQ(y.value()(1, c), x(3, c));
  }
}

TEST(GatherRows, OutOfRangeIsIndexError) {
  Tape<double> tape;
  const std::vector<std::size_t> idx = {0, 4};
  EXPECT_THROW(ad::gather_rows(tape.constant(TD({4, 2})), std::span<const std::size_t>(idx)), IndexError);
}

TEST(GatherRows, DuplicateIndicesAccumulate) {
  Tape<double> tape;
  TD x = random_tensor({3, 2}, 18);
  Var<double> v = tape.param(x);
  const std::vector<std::size_t> idx = {2, 0, 2, 2};
  Var<double> loss = ad::sum(ad::gather_rows(v, std::span<const std::size_t>(idx)));
  tape.backward(loss);
  tape.export_grad(x);
  const std::vector<double> expected = {1, 1, 0, 0, 3, 3};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(x.grad()[i], expected[i]);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  TD x = random_tensor({5}, 19);
  Var<double> loss = ad::sum(tape.param(x));
  tape.backward(loss);
  tape.export_grad(x);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Tape<double> tape;
  TD x = TD::vector({1.0, 2.0});
  Var<double> v = tape.param(x);
  tape.backward(ad::sum(ad::mul(v, v)));
  tape.export_grad(x);
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarIsContractError) {
  Tape<double> tape;
  Var<double> v = tape.variable(TD({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Backward, UnreachedParameterGetsZeroGrad) {
  Tape<double> tape;
  TD used = random_tensor({3}, 20), unused = random_tensor({3}, 21);
  Var<double> u = tape.param(used);
  tape.param(unused);
  tape.backward(ad::sum(u));
  tape.export_grad(unused);
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ReplayIsBitwiseRepeatable) {
  TD w = random_tensor({6, 6}, 22), x = random_tensor({4, 6}, 23);
  auto run = [&](TD& grad_out) {
    Tape<double> tape;
    TD wc = w;
    Var<double> y = ad::gelu(ad::matmul(tape.constant(x), tape.param(wc)));
    Var<double> loss = weighted_sum(ad::softmax_rows(y), 24);
    tape.backward(loss);
    tape.backward(loss);  // second call must not double the adjoints
    tape.export_grad(wc);
    grad_out = TD(wc.shape(), std::vector<double>(wc.grad().begin(), wc.grad().end()));
    return loss.value()[0];
  };
  TD g1, g2;
  const double l1 = run(g1), l2 = run(g2);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(l1), std::bit_cast<std::uint64_t>(l2));
  EXPECT_TRUE(bitwise_equal(g1, g2));
}

TEST(Backward, NonFiniteForwardIsNumericError) {
  Tape<double> tape;
  TD x = TD::vector({1.0, std::nan("")});
  EXPECT_THROW(ad::scale(tape.constant(x), 2.0), NumericError);
  EXPECT_THROW(ad::scale(tape.constant(TD::vector({1e308})), 1e10), NumericError);
}

// --- finite_diff_check --------------------------------------------------------

using Fn = std::function<Var<double>(Tape<double>&)>;

double check(const Fn& f, std::vector<TD*> params) {
  return ad::finite_diff_check<double>(f, std::span<TD* const>(params), 1e-5).max_rel_error;
}

TEST(FiniteDiff, QuadraticIsNearlyExact) {
  TD x = random_tensor({10}, 25), a = random_tensor({10}, 26);
  const Fn f = [&](Tape<double>& t) {
    Var<double> v = t.param(x);
    return ad::sum(ad::mul(ad::mul(v, v), t.constant(a)));
  };
  EXPECT_LT(check(f, {&x}), 1e-7);
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  TD x = random_tensor({4}, 27);
  const Fn f = [&](Tape<double>& t) {
    t.param(x);
    return ad::sum(t.constant(TD({3}, 2.0)));
  };
  ad::GradCheckReport r = ad::finite_diff_check<double>(f, std::span<TD* const>(std::vector<TD*>{&x}), 1e-5);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.checked, 4u);
}

// Each primitive on a randomized 100-element probe.
struct PrimitiveCase {
  const char* name;
  std::function<Var<double>(Tape<double>&, TD&, TD&)> build;
};

class PrimitiveGradient : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  TD x = away_from_zero({10, 10}, 30);
  TD y = away_from_zero({10, 10}, 31);
  const auto& c = GetParam();
  const Fn f = [&](Tape<double>& t) { return weighted_sum(c.build(t, x, y), 32); };
  EXPECT_LT(check(f, {&x, &y}), 1e-4) << c.name;
}

std::vector<PrimitiveCase> primitive_cases() {
  static const std::vector<std::size_t> gather = {3, 3, 0, 9, 5, 1, 7};
  static const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  auto row_of = [](Tape<double>& t, TD& y) { return ad::slice_rows(t.param(y), 4, 1); };
  return {
      {"add", [](auto& t, TD& x, TD& y) { return ad::add(t.param(x), t.param(y)); }},
      {"sub", [](auto& t, TD& x, TD& y) { return ad::sub(t.param(x), t.param(y)); }},
      {"mul", [](auto& t, TD& x, TD& y) { return ad::mul(t.param(x), t.param(y)); }},
      {"scale", [](auto& t, TD& x, TD& y) { return ad::add(ad::scale(t.param(x), -1.7), t.param(y)); }},
      {"shift", [](auto& t, TD& x, TD& y) { return ad::mul(ad::shift(t.param(x), 0.3), t.param(y)); }},
      {"add_row", [=](auto& t, TD& x, TD& y) { return ad::add_row(t.param(x), row_of(t, y)); }},
      {"mul_row", [=](auto& t, TD& x, TD& y) { return ad::mul_row(t.param(x), row_of(t, y)); }},
      {"relu", [](auto& t, TD& x, TD& y) { return ad::mul(ad::relu(t.param(x)), t.param(y)); }},
      {"gelu", [](auto& t, TD& x, TD& y) { return ad::mul(ad::gelu(t.param(x)), t.param(y)); }},
      {"sigmoid", [](auto& t, TD& x, TD& y) { return ad::mul(ad::sigmoid(t.param(x)), t.param(y)); }},
      {"sum", [](auto& t, TD& x, TD& y) { return ad::mul(ad::sum(ad::mul(t.param(x), t.param(y))), ad::sum(t.param(y))); }},
      {"mean", [](auto& t, TD& x, TD& y) { return ad::mul(ad::mean(ad::mul(t.param(x), t.param(x))), ad::mean(t.param(y))); }},
      {"sum_rows", [](auto& t, TD& x, TD& y) { return ad::mul(ad::sum_rows(t.param(x)), ad::sum_rows(t.param(y))); }},
      {"mean_rows", [](auto& t, TD& x, TD& y) { return ad::mul(ad::mean_rows(t.param(x)), ad::mean_rows(t.param(y))); }},
      {"transpose", [](auto& t, TD& x, TD& y) { return ad::mul(ad::transpose(t.param(x)), t.param(y)); }},
      {"matmul", [](auto& t, TD& x, TD& y) { return ad::matmul(t.param(x), t.param(y)); }},
      {"concat_rows", [](auto& t, TD& x, TD& y) {
         const std::array<Var<double>, 2> parts{t.param(x), ad::scale(t.param(y), 2.0)};
         return ad::concat_rows<double>(parts);
       }},
      {"slice_rows", [](auto& t, TD& x, TD& y) { return ad::mul(ad::slice_rows(t.param(x), 2, 5), ad::slice_rows(t.param(y), 5, 5)); }},
      {"concat_cols", [](auto& t, TD& x, TD& y) {
         const std::array<Var<double>, 2> parts{ad::mul(t.param(x), t.param(y)), t.param(y)};
         return ad::concat_cols<double>(parts);
       }},
      {"slice_cols", [](auto& t, TD& x, TD& y) { return ad::mul(ad::slice_cols(t.param(x), 1, 6), ad::slice_cols(t.param(y), 4, 6)); }},
      {"gather_rows", [](auto& t, TD& x, TD& y) {
         return ad::mul(ad::gather_rows(t.param(x), std::span<const std::size_t>(gather)),
                        ad::gather_rows(t.param(y), std::span<const std::size_t>(gather)));
       }},
      {"softmax_rows", [](auto& t, TD& x, TD& y) { return ad::softmax_rows(ad::mul(t.param(x), t.param(y))); }},
      {"softmax_masked", [](auto& t, TD& x, TD& y) {
         return ad::softmax_rows(ad::scale(t.param(x), 3.0), std::span<const std::uint8_t>(mask));
       }},
      {"layernorm_rows", [](auto& t, TD& x, TD& y) {
         return ad::layernorm_rows(ad::mul(t.param(x), t.param(y)), ad::slice_rows(t.param(y), 0, 1),
                                   ad::slice_rows(t.param(x), 9, 1));
       }},
  };
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(FiniteDiff, CompositeGraph) {
  TD w1 = random_tensor({6, 8}, 40, -0.5, 0.5), w2 = random_tensor({8, 3}, 41, -0.5, 0.5);
  TD g = random_tensor({8}, 42, 0.5, 1.5), b = random_tensor({8}, 43);
  TD x = random_tensor({5, 6}, 44);
  const Fn f = [&](Tape<double>& t) {
    Var<double> h = ad::matmul(t.constant(x), t.param(w1));
    h = ad::gelu(ad::layernorm_rows(h, t.param(g), t.param(b)));
    Var<double> s = ad::softmax_rows(ad::matmul(h, ad::transpose(h)));
    return weighted_sum(ad::matmul(ad::matmul(s, h), t.param(w2)), 45);
  };
  EXPECT_LT(check(f, {&w1, &w2, &g, &b}), 1e-4);
}

}  // namespace
}  // namespace fsvg
