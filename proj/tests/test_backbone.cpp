#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "bdm/autodiff.hpp"
#include "bdm/parameter.hpp"
#include "bdm/tensor.hpp"
#include "test_util.hpp"

using namespace bdm;
using bdm::testing::random_tensor;

namespace {

Tensor2 triple_loop(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor2 a = Tensor2::from_rows({{1.5, -2}, {3, 4.25}});
  EXPECT_EQ(matmul(Tensor2::identity(2), a), a);
}

TEST(Matmul, HandSum) {
  const Tensor2 r = matmul(Tensor2::from_rows({{1, 2}, {3, 4}}), Tensor2::from_rows({{1}, {1}}));
  EXPECT_EQ(r, Tensor2::from_rows({{3}, {7}}));
}

TEST(Matmul, RandomMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  const Tensor2 a = random_tensor(5, 4, rng), b = random_tensor(4, 3, rng);
  const Tensor2 r = matmul(a, b), o = triple_loop(a, b);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r.values()[i], o.values()[i], 1e-12);
}

TEST(Matmul, BitwiseEqualToTripleLoopForSmallDims) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor2 a = random_tensor(m, k, rng), b = random_tensor(k, n, rng);
    ASSERT_EQ(matmul(a, b), triple_loop(a, b)) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor2(2, 3), Tensor2(2, 3)), DimensionError);
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor2(2, 3)), t.constant(Tensor2(2, 3))), DimensionError);
}

TEST(Matmul, TapedValueEqualsPlainProduct) {
  std::mt19937_64 rng(3);
  const Tensor2 a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
  Tape t;
  EXPECT_EQ(matmul(t.constant(a), t.constant(b)).value(), matmul(a, b));
}

TEST(Backward, SumGivesAllOnes) {
  ParameterStore store;
  Parameter* w = store.add("w", Tensor2(3, 2, 0.7));
  Tape t;
  t.backward(sum_all(t.param(*w)));
  EXPECT_EQ(w->gradient, Tensor2(3, 2, 1.0));
}

TEST(Backward, SquareOfScalar) {
  Tape t;
  Var x = t.variable(Tensor2::scalar(3.0));
  t.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Backward, AccumulatesAcrossCalls) {
  ParameterStore store;
  Parameter* w = store.add("w", Tensor2::scalar(2.0));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    Var v = t.param(*w);
    t.backward(mul(v, v));
  }
  EXPECT_DOUBLE_EQ(w->gradient.item(), 8.0);
}

TEST(Backward, NonScalarRootThrows) {
  Tape t;
  Var x = t.variable(Tensor2(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, InferenceTapeRefusesBackward) {
  Tape t(false);
  Var x = t.variable(Tensor2::scalar(1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, SharedParameterNodeSumsBothUses) {
  ParameterStore store;
  Parameter* w = store.add("w", Tensor2::scalar(1.5));
  Tape t;
  t.backward(add(t.param(*w), scale(t.param(*w), 3.0)));
  EXPECT_DOUBLE_EQ(w->gradient.item(), 4.0);
}

TEST(Sgd, PlainStep) {
  Parameter p("p", Tensor2::scalar(1.0));
  p.gradient(0, 0) = 0.5;
  Parameter* ps[] = {&p};
  sgd_step(ps, {0.1, 1});
  EXPECT_DOUBLE_EQ(p.value.item(), 0.95);
  EXPECT_EQ(p.gradient.item(), 0.0);
}

TEST(Sgd, GradientMultiplier25) {
  Parameter p("p", Tensor2::scalar(1.0), 25.0);
  p.gradient(0, 0) = 0.5;
  Parameter* ps[] = {&p};
  sgd_step(ps, {0.1, 1});
  EXPECT_NEAR(p.value.item(), -0.25, 1e-15);
}

TEST(Sgd, ZeroGradientLeavesValue) {
  Parameter p("p", Tensor2(2, 2, 0.3));
  Parameter* ps[] = {&p};
  sgd_step(ps, {0.5, 1});
  EXPECT_EQ(p.value, Tensor2(2, 2, 0.3));
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
  Parameter a("good", Tensor2::scalar(1.0)), b("bad.table", Tensor2::scalar(1.0));
  b.gradient(0, 0) = std::nan("");
  Parameter* ps[] = {&a, &b};
  try {
    sgd_step(ps, {0.1, 1});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.table"), std::string::npos);
  }
  EXPECT_EQ(a.value.item(), 1.0);
}

TEST(Sgd, InvalidConfigAndMultiplierRejected) {
  EXPECT_THROW((SgdConfig{0.0, 1}.validate()), ContractError);
  EXPECT_THROW((SgdConfig{0.1, 0}.validate()), ContractError);
  EXPECT_THROW(Parameter("p", Tensor2::scalar(0.0), 0.0), ContractError);
}

TEST(SgdProperty, MultiplierEqualsPrescaledGradient) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> mult(0.1, 50.0), lr(1e-4, 0.5);
  for (int c = 0; c < 1000; ++c) {
    const Tensor2 v = random_tensor(2, 3, rng), g = random_tensor(2, 3, rng);
    const double m = mult(rng);
    const SgdConfig cfg{lr(rng), 1};
    Parameter a("a", v, m), b("b", v, 1.0);
    a.gradient = g;
    b.gradient = g;
    for (double& x : b.gradient.values()) x *= m;
    Parameter* pa[] = {&a};
    Parameter* pb[] = {&b};
    sgd_step(pa, cfg);
    sgd_step(pb, cfg);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(a.value.values()[i], b.value.values()[i], 1e-12);
  }
}

TEST(Checkpoint, RoundTripAsFloat32) {
  bdm::testing::TempDir dir;
  std::mt19937_64 rng(5);
  ParameterStore a, b;
  a.add("x", random_tensor(3, 4, rng));
  a.add("y.bias", random_tensor(1, 4, rng));
  b.add("x", Tensor2(3, 4));
  b.add("y.bias", Tensor2(1, 4));
  save_checkpoint(a, dir / "m.ckpt");
  load_checkpoint(b, dir / "m.ckpt");
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < a.all()[p]->value.size(); ++i)
      EXPECT_EQ(b.all()[p]->value.values()[i], static_cast<double>(static_cast<float>(a.all()[p]->value.values()[i])));
}

TEST(Checkpoint, StartsWithMagic) {
  bdm::testing::TempDir dir;
  ParameterStore a;
  a.add("x", Tensor2(1, 1));
  save_checkpoint(a, dir / "m.ckpt");
  EXPECT_EQ(bdm::testing::read_file(dir / "m.ckpt").substr(0, 4), "BDM1");
}

TEST(Checkpoint, MismatchesRejected) {
  bdm::testing::TempDir dir;
  ParameterStore a, wrong_shape, missing;
  a.add("x", Tensor2(2, 2));
  wrong_shape.add("x", Tensor2(2, 3));
  missing.add("x", Tensor2(2, 2));
  missing.add("z", Tensor2(1, 1));
  save_checkpoint(a, dir / "m.ckpt");
  EXPECT_THROW(load_checkpoint(wrong_shape, dir / "m.ckpt"), DimensionError);
  EXPECT_THROW(load_checkpoint(missing, dir / "m.ckpt"), ValidationError);
  bdm::testing::write_file(dir / "bad.ckpt", "XXXX");
  EXPECT_THROW(load_checkpoint(a, dir / "bad.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(a, dir / "none.ckpt"), Error);
}

TEST(Checksum, ChangesWithValues) {
  ParameterStore a;
  Parameter* p = a.add("x", Tensor2(2, 2, 1.0));
  const auto before = checksum(a);
  EXPECT_EQ(before, checksum(a));
  p->value(1, 1) = 1.0000001;
  EXPECT_NE(before, checksum(a));
}

TEST(Ops, LayerNormRowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(6);
  Tape t;
  Var y = layer_norm(t.constant(random_tensor(4, 6, rng)), t.constant(Tensor2(1, 6, 1.0)), t.constant(Tensor2(1, 6)));
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (double x : y.value().row(r)) m += x / 6;
    for (double x : y.value().row(r)) v += (x - m) * (x - m) / 6;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(Ops, MaskedSoftmaxIgnoresPaddedColumns) {
  Tape t;
  Var p = softmax_rows(t.constant(Tensor2::from_rows({{1, 2, 100}, {0, 0, -5}})), 2);
  EXPECT_NEAR(p.value()(0, 0) + p.value()(0, 1), 1.0, 1e-15);
  EXPECT_EQ(p.value()(0, 2), 0.0);
  EXPECT_NEAR(p.value()(1, 0), 0.5, 1e-15);
}

TEST(Ops, SegmentMeanEqualsPerSegmentMean) {
  std::mt19937_64 rng(7);
  const Tensor2 x = random_tensor(7, 5, rng);
  Tape t;
  Var all = segment_mean_rows(t.constant(x), {0, 3, 4, 7});
  const std::size_t bounds[] = {0, 3, 4, 7};
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor2 part(bounds[s + 1] - bounds[s], 5);
    for (std::size_t r = 0; r < part.rows(); ++r)
      std::copy(x.row(bounds[s] + r).begin(), x.row(bounds[s] + r).end(), part.row(r).begin());
    Var one = mean_rows(t.constant(part));
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(all.value()(s, c), one.value()(0, c));
  }
  EXPECT_THROW(segment_mean_rows(t.constant(x), {0, 3, 3, 7}), ContractError);
  EXPECT_THROW(segment_mean_rows(t.constant(x), {0, 6}), ContractError);
}

TEST(Ops, GatherSumRejectsOutOfRangeIds) {
  Tape t;
  EXPECT_THROW(gather_sum(t.constant(Tensor2(3, 2)), {{0, 3}}), ContractError);
}
