// Copyright 2026  The drvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "drv/grad_check.hpp"
#include "drv/ops.hpp"
#include "drv/rng.hpp"
#include "test_util.hpp"

namespace drv {
namespace {

using T = Tensor<double>;

TEST(MatMul, IdentityZeroAndProduct) {
  Tape<double> tape(false);
  T eye = T::Matrix(2, 2, {1, 0, 0, 1});
  T b = T::Matrix(2, 2, {5, 6, 7, 8});
  EXPECT_EQ(ToVector(MatMul(tape, eye, b)), (std::vector<double>{5, 6, 7, 8}));

  T zeros({2, 3});
  T any = T::Matrix(3, 2, {1, -2, 3, 4, 5, 6});
  EXPECT_EQ(ToVector(MatMul(tape, zeros, any)), std::vector<double>(4, 0.0));

  // Triple-loop oracle: [[1,2],[3,4]] x [[5,6],[7,8]].
  T a = T::Matrix(2, 2, {1, 2, 3, 4});
  std::vector<double> expected(4, 0.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) expected[i * 2 + j] += a(i, k) * b(k, j);
  EXPECT_EQ(expected, (std::vector<double>{19, 22, 43, 50}));
  EXPECT_EQ(ToVector(MatMul(tape, a, b)), expected);
}

TEST(MatMul, ShapeMismatchNamesBothShapes) {
  Tape<double> tape(false);
  try {
    MatMul(tape, T({2, 3}), T({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Activation, Values) {
  Tape<double> tape(false);
  EXPECT_DOUBLE_EQ(LeakyRelu(tape, T::Scalar(-1.0)).Item(), -0.2);
  EXPECT_DOUBLE_EQ(LeakyRelu(tape, T::Scalar(2.0)).Item(), 2.0);
  EXPECT_DOUBLE_EQ(Tanh(tape, T::Scalar(0.0)).Item(), 0.0);
  EXPECT_DOUBLE_EQ(Sigmoid(tape, T::Scalar(0.0)).Item(), 0.5);
}

TEST(Activation, LeakyReluDerivativeAtZeroIsAlpha) {
  T x = T::Scalar(0.0, true);
  Tape<double> tape;
  tape.Backward(LeakyRelu(tape, x));
  EXPECT_DOUBLE_EQ(x.Grad()[0], 0.2);
}

TEST(Concat, JoinsAndSplitsGradient) {
  Tape<double> tape(false);
  T a({2}, {1, 2});
  T b({3}, {3, 4, 5});
  EXPECT_EQ(ToVector(Concat(tape, {a, b}, 0)), (std::vector<double>{1, 2, 3, 4, 5}));
  T single = Concat(tape, {a}, 0);
  EXPECT_EQ(ToVector(single), ToVector(a));

  // Weighted sum of the concatenation: each input must receive exactly its
  // segment of the upstream gradient.
  const std::vector<double> w = {0.5, -1.0, 2.0, 3.0, -0.25};
  auto f = [&](Tape<double>& t, const T& x) {
    T left = Slice(t, x, 0, 0, 2);
    T right = Slice(t, x, 0, 2, 5);
    return Sum(t, Mul(t, Concat(t, {left, right}, 0), T({5}, w)));
  };
  T x({5}, {0.1, 0.2, 0.3, 0.4, 0.5}, true);
  Tape<double> rec;
  rec.Backward(f(rec, x));
  EXPECT_EQ(ToVector(x.Grad()), w);
  EXPECT_LT(GradCheck(f, x), 1e-9);
}

TEST(Concat, MismatchedNonAxisDimension) {
  Tape<double> tape(false);
  EXPECT_THROW(Concat(tape, {T({2, 3}), T({2, 4})}, 0), DimensionError);
  EXPECT_NO_THROW(Concat(tape, {T({2, 3}), T({2, 4})}, 1));
}

TEST(Reduce, MeanSumAndBackward) {
  Tape<double> tape(false);
  EXPECT_DOUBLE_EQ(Mean(tape, T({3}, {1, 2, 3})).Item(), 2.0);
  EXPECT_DOUBLE_EQ(Sum(tape, T({4})).Item(), 0.0);
  EXPECT_THROW(Mean(tape, T({3}), std::size_t{1}), DimensionError);

  T x({4}, {1, -2, 3, 7}, true);
  Tape<double> rec;
  T m = Mean(rec, x);
  T root = Affine(rec, m, 3.0);  // upstream g = 3 on the mean
  rec.Backward(root);
  for (double g : x.Grad()) EXPECT_DOUBLE_EQ(g, 3.0 / 4.0);
  EXPECT_LT(GradCheck([](Tape<double>& t, const T& v) { return Mean(t, v); }, x), 1e-9);

  T mat = T::Matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(ToVector(Sum(tape, mat, std::size_t{0})), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(ToVector(Mean(tape, mat, std::size_t{1})), (std::vector<double>{2, 5}));
}

TEST(Backward, IdentityAndSquare) {
  T x = T::Scalar(3.0, true);
  Tape<double> tape;
  tape.Backward(x);
  EXPECT_DOUBLE_EQ(x.Grad()[0], 1.0);

  T v({2}, {1, 2}, true);
  Tape<double> t2;
  t2.Backward(Sum(t2, Mul(t2, v, v)));
  EXPECT_EQ(ToVector(v.Grad()), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarRoot) {
  T v({2}, {1, 2}, true);
  Tape<double> tape;
  T y = Affine(tape, v, 2.0);
  EXPECT_THROW(tape.Backward(y), ContractError);
}

TEST(Backward, AccumulatesAcrossUses) {
  // f(x) = sum(x*x + 3x) using x three times versus the same function on
  // separate copies whose gradients are summed.
  Rng rng(5);
  std::vector<double> xs = RandomVector(rng, 6);
  T x({6}, xs, true);
  Tape<double> tape;
  tape.Backward(Sum(tape, Add(tape, Mul(tape, x, x), Affine(tape, x, 3.0))));

  T a({6}, xs, true), b({6}, xs, true), c({6}, xs, true);
  Tape<double> t2;
  t2.Backward(Sum(t2, Add(t2, Mul(t2, a, b), Affine(t2, c, 3.0))));
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_DOUBLE_EQ(x.Grad()[i], a.Grad()[i] + b.Grad()[i] + c.Grad()[i]);
}

TEST(Tape, TopologicalOrderAndSingleVisit) {
  T x({3}, {0.1, 0.2, 0.3}, true);
  Tape<double> tape;
  T y = Tanh(tape, x);
  T z = Mul(tape, y, x);
  T s = Sum(tape, z);
  for (std::size_t k = 0; k < tape.NumNodes(); ++k)
    for (long p : tape.ParentIndices(k)) EXPECT_LT(p, static_cast<long>(k));
  tape.Backward(s);
  EXPECT_EQ(tape.LastBackwardVisits(), tape.NumNodes());
}

TEST(GradCheck, SumIsExact) {
  Rng rng(1);
  T x({7}, RandomVector(rng, 7));
  EXPECT_LT(GradCheck([](Tape<double>& t, const T& v) { return Sum(t, v); }, x), 1e-10);
}

TEST(GradCheck, SumTanh) {
  Rng rng(2);
  T x({9}, RandomVector(rng, 9));
  EXPECT_LT(GradCheck([](Tape<double>& t, const T& v) { return Sum(t, Tanh(t, v)); }, x), 1e-7);
}

// Every primitive under a random weighted-sum readout.
class PrimitiveGradTest : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradTest, MatchesFiniteDifferences) {
  Rng rng(100 + GetParam());
  const std::vector<double> w = RandomVector(rng, 32);
  const T other = T::Matrix(3, 4, RandomVector(rng, 12));
  const T bias = T::Matrix(1, 4, RandomVector(rng, 4));
  const T sq = T::Matrix(4, 3, RandomVector(rng, 12));
  auto readout = [&](Tape<double>& t, const T& y) {
    std::vector<double> ww(w.begin(), w.begin() + y.Size());
    return Sum(t, Mul(t, Reshape(t, y, {y.Size()}), T({y.Size()}, ww)));
  };
  std::vector<ScalarFn> fns = {
      [&](Tape<double>& t, const T& x) { return readout(t, MatMul(t, x, sq)); },
      [&](Tape<double>& t, const T& x) { return readout(t, MatMul(t, sq, x)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Transpose(t, x)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Add(t, x, other)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Mul(t, x, other)); },
      [&](Tape<double>& t, const T& x) { return readout(t, AddRowVector(t, x, bias)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Tanh(t, x)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Sigmoid(t, x)); },
      [&](Tape<double>& t, const T& x) { return readout(t, LeakyRelu(t, x)); },
      [&](Tape<double>& t, const T& x) { return readout(t, Sum(t, x, std::size_t{1})); },
      [&](Tape<double>& t, const T& x) { return readout(t, Mean(t, x, std::size_t{0})); },
      [&](Tape<double>& t, const T& x) { return readout(t, Slice(t, x, 1, 1, 3)); },
      [&](Tape<double>& t, const T& x) { return readout(t, GatherRows(t, x, {2, 0, 2})); },
      [&](Tape<double>& t, const T& x) { return readout(t, Concat(t, {x, other}, 0)); },
      [&](Tape<double>& t, const T& x) {
        return readout(t, ScaleRows(t, x, Slice(t, x, 1, 0, 1)));
      },
      [&](Tape<double>& t, const T& x) {
        return readout(t, MulScalar(t, x, Slice(t, Reshape(t, x, {12}), 0, 5, 6)));
      },
      [&](Tape<double>& t, const T& x) {
        return readout(t, AddScalar(t, x, Slice(t, Reshape(t, x, {12}), 0, 7, 8)));
      },
      [&](Tape<double>& t, const T& x) { return readout(t, NormalizeRows(t, x, 1e-12)); },
      [&](Tape<double>& t, const T& x) {
        return readout(t, Reciprocal(t, Sqrt(t, Affine(t, Mul(t, x, x), 1.0, 0.5))));
      },
  };
  ASSERT_LT(static_cast<std::size_t>(GetParam()), fns.size());
  // Keep leaky-ReLU inputs away from the kink.
  std::vector<double> xs = RandomVector(rng, 12);
  for (double& v : xs)
    if (std::abs(v) < 1e-2) v += 0.05;
  T x = T::Matrix(3, 4, xs);
  EXPECT_LT(GradCheck(fns[GetParam()], x), 1e-6) << "primitive #" << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGradTest, ::testing::Range(0, 19));

TEST(Determinism, BitIdenticalRepeats) {
  auto run = []() {
    Rng rng(77);
    T x = T::Matrix(4, 5, RandomVector(rng, 20), true);
    T w = T::Matrix(5, 3, RandomVector(rng, 15), true);
    Tape<double> tape;
    T y = Sum(tape, Tanh(tape, MatMul(tape, x, w)));
    tape.Backward(y);
    std::vector<double> out = ToVector(x.Grad());
    out.push_back(y.Item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(T({0, 2}), DimensionError);
  EXPECT_THROW(T({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  T t({2, 3}, true);
  EXPECT_EQ(t.Grad().size(), t.Size());
}

}  // namespace
}  // namespace drv
