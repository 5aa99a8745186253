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

// Embedding network and scoring head.

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "drv/grad_check.hpp"
#include "drv/model.hpp"
#include "head_oracle.hpp"
#include "test_util.hpp"

namespace drv {
namespace {

EmbedderConfig TinyEmbedder() { return {2, 6, 4, 5, 3}; }

Tensor<double> RandomFeatures(Rng& rng, std::size_t frames, std::size_t dim) {
  return Tensor<double>({frames, dim}, RandomVector(rng, frames * dim));
}

TEST(LstmP, ZeroParametersGiveZeroOutput) {
  LstmPLayer<double> layer(3, 5, 2);
  Rng rng(1);
  Tape<double> tape(false);
  const auto out = LstmPForward(tape, layer, RandomFeatures(rng, 7, 3));
  EXPECT_EQ(out.shape(), (Shape{7, 2}));
  for (double v : out.Values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmP, SingleStepIsOneCell) {
  Rng rng(2);
  Embedder<double> emb({1, 5, 3, 4, 2});
  emb.Initialize(rng);
  const LstmPLayer<double>& l = emb.layers()[0];
  const std::vector<double> x = RandomVector(rng, 2);
  Tape<double> tape(false);
  const auto out = LstmPForward(tape, l, Tensor<double>({1, 2}, x));
  // Direct cell step from zero state: c = i*g, r = tanh((o*tanh c) P).
  auto pre = [&](const Tensor<double>& w, const Tensor<double>& b, std::size_t j) {
    double s = b[j];
    for (std::size_t k = 0; k < 2; ++k) s += x[k] * w(k, j);
    return s;
  };
  auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
  std::vector<double> h(5);
  for (std::size_t j = 0; j < 5; ++j) {
    const double c = sig(pre(l.w_input, l.b_input, j)) * std::tanh(pre(l.w_cell, l.b_cell, j));
    h[j] = sig(pre(l.w_output, l.b_output, j)) * std::tanh(c);
  }
  for (std::size_t p = 0; p < 3; ++p) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += h[j] * l.projection(j, p);
    EXPECT_NEAR(out(0, p), std::tanh(s), 1e-14);
  }
}

TEST(LstmP, OutputsInOpenUnitInterval) {
  Rng rng(3);
  Embedder<double> emb({2, 8, 4, 4, 3});
  emb.Initialize(rng);
  Tape<double> tape(false);
  auto seq = LstmPForward(tape, emb.layers()[0], RandomFeatures(rng, 20, 3));
  seq = LstmPForward(tape, emb.layers()[1], seq);
  for (double v : seq.Values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(LstmP, DimensionMismatch) {
  LstmPLayer<double> layer(3, 5, 2);
  Tape<double> tape(false);
  EXPECT_THROW(LstmPForward(tape, layer, Tensor<double>(Shape{4, 2})), DimensionError);
}

TEST(LstmP, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Embedder<double> emb({1, 5, 3, 4, 3});
  emb.Initialize(rng);
  const LstmPLayer<double>& l = emb.layers()[0];
  const Tensor<double> x = RandomFeatures(rng, 6, 3);
  std::vector<Tensor<double>> params;
  for (auto& [name, t] : l.Parameters("")) params.push_back(t);
  const double err = GradCheckParams(
      [&](Tape<double>& tape) { return Sum(tape, LstmPForward(tape, l, x)); }, params);
  EXPECT_LT(err, 1e-4);
  EXPECT_LT(GradCheck([&](Tape<double>& tape, const Tensor<double>& in) {
              return Sum(tape, LstmPForward(tape, l, in));
            }, x),
            1e-4);
}

TEST(Embedder, ZeroParametersGiveZeroEmbedding) {
  Embedder<double> emb(TinyEmbedder());
  Rng rng(5);
  Tape<double> tape(false);
  const auto out = emb.Embed(tape, RandomFeatures(rng, 4, 3));
  for (double v : out.Values()) EXPECT_EQ(v, 0.0);
}

TEST(Embedder, DependsOnLastFrame) {
  Rng rng(6);
  Embedder<double> emb(TinyEmbedder());
  emb.Initialize(rng);
  const Tensor<double> x = RandomFeatures(rng, 5, 3);
  std::vector<double> longer = ToVector(x);
  for (double v : RandomVector(rng, 3)) longer.push_back(v);
  Tape<double> tape(false);
  EXPECT_NE(ToVector(emb.Embed(tape, x)), ToVector(emb.Embed(tape, Tensor<double>({6, 3}, longer))));
  EXPECT_EQ(ToVector(emb.Embed(tape, x)), ToVector(emb.Embed(tape, x)));
}

TEST(Embedder, Errors) {
  Embedder<double> emb(TinyEmbedder());
  Tape<double> tape(false);
  EXPECT_THROW(emb.Embed(tape, Tensor<double>(Shape{4, 2})), DimensionError);
  EXPECT_THROW(emb.EmbedBatch(tape, {}), DataError);
  EXPECT_THROW(Embedder<double>({0, 4, 2, 2, 3}), ConfigError);
  EXPECT_THROW(Embedder<double>({1, 4, 8, 2, 3}), ConfigError);
}

TEST(Embedder, InitializationConventions) {
  Rng rng(7);
  Embedder<double> emb(EmbedderConfig::Desk());
  emb.Initialize(rng);
  for (const auto& l : emb.layers()) {
    for (double v : l.b_forget.Values()) EXPECT_EQ(v, 1.0);
    for (double v : l.b_input.Values()) EXPECT_EQ(v, 0.0);
    const double bound = 1 / std::sqrt(double(l.input_dim + l.proj_dim));
    for (double v : l.w_cell.Values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Embedder, FullGradientCheck) {
  Rng rng(8);
  Embedder<double> emb(EmbedderConfig::Desk());
  emb.Initialize(rng);
  const Tensor<double> x = RandomFeatures(rng, 5, 40);
  std::vector<Tensor<double>> params;
  for (auto& [name, t] : emb.Parameters()) params.push_back(t);
  Rng wr(9);
  const Tensor<double> weights({1, 32}, RandomVector(wr, 32));
  const double err = GradCheckParams(
      [&](Tape<double>& tape) { return Sum(tape, Mul(tape, emb.Embed(tape, x), weights)); }, params);
  EXPECT_LT(err, 1e-4);
}

TEST(Embedder, ParameterCountFormula) {
  for (const EmbedderConfig& c : {EmbedderConfig::Desk(), EmbedderConfig::Paper(), TinyEmbedder()}) {
    Embedder<float> emb(c);
    EXPECT_EQ(CountParameters(emb.Parameters()), c.ParameterCount());
  }
}

TEST(EnrollAverage, Arithmetic) {
  DrVector<double> a{{1, 3}, 1}, b{{3, 1}, 1};
  const auto m = EnrollAverage<double>({a, b});
  EXPECT_EQ(m.values, (std::vector<double>{2, 2}));
  EXPECT_EQ(m.d, 1u);
  EXPECT_EQ(EnrollAverage<double>({a}).values, a.values);
  EXPECT_EQ(EnrollAverage<double>({a, a, a}).values, a.values);
  EXPECT_THROW(EnrollAverage<double>(std::vector<DrVector<double>>{}), DataError);
  EXPECT_THROW(EnrollAverage<double>({a, DrVector<double>{{1, 2, 3}, 1}}), DimensionError);
  Tape<double> tape(false);
  EXPECT_THROW(EnrollAverage<double>(tape, {}), DataError);
}

// --- head ---

TEST(Switches, Validation) {
  EXPECT_NO_THROW(SwitchConfig::Make(true, false, false, 4).Validate(4));
  EXPECT_NO_THROW(SwitchConfig::Make(false, false, true, 0).Validate(4));
  EXPECT_THROW(SwitchConfig::Make(false, false, false, 4).Validate(4), ConfigError);
  EXPECT_THROW(SwitchConfig::Make(true, true, false, 4).Validate(4), ConfigError);
  EXPECT_THROW(SwitchConfig::Make(true, false, false, 0).Validate(4), ConfigError);
  EXPECT_THROW(SwitchConfig::Make(false, true, true, 0).Validate(4), ConfigError);
  EXPECT_THROW(SwitchConfig::Make(true, false, true, 5).Validate(4), ConfigError);
  EXPECT_EQ(SwitchConfig::Make(true, false, true, 3).Label(), "A=ON,B=OFF,C=ON,d=3");
  HeadConfig h;
  h.switches = SwitchConfig::Make(false, true, false, 2);
  EXPECT_THROW(DrHead<double>(h, 4), ConfigError);
}

double Cos(std::vector<double> e, std::vector<double> t, std::size_t d) {
  Tape<double> tape(false);
  const std::size_t n = e.size();
  return CosineScore(tape, Tensor<double>({1, n}, e), Tensor<double>({1, n}, t), d).Item();
}

// The norm guard costs about 1e-12 relative.
TEST(Cosine, Examples) {
  EXPECT_NEAR(Cos({0.3, -2, 5}, {0.3, -2, 5}, 3), 1.0, 1e-11);
  EXPECT_EQ(Cos({1, 0}, {0, 1}, 2), 0.0);
  EXPECT_NEAR(Cos({3, 4}, {4, 3}, 2), 0.96, 1e-11);
  EXPECT_NEAR(Cos({3, 4, 100}, {4, 3, -7}, 2), 0.96, 1e-11);
  EXPECT_EQ(Cos({0, 0}, {1, 2}, 2), 0.0);
  EXPECT_TRUE(std::isfinite(Cos({0, 0}, {0, 0}, 2)));
}

TEST(Cosine, ScaleInvariantAndSymmetric) {
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng.Below(8), d = 1 + rng.Below(n);
    auto e = RandomVector(rng, n), t = RandomVector(rng, n);
    const double a = rng.Uniform(0.01, 100), b = rng.Uniform(0.01, 100);
    auto es = e, ts = t;
    for (std::size_t k = 0; k < d; ++k) {
      es[k] *= a;
      ts[k] *= b;
    }
    EXPECT_NEAR(Cos(es, ts, d), Cos(e, t, d), 1e-9);
    EXPECT_EQ(Cos(t, e, d), Cos(e, t, d));
    EXPECT_LE(std::abs(Cos(e, t, d)), 1.0 + 1e-15);
  }
}

TEST(Cosine, GradientWithEpsilonGuard) {
  Rng rng(11);
  const Tensor<double> t({1, 5}, RandomVector(rng, 5));
  const double err = GradCheck(
      [&](Tape<double>& tape, const Tensor<double>& e) { return Sum(tape, CosineScore(tape, e, t, 3)); },
      Tensor<double>({1, 5}, RandomVector(rng, 5)));
  EXPECT_LT(err, 1e-4);
}

DrHead<double> MakeHead(SwitchConfig s, std::size_t dim, std::uint64_t seed, std::size_t hidden = 7) {
  HeadConfig h;
  h.switches = s;
  h.hidden_dim = hidden;
  DrHead<double> head(h, dim);
  Rng rng(seed);
  head.Initialize(rng);
  return head;
}

TEST(DecisionNet, ZeroReadoutGivesZero) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(false, false, true, 0), 4, 12);
  auto net = head.network();
  FillConstant(net.readout_weight, 0.0);
  FillConstant(net.readout_bias, 0.0);
  Rng rng(13);
  Tape<double> tape(false);
  const Tensor<double> e({1, 4}, RandomVector(rng, 4)), t({1, 4}, RandomVector(rng, 4));
  EXPECT_EQ(DecisionNetScore(tape, e, t, std::optional<Tensor<double>>{}, net).Item(), 0.0);
}

TEST(DecisionNet, Asymmetric) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(false, false, true, 0), 4, 14);
  Rng rng(15);
  Tape<double> tape(false);
  const Tensor<double> e({1, 4}, RandomVector(rng, 4)), t({1, 4}, RandomVector(rng, 4));
  EXPECT_NE(DecisionNetScore(tape, e, t, std::optional<Tensor<double>>{}, head.network()).Item(),
            DecisionNetScore(tape, t, e, std::optional<Tensor<double>>{}, head.network()).Item());
}

TEST(DecisionNet, InputDimensionMismatch) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(false, false, true, 0), 4, 16);
  Tape<double> tape(false);
  const Tensor<double> e(Shape{1, 4}), c = Tensor<double>::Scalar(0.5);
  EXPECT_THROW(DecisionNetScore(tape, e, e, std::optional<Tensor<double>>(Reshape(tape, c, {1, 1})),
                                head.network()),
               DimensionError);
  EXPECT_THROW(head.ScoreTrial(tape, Tensor<double>(Shape{1, 3}), Tensor<double>(Shape{1, 3})),
               DimensionError);
}

TEST(DecisionNet, GradientMatchesFiniteDifferences) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(true, true, true, 2), 4, 17);
  Rng rng(18);
  const Tensor<double> e({1, 4}, RandomVector(rng, 4)), t({1, 4}, RandomVector(rng, 4));
  std::vector<Tensor<double>> params;
  for (auto& [name, p] : head.Parameters()) params.push_back(p);
  EXPECT_LT(GradCheckParams([&](Tape<double>& tape) { return head.ScoreTrial(tape, e, t); }, params),
            1e-4);
}

TEST(Head, CosineOnlyWithUnitAffineIsCosine) {
  HeadConfig h;
  h.switches = SwitchConfig::Make(true, false, false, 3);
  h.scale_init = 1;
  h.offset_init = 0;
  DrHead<double> head(h, 5);
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const auto e = RandomVector(rng, 5), t = RandomVector(rng, 5);
    Tape<double> tape(false);
    EXPECT_EQ(head.ScoreTrial(tape, Tensor<double>({1, 5}, e), Tensor<double>({1, 5}, t)).Item(),
              Cos(e, t, 3));
  }
}

TEST(Head, ZeroReadoutKeepsCosineRanking) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(true, true, true, 3), 5, 20);
  FillConstant(const_cast<Tensor<double>&>(head.network().readout_weight), 0.0);
  FillConstant(const_cast<Tensor<double>&>(head.network().readout_bias), 0.0);
  Rng rng(21);
  std::vector<double> cos, full;
  for (int i = 0; i < 100; ++i) {
    const auto e = RandomVector(rng, 5), t = RandomVector(rng, 5);
    Tape<double> tape(false);
    full.push_back(head.ScoreTrial(tape, Tensor<double>({1, 5}, e), Tensor<double>({1, 5}, t)).Item());
    cos.push_back(Cos(e, t, 3));
  }
  EXPECT_EQ(Argsort(cos), Argsort(full));
}

TEST(Head, MatchesCompositionalOracle) {
  Rng rng(22);
  for (int i = 0; i < 40; ++i) {
    const bool a = rng.Below(2), b = rng.Below(2), c = b || rng.Below(2) || !a;
    const std::size_t dim = 2 + rng.Below(6);
    const std::size_t d = (a || b) ? 1 + rng.Below(dim) : rng.Below(dim + 1);
    DrHead<double> head = MakeHead(SwitchConfig::Make(a, b, c, d), dim, 100 + i, 1 + rng.Below(9));
    FillConstant(const_cast<Tensor<double>&>(head.scale()), rng.Uniform(0.5, 5));
    FillConstant(const_cast<Tensor<double>&>(head.offset()), rng.Uniform(-3, 3));
    const auto e = RandomVector(rng, dim), t = RandomVector(rng, dim);
    Tape<double> tape(false);
    const double got =
        head.ScoreTrial(tape, Tensor<double>({1, dim}, e), Tensor<double>({1, dim}, t)).Item();
    EXPECT_NEAR(got, OracleHeadScore(head, e, t), 1e-9) << head.switches().Label();
  }
}

TEST(Head, ScoreMatrixMatchesPairwiseTrials) {
  DrHead<double> head = MakeHead(SwitchConfig::Make(true, true, true, 3), 6, 23);
  Rng rng(24);
  const Tensor<double> models({4, 6}, RandomVector(rng, 24)), tests({3, 6}, RandomVector(rng, 18));
  Tape<double> tape(false);
  const auto m = head.ScoreMatrix(tape, models, tests);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      const auto s = head.ScoreTrial(tape, GatherRows(tape, models, {j}), GatherRows(tape, tests, {r}));
      EXPECT_NEAR(m(r, j), s.Item(), 1e-12);
    }
}

TEST(Head, ParametersFollowSwitchC) {
  const auto off = MakeHead(SwitchConfig::Make(true, false, false, 4), 4, 25);
  EXPECT_EQ(off.Parameters().size(), 2u);
  EXPECT_EQ(off.ParameterCount(), 2u);
  const auto on = MakeHead(SwitchConfig::Make(true, true, true, 4), 4, 25);
  EXPECT_EQ(CountParameters(on.Parameters()), on.ParameterCount());
  EXPECT_EQ(on.network().input_dim(), 9u);
  EXPECT_EQ(on.scale().Item(), 10.0);
  EXPECT_EQ(on.offset().Item(), -5.0);
}

TEST(Head, PaperPresetBudget) {
  const ModelConfig c = ModelConfig::Paper();
  Model<float> model(c);
  const double head = double(CountParameters(model.head().Parameters()));
  const double embedder = double(CountParameters(model.embedder().Parameters()));
  EXPECT_EQ(head, double(model.head().ParameterCount()));
  EXPECT_LT(head / embedder, 0.06);
}

TEST(Model, CastPreservesValues) {
  ModelConfig c = ModelConfig::Desk();
  Model<double> m(c);
  m.Initialize(26);
  const Model<float> f = m.Cast<float>();
  Model<float> direct(c);
  direct.Initialize(26);
  const auto a = f.Parameters(), b = direct.Parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(ToVector(a[i].second), ToVector(b[i].second));
  }
  ModelConfig other = c;
  other.head.hidden_dim = 8;
  Model<float> g(other);
  EXPECT_THROW(g.CopyFrom(m), MismatchError);
}

}  // namespace
}  // namespace drv
