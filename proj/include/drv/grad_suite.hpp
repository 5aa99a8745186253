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

#pragma once

// Finite-difference gradient checks over every differentiable building
// block, from single ops up to a full trial score.  Run by `drvec gradcheck`.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "drv/batching.hpp"
#include "drv/dr_head.hpp"
#include "drv/embedder.hpp"
#include "drv/grad_check.hpp"
#include "drv/losses.hpp"
#include "drv/model.hpp"
#include "drv/ops.hpp"
#include "drv/rng.hpp"

namespace drv {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0;
  bool pass = false;
  double seconds = 0;
};

struct GradSuiteOptions {
  ModelConfig model = ModelConfig::Desk();  // dims for the module-level checks
  std::size_t frames = 4;
  double tolerance = 1e-4;
  std::uint64_t seed = 13;
  // Coordinates perturbed per tensor in the end-to-end check; every
  // coordinate of the embedder is already covered by its own check.
  std::size_t trial_score_coords = 64;
};

namespace internal {

inline std::vector<double> SuiteVector(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.Uniform(lo, hi);
  return v;
}

// Moves values at least `margin` away from zero (leaky-ReLU kink).
inline std::vector<double> AwayFromZero(std::vector<double> v, double margin) {
  for (double& x : v)
    if (std::abs(x) < margin) x = x < 0 ? -margin - std::abs(x) : margin + x;
  return v;
}

// Smallest |pre-activation| of the decision net over one pair.
inline double MinKinkDistance(const DecisionNet<double>& net, std::vector<double> x) {
  double closest = INFINITY;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Tensor<double>& w = net.weights[l];
    std::vector<double> h(w.Dim(1));
    for (std::size_t j = 0; j < h.size(); ++j) {
      double acc = net.biases[l][j];
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w(i, j);
      closest = std::min(closest, std::abs(acc));
      h[j] = acc > 0 ? acc : kLeakyReluAlpha * acc;
    }
    x = std::move(h);
  }
  return closest;
}

// Weighted sum so that every output coordinate gets a distinct cotangent.
inline Tensor<double> Readout(Tape<double>& t, const Tensor<double>& y, Rng& rng) {
  Tensor<double> w(y.shape(), SuiteVector(rng, y.Size()));
  return Sum(t, Mul(t, y, w));
}

}  // namespace internal

/**
   Runs the whole suite in 64-bit.  Each check reports
   max |analytic - numeric| / max(1, |analytic|) over all coordinates.
*/
inline std::vector<GradCheckResult> RunGradientSuite(const GradSuiteOptions& opts = {}) {
  using T = Tensor<double>;
  using internal::Readout;
  using internal::SuiteVector;
  std::vector<GradCheckResult> results;
  Rng rng(opts.seed);

  auto run = [&](const std::string& op, const std::function<double()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckResult r;
    r.op = op;
    r.max_rel_err = check();
    r.pass = std::isfinite(r.max_rel_err) && r.max_rel_err < opts.tolerance;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(r);
  };
  // Checks f(x) with a fixed random readout.
  auto unary = [&](const std::function<T(Tape<double>&, const T&)>& f, const T& x) {
    const std::uint64_t wseed = rng.Below(1u << 30);
    return GradCheck([&](Tape<double>& t, const T& v) {
      Rng local(wseed);
      return Readout(t, f(t, v), local);
    }, x);
  };
  auto matrix = [&](std::size_t r, std::size_t c) { return T::Matrix(r, c, SuiteVector(rng, r * c)); };

  const T a = matrix(3, 4), b = matrix(4, 5), c = matrix(3, 4), row = matrix(1, 4), col = matrix(3, 1);
  run("matmul", [&] {
    return std::max(unary([&](auto& t, const T& x) { return MatMul(t, x, b); }, a),
                    unary([&](auto& t, const T& x) { return MatMul(t, a, x); }, b));
  });
  run("transpose", [&] { return unary([](auto& t, const T& x) { return Transpose(t, x); }, a); });
  run("add", [&] {
    return std::max(unary([&](auto& t, const T& x) { return Add(t, x, c); }, a),
                    unary([&](auto& t, const T& x) { return AddRowVector(t, a, x); }, row));
  });
  run("mul", [&] {
    return std::max(unary([&](auto& t, const T& x) { return Mul(t, x, c); }, a),
                    unary([&](auto& t, const T& x) { return ScaleRows(t, a, x); }, col));
  });
  run("scalar_ops", [&] {
    const T s = T::Scalar(0.7);
    return std::max(unary([&](auto& t, const T& x) { return MulScalar(t, a, x); }, s),
                    unary([&](auto& t, const T& x) { return AddScalar(t, MulScalar(t, x, s), s); }, a));
  });
  run("affine", [&] { return unary([](auto& t, const T& x) { return Affine(t, x, 1.5, -0.25); }, a); });
  run("sqrt_reciprocal", [&] {
    const T pos(Shape{3, 4}, SuiteVector(rng, 12, 0.5, 2.0));
    return unary([](auto& t, const T& x) { return Reciprocal(t, Sqrt(t, x)); }, pos);
  });
  run("activation", [&] {
    const T x(Shape{3, 4}, internal::AwayFromZero(SuiteVector(rng, 12, -2, 2), 1e-3));
    double worst = 0;
    for (ActivationKind k : {ActivationKind::kTanh, ActivationKind::kSigmoid, ActivationKind::kLeakyRelu})
      worst = std::max(worst, unary([k](auto& t, const T& v) { return Activation(t, v, k); }, x));
    return worst;
  });
  run("concat", [&] {
    return std::max(unary([&](auto& t, const T& x) { return Concat(t, {x, c}, 0); }, a),
                    unary([&](auto& t, const T& x) { return Concat(t, {col, x}, 1); }, a));
  });
  run("slice_gather", [&] {
    return std::max(unary([](auto& t, const T& x) { return Slice(t, x, 1, 1, 3); }, a),
                    unary([](auto& t, const T& x) { return GatherRows(t, x, {2, 0, 2}); }, a));
  });
  run("reductions", [&] {
    double worst = unary([](auto& t, const T& x) { return Sum(t, x, std::size_t{1}); }, a);
    worst = std::max(worst, unary([](auto& t, const T& x) { return Mean(t, x, std::size_t{0}); }, a));
    return std::max(worst, unary([](auto& t, const T& x) { return Sum(t, x); }, a));
  });
  run("normalize_rows", [&] {
    return unary([](auto& t, const T& x) { return NormalizeRows(t, x, kCosineEpsilon); }, a);
  });

  const EmbedderConfig& ec = opts.model.embedder;
  run("lstmp_layer", [&] {
    LstmPLayer<double> layer(ec.feature_dim, ec.hidden_dim, ec.proj_dim);
    Rng init(rng.Below(1u << 30));
    for (auto& [name, p] : layer.Parameters("")) FillUniform(p, 0.5, init);
    const T x = matrix(opts.frames, ec.feature_dim);
    std::vector<T> params;
    for (auto& [name, p] : layer.Parameters("")) params.push_back(p);
    const T w = matrix(opts.frames, ec.proj_dim);
    auto f = [&](Tape<double>& t, const T& in) { return Sum(t, Mul(t, LstmPForward(t, layer, in), w)); };
    return std::max(GradCheckParams([&](Tape<double>& t) { return f(t, x); }, params), GradCheck(f, x));
  });

  Model<double> model(opts.model);
  model.Initialize(rng.Below(1u << 30));
  const std::size_t dim = ec.embedding_dim;
  std::vector<T> embedder_params;
  for (auto& [name, p] : model.embedder().Parameters()) embedder_params.push_back(p);
  run("embedder", [&] {
    const T x = matrix(opts.frames, ec.feature_dim);
    const T w = matrix(1, dim);
    return GradCheckParams([&](Tape<double>& t) { return Sum(t, Mul(t, model.embedder().Embed(t, x), w)); },
                           embedder_params);
  });
  run("cosine", [&] {
    const std::size_t d = std::max<std::size_t>(1, opts.model.head.switches.d);
    const T models = matrix(3, dim), tests = matrix(2, dim);
    return std::max(unary([&](auto& t, const T& x) { return CosineMatrix(t, x, tests, d); }, models),
                    unary([&](auto& t, const T& x) { return CosineMatrix(t, models, x, d); }, tests));
  });

  // Draw embeddings until every pre-activation of the head's network keeps a
  // margin from the leaky-ReLU kink.
  const DrHead<double>& head = model.head();
  T enroll, test;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    enroll = matrix(1, dim);
    test = matrix(1, dim);
    if (!head.switches().network) break;
    std::vector<double> x(enroll.Values().begin(), enroll.Values().end());
    x.insert(x.end(), test.Values().begin(), test.Values().end());
    if (head.switches().cosine_to_network) {
      Tape<double> t(false);
      x.push_back(CosineMatrix(t, enroll, test, head.switches().d).Item());
    }
    if (internal::MinKinkDistance(head.network(), x) >= 1e-3) break;
  }
  run("decision_net", [&] {
    if (!head.switches().network) return 0.0;
    const bool with_cos = head.switches().cosine_to_network;
    const std::size_t d = head.switches().d;
    std::vector<T> params;
    for (auto& [name, p] : head.Parameters())
      if (name.rfind("head.dnn.", 0) == 0) params.push_back(p);
    auto score = [&](Tape<double>& t, const T& e) {
      std::optional<T> c;
      if (with_cos) c = CosineMatrix(t, e, test, d);
      return DecisionNetScore(t, e, test, c, head.network());
    };
    const double p = GradCheckParams([&](Tape<double>& t) { return score(t, enroll); }, params);
    return std::max(p, unary(score, enroll));
  });
  run("head_affine", [&] {
    std::vector<T> params = {head.scale(), head.offset()};
    return GradCheckParams([&](Tape<double>& t) { return head.ScoreTrial(t, enroll, test); }, params);
  });

  const std::size_t n = 6;
  const T block(Shape{n, n}, SuiteVector(rng, n * n, -3, 3));
  run("loss_ge2e_softmax", [&] {
    return GradCheck([](Tape<double>& t, const T& x) { return Ge2eSoftmaxLoss(t, x); }, block);
  });
  run("loss_ge2e_xs", [&] {
    return GradCheck([](Tape<double>& t, const T& x) { return Ge2eXsLoss(t, x); }, block);
  });
  run("loss_ecw_bce", [&] {
    std::vector<bool> labels(n * n);
    for (std::size_t i = 0; i < n; ++i) labels[i * n + i] = true;
    return GradCheck(
        [&](Tape<double>& t, const T& x) { return EcwBceLoss(t, Reshape(t, x, {n * n}), labels); },
        block);
  });

  // Features -> embeddings -> enrollment average -> head score, w.r.t. every
  // model parameter.
  run("trial_score", [&] {
    std::vector<T> feats;
    for (int u = 0; u < 3; ++u) feats.push_back(matrix(opts.frames, ec.feature_dim));
    std::vector<T> params;
    for (auto& [name, p] : model.Parameters()) params.push_back(p);
    return GradCheckParams(
        [&](Tape<double>& t) {
          std::vector<T> enroll_emb = {model.embedder().Embed(t, feats[0]),
                                       model.embedder().Embed(t, feats[1])};
          const T m = EnrollAverage(t, enroll_emb);
          return model.head().ScoreTrial(t, m, model.embedder().Embed(t, feats[2]));
        },
        params, 1e-5, opts.trial_score_coords);
  });
  return results;
}

}  // namespace drv
