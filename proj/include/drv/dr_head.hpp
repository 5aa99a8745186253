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

/*
  Decision residual scoring head.

  Given an enrollment model e and a test embedding t (both d + s dims):

    cos  = cosine(e[0:d], t[0:d])
    net  = DecisionNet([e, t, cos if B])       3 x (linear, leaky-ReLU 0.2),
                                               then weighted sum + bias
    raw  = (A ? cos : 0) + (C ? net : 0)
    score = w * raw + b                        w, b trained end to end

  Switch A routes the cosine score to the output, B feeds it to the decision
  network, C enables the decision network.  A alone is plain cosine
  (d-vector) scoring.
*/

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "drv/embedder.hpp"
#include "drv/ops.hpp"
#include "drv/rng.hpp"

namespace drv {

inline constexpr double kCosineEpsilon = 1e-12;

struct SwitchConfig {
  bool cosine_to_output = true;    // A
  bool cosine_to_network = false;  // B
  bool network = false;            // C
  std::size_t d = 32;

  static SwitchConfig Make(bool a, bool b, bool c, std::size_t d) { return {a, b, c, d}; }

  bool UsesCosine() const { return cosine_to_output || cosine_to_network; }

  void Validate(std::size_t embedding_dim) const {
    if (!cosine_to_output && !network)
      throw ConfigError("switches " + Label() + ": at least one of A, C must be ON");
    if (cosine_to_network && !network)
      throw ConfigError("switches " + Label() + ": B=ON requires C=ON");
    if (UsesCosine() && d < 1)
      throw ConfigError("switches " + Label() + ": the cosine path needs d >= 1");
    if (d > embedding_dim)
      throw ConfigError("switches " + Label() + ": d exceeds embedding_dim " +
                        std::to_string(embedding_dim));
  }

  std::string Label() const {
    auto on = [](bool b) { return b ? "ON" : "OFF"; };
    return std::string("A=") + on(cosine_to_output) + ",B=" + on(cosine_to_network) +
           ",C=" + on(network) + ",d=" + std::to_string(d);
  }

  bool operator==(const SwitchConfig&) const = default;
};

struct HeadConfig {
  SwitchConfig switches;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 3;
  double scale_init = 10.0;
  double offset_init = -5.0;
  // Read-out weights start at this fraction of the usual +-1/sqrt(fan_in)
  // range, so training begins close to the cosine-only scorer.
  double readout_init = 0.05;

  static HeadConfig Desk() { return {SwitchConfig{true, true, true, 24}, 64, 3, 10.0, -5.0, 0.05}; }
  static HeadConfig Paper() { return {SwitchConfig{true, true, true, 200}, 256, 3, 10.0, -5.0, 0.05}; }

  bool operator==(const HeadConfig&) const = default;
};

template <typename Real>
struct DecisionNet {
  std::vector<Tensor<Real>> weights;  // layer l: in_l x hidden
  std::vector<Tensor<Real>> biases;   // 1 x hidden
  Tensor<Real> readout_weight;        // hidden x 1
  Tensor<Real> readout_bias;          // 1 x 1

  DecisionNet() = default;
  DecisionNet(std::size_t input_dim, std::size_t hidden, std::size_t layers) {
    for (std::size_t l = 0; l < layers; ++l) {
      weights.emplace_back(Shape{l == 0 ? input_dim : hidden, hidden}, true);
      biases.emplace_back(Shape{1, hidden}, true);
    }
    readout_weight = Tensor<Real>({hidden, 1}, true);
    readout_bias = Tensor<Real>({1, 1}, true);
  }

  std::size_t input_dim() const { return weights.front().Dim(0); }

  static std::size_t ParameterCount(std::size_t input_dim, std::size_t hidden,
                                    std::size_t layers) {
    std::size_t total = 0;
    for (std::size_t l = 0; l < layers; ++l)
      total += (l == 0 ? input_dim : hidden) * hidden + hidden;
    return total + hidden + 1;
  }
};

/// Cosine similarity of every test row against every model row over the
/// first d columns: [R x E] tests, [M x E] models -> [R x M].  Each norm is
/// guarded by +1e-12.
template <typename Real>
Tensor<Real> CosineMatrix(Tape<Real>& tape, const Tensor<Real>& models,
                          const Tensor<Real>& tests, std::size_t d) {
  if (models.Rank() != 2 || tests.Rank() != 2 || models.Dim(1) != tests.Dim(1))
    throw DimensionError("cosine: embeddings " + ShapeString(models.shape()) +
                         " and " + ShapeString(tests.shape()) + " differ");
  if (d < 1 || d > models.Dim(1))
    throw DimensionError("cosine: d=" + std::to_string(d) + " invalid for dim " +
                         std::to_string(models.Dim(1)));
  auto base = [&](const Tensor<Real>& x) {
    return d == x.Dim(1) ? x : Slice(tape, x, 1, 0, d);
  };
  Tensor<Real> mn = NormalizeRows(tape, base(models), Real(kCosineEpsilon));
  Tensor<Real> tn = NormalizeRows(tape, base(tests), Real(kCosineEpsilon));
  return MatMul(tape, tn, Transpose(tape, mn));
}

/// Cosine score of one enrollment/test pair ([1 x E] each) -> [1 x 1].
template <typename Real>
Tensor<Real> CosineScore(Tape<Real>& tape, const Tensor<Real>& enroll,
                         const Tensor<Real>& test, std::size_t d) {
  return CosineMatrix(tape, enroll, test, d);
}

/**
   Decision network over all (test r, model j) pairs -> [R x M].

   The first layer acting on [e, t, cos] is split by input block, so it is
   evaluated as models*W_e + tests*W_t (+ cos*w_c) and broadcast over pairs
   instead of materializing every concatenated pair.
*/
template <typename Real>
Tensor<Real> DecisionNetMatrix(Tape<Real>& tape, const DecisionNet<Real>& net,
                               const Tensor<Real>& models, const Tensor<Real>& tests,
                               const std::optional<Tensor<Real>>& cosine) {
  const std::size_t dim = models.Dim(1);
  const std::size_t m = models.Dim(0), r = tests.Dim(0);
  const std::size_t expected = 2 * dim + (cosine ? 1 : 0);
  if (tests.Dim(1) != dim || net.input_dim() != expected)
    throw DimensionError("decision net: input of " + std::to_string(expected) +
                         " values does not match parameters " +
                         ShapeString(net.weights.front().shape()));
  const Tensor<Real>& w0 = net.weights.front();
  Tensor<Real> from_model = MatMul(tape, models, Slice(tape, w0, 0, 0, dim));
  Tensor<Real> from_test = MatMul(tape, tests, Slice(tape, w0, 0, dim, 2 * dim));
  std::vector<std::size_t> model_of_pair(r * m), test_of_pair(r * m);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      model_of_pair[i * m + j] = j;
      test_of_pair[i * m + j] = i;
    }
  Tensor<Real> h = Add(tape, GatherRows(tape, from_model, model_of_pair),
                       GatherRows(tape, from_test, test_of_pair));
  if (cosine) {
    Tensor<Real> cos_col = Reshape(tape, *cosine, {r * m, 1});
    h = Add(tape, h, MatMul(tape, cos_col, Slice(tape, w0, 0, 2 * dim, 2 * dim + 1)));
  }
  h = LeakyRelu(tape, AddRowVector(tape, h, net.biases.front()));
  for (std::size_t l = 1; l < net.weights.size(); ++l)
    h = LeakyRelu(tape, AddRowVector(tape, MatMul(tape, h, net.weights[l]), net.biases[l]));
  Tensor<Real> out = AddRowVector(tape, MatMul(tape, h, net.readout_weight), net.readout_bias);
  return Reshape(tape, out, {r, m});
}

/// Decision network score of one pair; `cosine` present iff switch B.
template <typename Real>
Tensor<Real> DecisionNetScore(Tape<Real>& tape, const Tensor<Real>& enroll,
                              const Tensor<Real>& test,
                              const std::optional<Tensor<Real>>& cosine,
                              const DecisionNet<Real>& net) {
  return DecisionNetMatrix(tape, net, enroll, test, cosine);
}

template <typename Real>
class DrHead {
 public:
  DrHead() = default;
  DrHead(const HeadConfig& config, std::size_t embedding_dim)
      : config_(config), embedding_dim_(embedding_dim) {
    config_.switches.Validate(embedding_dim);
    if (config_.switches.network) {
      if (config_.num_layers < 1 || config_.hidden_dim < 1)
        throw ConfigError("decision net needs at least one non-empty layer");
      net_ = DecisionNet<Real>(NetworkInputDim(), config_.hidden_dim, config_.num_layers);
    }
    scale_ = Tensor<Real>::Scalar(Real(config_.scale_init), true);
    offset_ = Tensor<Real>::Scalar(Real(config_.offset_init), true);
  }

  /// Decision-net weights uniform in +-1/sqrt(fan_in) (read-out scaled by
  /// readout_init), biases 0.
  void Initialize(Rng& rng) {
    if (config_.switches.network) {
      for (std::size_t l = 0; l < net_.weights.size(); ++l) {
        FillUniform(net_.weights[l], 1.0 / std::sqrt(double(net_.weights[l].Dim(0))), rng);
        FillConstant(net_.biases[l], 0.0);
      }
      FillUniform(net_.readout_weight, config_.readout_init / std::sqrt(double(config_.hidden_dim)), rng);
      FillConstant(net_.readout_bias, 0.0);
    }
    FillConstant(scale_, config_.scale_init);
    FillConstant(offset_, config_.offset_init);
  }

  /// Scores every test row against every model row: [R x M].
  Tensor<Real> ScoreMatrix(Tape<Real>& tape, const Tensor<Real>& models,
                           const Tensor<Real>& tests) const {
    if (models.Rank() != 2 || tests.Rank() != 2 || models.Dim(1) != embedding_dim_ ||
        tests.Dim(1) != embedding_dim_)
      throw DimensionError("score: embeddings " + ShapeString(models.shape()) + " / " +
                           ShapeString(tests.shape()) + " do not have dim " +
                           std::to_string(embedding_dim_));
    const SwitchConfig& sw = config_.switches;
    std::optional<Tensor<Real>> cosine;
    if (sw.UsesCosine()) cosine = CosineMatrix(tape, models, tests, sw.d);
    Tensor<Real> raw;
    if (sw.cosine_to_output) raw = *cosine;
    if (sw.network) {
      Tensor<Real> net = DecisionNetMatrix(
          tape, net_, models, tests,
          sw.cosine_to_network ? cosine : std::optional<Tensor<Real>>{});
      raw = raw.Empty() ? net : Add(tape, raw, net);
    }
    return AddScalar(tape, MulScalar(tape, raw, scale_), offset_);
  }

  /// Score of a single trial ([1 x E] enrollment model, [1 x E] test).
  Tensor<Real> ScoreTrial(Tape<Real>& tape, const Tensor<Real>& enroll,
                          const Tensor<Real>& test) const {
    return ScoreMatrix(tape, enroll, test);
  }

  std::size_t NetworkInputDim() const {
    return 2 * embedding_dim_ + (config_.switches.cosine_to_network ? 1 : 0);
  }

  const HeadConfig& config() const { return config_; }
  const SwitchConfig& switches() const { return config_.switches; }
  const DecisionNet<Real>& network() const { return net_; }
  const Tensor<Real>& scale() const { return scale_; }
  const Tensor<Real>& offset() const { return offset_; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  /// Trainable tensors; decision-net tensors are absent when C is OFF.
  NamedParams<Real> Parameters() const {
    NamedParams<Real> out;
    if (config_.switches.network) {
      for (std::size_t l = 0; l < net_.weights.size(); ++l) {
        out.emplace_back("head.dnn.layer" + std::to_string(l) + ".weight", net_.weights[l]);
        out.emplace_back("head.dnn.layer" + std::to_string(l) + ".bias", net_.biases[l]);
      }
      out.emplace_back("head.dnn.readout.weight", net_.readout_weight);
      out.emplace_back("head.dnn.readout.bias", net_.readout_bias);
    }
    out.emplace_back("head.affine.scale", scale_);
    out.emplace_back("head.affine.offset", offset_);
    return out;
  }

  std::size_t ParameterCount() const {
    std::size_t n = 2;
    if (config_.switches.network)
      n += DecisionNet<Real>::ParameterCount(NetworkInputDim(), config_.hidden_dim,
                                             config_.num_layers);
    return n;
  }

 private:
  HeadConfig config_;
  std::size_t embedding_dim_ = 0;
  DecisionNet<Real> net_;
  Tensor<Real> scale_, offset_;
};

}  // namespace drv
