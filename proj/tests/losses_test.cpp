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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "drv/batching.hpp"
#include "drv/grad_check.hpp"
#include "drv/losses.hpp"
#include "loss_oracle.hpp"
#include "test_util.hpp"

namespace drv {
namespace {

TEST(Ge2eSoftmax, Degenerate) {
  EXPECT_EQ(Ge2eSoftmaxLoss(ScoreBlock<double>{1, {3.7}}), 0.0);
  EXPECT_NEAR(Ge2eSoftmaxLoss(UniformBlock(16, 0.3)), 16 * std::log(16.0), 1e-9);
}

TEST(Ge2eXs, Degenerate) {
  EXPECT_EQ(Ge2eXsLoss(ScoreBlock<double>{1, {3.7}}), 0.0);
  EXPECT_NEAR(Ge2eXsLoss(UniformBlock(2, -1.0)), 2 * std::log(3.0), 1e-12);
  EXPECT_NEAR(Ge2eXsLoss(UniformBlock(16, 0.3)), 16 * std::log(241.0), 1e-9);
}

TEST(Ge2e, MatchDirectSummation) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto b = RandomBlock(rng, 16);
    EXPECT_NEAR(Ge2eSoftmaxLoss(b), DirectSoftmaxLoss(b), 1e-9);
    EXPECT_NEAR(Ge2eXsLoss(b), DirectXsLoss(b), 1e-9);
  }
}

TEST(Ge2e, StableForLargeScores) {
  ScoreBlock<double> b = UniformBlock(4, 0.0);
  for (double& y : b.y) y += 800;
  EXPECT_NEAR(Ge2eSoftmaxLoss(b), 4 * std::log(4.0), 1e-9);
  EXPECT_NEAR(Ge2eXsLoss(b), 4 * std::log(13.0), 1e-9);
}

TEST(Ge2e, XsDominatesSoftmax) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.Below(16);
    const auto b = RandomBlock(rng, n);
    if (n >= 3)
      EXPECT_GT(Ge2eXsLoss(b), Ge2eSoftmaxLoss(b));
    else
      EXPECT_GE(Ge2eXsLoss(b) + 1e-12, Ge2eSoftmaxLoss(b));
  }
}

TEST(Ge2e, ShiftInvariant) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto b = RandomBlock(rng, 16);
    auto shifted = b;
    const double c = rng.Uniform(-50, 50);
    for (double& y : shifted.y) y += c;
    EXPECT_NEAR(Ge2eSoftmaxLoss(shifted), Ge2eSoftmaxLoss(b), 1e-9);
    EXPECT_NEAR(Ge2eXsLoss(shifted), Ge2eXsLoss(b), 1e-9);
  }
}

TEST(Ge2e, ConsistentRelabeling) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto b = RandomBlock(rng, 16);
    std::vector<std::size_t> p(16);
    std::iota(p.begin(), p.end(), 0);
    rng.Shuffle(p);
    ScoreBlock<double> q{16, std::vector<double>(256)};
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) q(r, c) = b(p[r], p[c]);
    EXPECT_NEAR(Ge2eSoftmaxLoss(q), Ge2eSoftmaxLoss(b), 1e-9);
    EXPECT_NEAR(Ge2eXsLoss(q), Ge2eXsLoss(b), 1e-9);
  }
}

TEST(Ge2e, Monotone) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.Below(8);
    const auto b = RandomBlock(rng, n);
    const std::size_t r = rng.Below(n), c = rng.Below(n);
    auto up = b;
    up(r, c) += 0.5;
    if (r == c) {
      EXPECT_LT(Ge2eSoftmaxLoss(up), Ge2eSoftmaxLoss(b));
      EXPECT_LT(Ge2eXsLoss(up), Ge2eXsLoss(b));
    } else {
      EXPECT_GT(Ge2eSoftmaxLoss(up), Ge2eSoftmaxLoss(b));
      EXPECT_GT(Ge2eXsLoss(up), Ge2eXsLoss(b));
    }
  }
}

TEST(EcwBce, Values) {
  EXPECT_NEAR(EcwBceLoss(std::vector<double>{0, 0, 0}, {true, false, false}), 2 * std::log(2.0),
              1e-12);
  EXPECT_LT(EcwBceLoss(std::vector<double>{1e4, -1e4}, {true, false}), 1e-12);
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng.Below(50);
    std::vector<double> s = RandomVector(rng, n, -8, 8);
    std::vector<bool> lab(n);
    for (std::size_t k = 0; k < n; ++k) lab[k] = rng.Uniform() < 0.5;
    lab[0] = true;
    lab[1] = false;
    EXPECT_NEAR(EcwBceLoss(s, lab), DirectEcwBce(s, lab), 1e-9);
  }
}

TEST(EcwBce, EmptyClassIsDataError) {
  EXPECT_THROW(EcwBceLoss(std::vector<double>{1, 2}, {true, true}), DataError);
  EXPECT_THROW(EcwBceLoss(std::vector<double>{1, 2}, {false, false}), DataError);
}

TEST(Losses, TapeFormMatchesValueForm) {
  Rng rng(7);
  const auto b = RandomBlock(rng, 6);
  Tape<double> tape;
  const Tensor<double> t({6, 6}, b.y);
  EXPECT_EQ(BlockLoss(tape, t, LossKind::kGe2eSoftmax).Item(), Ge2eSoftmaxLoss(b));
  EXPECT_EQ(BlockLoss(tape, t, LossKind::kGe2eXs).Item(), Ge2eXsLoss(b));
  std::vector<bool> diag(36);
  for (std::size_t i = 0; i < 6; ++i) diag[i * 6 + i] = true;
  EXPECT_EQ(BlockLoss(tape, t, LossKind::kEcwBce).Item(), EcwBceLoss(b.y, diag));
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  for (LossKind kind : {LossKind::kGe2eSoftmax, LossKind::kGe2eXs, LossKind::kEcwBce}) {
    for (std::size_t n : {2u, 5u}) {
      const Tensor<double> x({n, n}, RandomVector(rng, n * n, -3, 3));
      const double err = GradCheck(
          [kind](Tape<double>& tape, const Tensor<double>& y) { return BlockLoss(tape, y, kind); },
          x);
      EXPECT_LT(err, 1e-6) << LossName(kind) << " n=" << n;
    }
  }
}

TEST(Losses, NonSquareBlockIsDimensionError) {
  Tape<double> tape;
  EXPECT_THROW(Ge2eXsLoss(tape, Tensor<double>(Shape{2, 3})), DimensionError);
  EXPECT_THROW(Ge2eSoftmaxLoss(tape, Tensor<double>(Shape{2, 3})), DimensionError);
}

TEST(Losses, NamesRoundTrip) {
  for (LossKind k : {LossKind::kGe2eSoftmax, LossKind::kGe2eXs, LossKind::kEcwBce})
    EXPECT_EQ(ParseLossKind(LossName(k)), k);
  EXPECT_THROW(ParseLossKind("triplet"), ConfigError);
}

// --- batching ---

SpeakerPool MakePool(std::size_t speakers, std::size_t utts) {
  SpeakerPool pool;
  for (std::size_t s = 0; s < speakers; ++s) {
    std::vector<std::string> u;
    for (std::size_t k = 0; k < utts; ++k) u.push_back("s" + std::to_string(s) + "u" + std::to_string(k));
    pool.emplace_back("s" + std::to_string(s), u);
  }
  return pool;
}

TEST(Minibatch, ExhaustiveAndWithoutReplacement) {
  const SpeakerPool pool = MakePool(16, 10);
  Rng rng(9);
  const MiniBatch b = SampleMinibatch(pool, MiniBatchSpec::Paper(), rng);
  EXPECT_EQ(std::set<std::string>(b.speakers.begin(), b.speakers.end()).size(), 16u);
  std::set<std::string> utts;
  for (std::size_t s = 0; s < b.speakers.size(); ++s) {
    EXPECT_EQ(b.utterances[s].size(), 8u);
    for (const std::string& u : b.utterances[s]) {
      EXPECT_EQ(u.rfind(b.speakers[s] + "u", 0), 0u);
      utts.insert(u);
    }
  }
  EXPECT_EQ(utts.size(), 128u);
}

TEST(Minibatch, Deterministic) {
  const SpeakerPool pool = MakePool(40, 6);
  Rng a(10), b(10);
  for (int i = 0; i < 5; ++i) {
    const MiniBatch x = SampleMinibatch(pool, MiniBatchSpec::Desk(), a);
    const MiniBatch y = SampleMinibatch(pool, MiniBatchSpec::Desk(), b);
    EXPECT_EQ(x.speakers, y.speakers);
    EXPECT_EQ(x.utterances, y.utterances);
  }
}

TEST(Minibatch, InsufficientCorpus) {
  Rng rng(11);
  EXPECT_THROW(SampleMinibatch(MakePool(15, 8), MiniBatchSpec::Paper(), rng), DataError);
  SpeakerPool short_pool = MakePool(16, 8);
  short_pool[3].second.pop_back();
  try {
    SampleMinibatch(short_pool, MiniBatchSpec::Paper(), rng);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(">= 8 utterances"), std::string::npos) << e.what();
  }
}

TEST(MinibatchSpec, Validation) {
  EXPECT_NO_THROW(MiniBatchSpec::Paper().Validate());
  EXPECT_THROW((MiniBatchSpec{1, 2, 1, 1}.Validate()), ConfigError);
  EXPECT_THROW((MiniBatchSpec{4, 4, 1, 2}.Validate()), ConfigError);
  EXPECT_THROW((MiniBatchSpec{4, 2, 0, 2}.Validate()), ConfigError);
}

TEST(Reorder, FigureExample) {
  // Three tests whose targets are models 2, 0, 1.
  EXPECT_EQ(BlockPermutation({2, 0, 1}, 3), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(BlockPermutation({0, 1, 2}, 3), (std::vector<std::size_t>{0, 1, 2}));
  const std::vector<double> raw = {0.1, 0.2, 0.9,  // target col 2
                                   0.8, 0.3, 0.1,  // target col 0
                                   0.2, 0.7, 0.0};
  const auto blocks = ReorderToBlocks(raw, 3, {2, 0, 1});
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].y, (std::vector<double>{0.8, 0.3, 0.1, 0.2, 0.7, 0.0, 0.1, 0.2, 0.9}));
}

TEST(Reorder, IsRowPermutation) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.Below(6), k = 1 + rng.Below(4);
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t j = 0; j < n; ++j) labels.push_back(j);
    rng.Shuffle(labels);
    const std::vector<double> raw = RandomVector(rng, labels.size() * n);
    const auto perm = BlockPermutation(labels, n);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t q = 0; q < sorted.size(); ++q) ASSERT_EQ(sorted[q], q);
    const auto blocks = ReorderToBlocks(raw, n, labels);
    ASSERT_EQ(blocks.size(), k);
    std::multiset<double> in(raw.begin(), raw.end()), out;
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t r = 0; r < n; ++r) {
        EXPECT_EQ(labels[perm[b * n + r]], r);
        for (std::size_t c = 0; c < n; ++c) {
          out.insert(blocks[b](r, c));
          EXPECT_EQ(blocks[b](r, c), raw[perm[b * n + r] * n + c]);
        }
      }
    EXPECT_EQ(in, out);
  }
}

TEST(Reorder, UnbalancedLabelsAreDataError) {
  EXPECT_THROW(BlockPermutation({0, 0, 1}, 2), DataError);
  EXPECT_THROW(BlockPermutation({0, 3}, 2), DataError);
  EXPECT_THROW(BlockPermutation({}, 2), DataError);
}

// Scorer that records nothing but a label: score = 100 * model speaker +
// test speaker, recovered by the audit below.  Embedding rows carry their
// speaker index in column 0.
Tensor<double> LabelScorer(Tape<double>&, const Tensor<double>& models, const Tensor<double>& tests) {
  const std::size_t m = models.Dim(0), r = tests.Dim(0);
  std::vector<double> out(r * m);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = 100 * models(j, 0) + tests(i, 0);
  return Tensor<double>({r, m}, out);
}

Tensor<double> SpeakerTaggedEmbeddings(const MiniBatchSpec& spec, std::size_t dim) {
  std::vector<double> v;
  for (std::size_t s = 0; s < spec.n_speakers; ++s)
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      v.push_back(double(s));
      for (std::size_t k = 1; k < dim; ++k) v.push_back(double(u));
    }
  return Tensor<double>({spec.num_utterances(), dim}, v);
}

TEST(BatchScores, PaperPresetLabelAudit) {
  const MiniBatchSpec spec = MiniBatchSpec::Paper();
  Tape<double> tape(false);
  const auto m = BuildBatchScores(tape, SpeakerTaggedEmbeddings(spec, 4), spec, LabelScorer);
  ASSERT_EQ(m.scores.shape(), (Shape{128, 16}));
  EXPECT_EQ(m.num_blocks, 8u);
  EXPECT_EQ(m.block_size, 16u);
  for (std::size_t r = 0; r < 128; ++r) {
    EXPECT_EQ(m.block_of_row[r], r / 16);
    EXPECT_EQ(m.role_of_row[r], r < 64 ? Role::kForward : Role::kSwapped);
    for (std::size_t c = 0; c < 16; ++c) {
      const double y = m.scores(r, c);
      const std::size_t model_spk = std::size_t(std::floor(y / 100)), test_spk = std::size_t(y) % 100;
      EXPECT_EQ(model_spk, c);
      EXPECT_EQ(test_spk, m.test_speaker_of_row[r]);
      if (c == r % 16)
        EXPECT_EQ(model_spk, test_spk) << r << "," << c;
      else
        EXPECT_NE(model_spk, test_spk) << r << "," << c;
    }
  }
}

TEST(BatchScores, EveryTestUtteranceOncePerRole) {
  for (const MiniBatchSpec& spec : {MiniBatchSpec::Paper(), MiniBatchSpec::Desk(), MiniBatchSpec{3, 5, 2, 3}}) {
    Tape<double> tape(false);
    const auto m = BuildBatchScores(tape, SpeakerTaggedEmbeddings(spec, 3), spec, LabelScorer);
    std::set<std::pair<std::size_t, std::size_t>> fwd, swp;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      auto key = std::make_pair(m.test_speaker_of_row[r], m.test_utt_of_row[r]);
      if (m.role_of_row[r] == Role::kForward) {
        EXPECT_GE(key.second, spec.n_enroll);
        EXPECT_TRUE(fwd.insert(key).second);
      } else {
        EXPECT_LT(key.second, spec.n_enroll);
        EXPECT_TRUE(swp.insert(key).second);
      }
    }
    EXPECT_EQ(fwd.size(), spec.n_speakers * spec.n_test);
    EXPECT_EQ(swp.size(), spec.n_speakers * spec.n_enroll);
    EXPECT_EQ(m.num_blocks, spec.n_enroll + spec.n_test);
  }
}

TEST(BatchScores, MinimalCase) {
  const MiniBatchSpec spec{2, 2, 1, 1};
  Tape<double> tape(false);
  const auto m = BuildBatchScores(tape, SpeakerTaggedEmbeddings(spec, 2), spec, LabelScorer);
  EXPECT_EQ(m.scores.shape(), (Shape{4, 2}));
  EXPECT_EQ(m.num_blocks, 2u);
}

TEST(BatchScores, ModelsAreEnrollmentMeans) {
  // Scorer returning the model's column-1 value exposes the averaged rows.
  const MiniBatchSpec spec = MiniBatchSpec::Desk();
  auto scorer = [](Tape<double>&, const Tensor<double>& models, const Tensor<double>& tests) {
    std::vector<double> out(tests.Dim(0) * models.Dim(0));
    for (std::size_t i = 0; i < tests.Dim(0); ++i)
      for (std::size_t j = 0; j < models.Dim(0); ++j) out[i * models.Dim(0) + j] = models(j, 1);
    return Tensor<double>({tests.Dim(0), models.Dim(0)}, out);
  };
  Tape<double> tape(false);
  const auto m = BuildBatchScores(tape, SpeakerTaggedEmbeddings(spec, 2), spec, scorer);
  for (std::size_t r = 0; r < m.rows(); ++r)
    EXPECT_EQ(m.scores(r, 0), m.role_of_row[r] == Role::kForward ? 0.5 : 2.5);
}

TEST(BatchLoss, DecomposesIntoBlocks) {
  Rng rng(13);
  const MiniBatchSpec spec = MiniBatchSpec::Paper();
  const Tensor<double> emb({spec.num_utterances(), 8}, RandomVector(rng, spec.num_utterances() * 8));
  auto cosine_scorer = [](Tape<double>& tape, const Tensor<double>& models, const Tensor<double>& tests) {
    return Affine(tape, MatMul(tape, tests, Transpose(tape, models)), 2.0, -1.0);
  };
  for (LossKind kind : {LossKind::kGe2eSoftmax, LossKind::kGe2eXs, LossKind::kEcwBce}) {
    Tape<double> tape(false);
    const auto m = BuildBatchScores(tape, emb, spec, cosine_scorer);
    double sum = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      ScoreBlock<double> block{16, std::vector<double>(256)};
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 16; ++c) block(r, c) = m.scores(b * 16 + r, c);
      sum += kind == LossKind::kGe2eSoftmax ? DirectSoftmaxLoss(block)
             : kind == LossKind::kGe2eXs    ? DirectXsLoss(block)
                                            : DirectEcwBce(block.y, DiagonalLabels(16));
    }
    EXPECT_NEAR(BatchLoss(tape, m, kind).Item(), sum, 1e-9) << LossName(kind);
    EXPECT_NEAR(BatchLoss(tape, m, kind, true).Item(), sum / 16, 1e-9);
  }
}

TEST(BatchLoss, SingleAndDuplicatedBlock) {
  Rng rng(14);
  BatchScoreMatrix<double> m;
  const auto b = RandomBlock(rng, 5);
  m.scores = Tensor<double>({5, 5}, b.y);
  m.block_size = 5;
  m.num_blocks = 1;
  Tape<double> tape(false);
  const double one = BatchLoss(tape, m, LossKind::kGe2eXs).Item();
  EXPECT_NEAR(one, Ge2eXsLoss(b), 1e-12);
  std::vector<double> twice = b.y;
  twice.insert(twice.end(), b.y.begin(), b.y.end());
  m.scores = Tensor<double>({10, 5}, twice);
  m.num_blocks = 2;
  EXPECT_NEAR(BatchLoss(tape, m, LossKind::kGe2eXs).Item(), 2 * one, 1e-12);
}

TEST(BatchLoss, GradientFlowsBackThroughReorder) {
  Rng rng(15);
  const MiniBatchSpec spec{3, 4, 2, 2};
  const Tensor<double> emb({12, 4}, RandomVector(rng, 48));
  auto scorer = [](Tape<double>& tape, const Tensor<double>& models, const Tensor<double>& tests) {
    return MatMul(tape, tests, Transpose(tape, models));
  };
  const double err = GradCheck(
      [&](Tape<double>& tape, const Tensor<double>& e) {
        return BatchLoss(tape, BuildBatchScores(tape, e, spec, scorer), LossKind::kGe2eXs);
      },
      emb);
  EXPECT_LT(err, 1e-6);
}

TEST(BatchScores, CsvDump) {
  const MiniBatchSpec spec{2, 2, 1, 1};
  Tape<double> tape(false);
  const auto m = BuildBatchScores(tape, SpeakerTaggedEmbeddings(spec, 2), spec, LabelScorer);
  const std::string csv = ScoreMatrixCsv(m, {"a", "b"});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "role,block,test_speaker,test_utt,a,b");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("swapped,1,b,0,1,101"), std::string::npos) << csv;
}

}  // namespace
}  // namespace drv
