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

// Mini-batch sampling and the batch score matrix.
//
// A batch holds N speakers x U utterances.  In the forward role the first
// n_enroll utterances of each speaker are averaged into that speaker's model
// and the remaining n_test are scored against all N models; the swapped role
// exchanges the two halves.  Each role's raw [N*n x N] matrix (rows grouped
// by speaker) is row-permuted into n stacked N x N blocks whose diagonals are
// the target trials; block b, row i is test utterance b of speaker i.

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "drv/embedder.hpp"
#include "drv/losses.hpp"
#include "drv/rng.hpp"

namespace drv {

struct MiniBatchSpec {
  std::size_t n_speakers = 8;
  std::size_t utts_per_speaker = 4;
  std::size_t n_enroll = 2;
  std::size_t n_test = 2;

  static MiniBatchSpec Desk() { return {}; }
  static MiniBatchSpec Paper() { return {16, 8, 4, 4}; }

  void Validate() const {
    if (n_speakers < 2) throw ConfigError("batch: n_speakers must be >= 2");
    if (n_enroll < 1 || n_test < 1)
      throw ConfigError("batch: n_enroll and n_test must be >= 1");
    if (n_enroll + n_test != utts_per_speaker)
      throw ConfigError("batch: n_enroll + n_test (" + std::to_string(n_enroll + n_test) +
                        ") must equal utts_per_speaker (" +
                        std::to_string(utts_per_speaker) + ")");
  }

  std::size_t num_blocks() const { return n_test + n_enroll; }
  std::size_t num_rows() const { return num_blocks() * n_speakers; }
  std::size_t num_utterances() const { return n_speakers * utts_per_speaker; }

  bool operator==(const MiniBatchSpec&) const = default;
};

/// Speaker id with its available utterance ids, in a fixed order.
using SpeakerPool = std::vector<std::pair<std::string, std::vector<std::string>>>;

struct MiniBatch {
  std::vector<std::string> speakers;
  std::vector<std::vector<std::string>> utterances;  // [speaker][utterance]
};

/// Samples speakers, then utterances per speaker, without replacement.
inline MiniBatch SampleMinibatch(const SpeakerPool& pool, const MiniBatchSpec& spec, Rng& rng) {
  spec.Validate();
  std::vector<std::size_t> eligible;
  for (std::size_t s = 0; s < pool.size(); ++s)
    if (pool[s].second.size() >= spec.utts_per_speaker) eligible.push_back(s);
  if (eligible.size() < spec.n_speakers)
    throw DataError("batch: need " + std::to_string(spec.n_speakers) + " speakers with >= " +
                    std::to_string(spec.utts_per_speaker) + " utterances, corpus has " +
                    std::to_string(eligible.size()));
  MiniBatch batch;
  for (std::size_t pick : rng.SampleWithoutReplacement(eligible.size(), spec.n_speakers)) {
    const auto& [speaker, utts] = pool[eligible[pick]];
    batch.speakers.push_back(speaker);
    std::vector<std::string> chosen;
    for (std::size_t u : rng.SampleWithoutReplacement(utts.size(), spec.utts_per_speaker))
      chosen.push_back(utts[u]);
    batch.utterances.push_back(std::move(chosen));
  }
  return batch;
}

/**
   Row order that turns a raw score matrix into stacked score blocks.

   `target_columns[r]` is the model column holding row r's target.  Every
   column must be the target of the same number k of rows; block b takes,
   for each column i in turn, the b-th such row in input order, so the
   output has k blocks with all targets on their diagonals.  Returns
   `permutation` with output row q = input row permutation[q].
*/
inline std::vector<std::size_t> BlockPermutation(const std::vector<std::size_t>& target_columns,
                                                 std::size_t n_models) {
  std::vector<std::vector<std::size_t>> rows_of(n_models);
  for (std::size_t r = 0; r < target_columns.size(); ++r) {
    if (target_columns[r] >= n_models)
      throw DataError("reorder: row " + std::to_string(r) + " targets column " +
                      std::to_string(target_columns[r]) + " but there are only " +
                      std::to_string(n_models) + " models");
    rows_of[target_columns[r]].push_back(r);
  }
  const std::size_t k = rows_of.empty() ? 0 : rows_of[0].size();
  for (std::size_t j = 0; j < n_models; ++j)
    if (rows_of[j].size() != k || k == 0)
      throw DataError("reorder: model " + std::to_string(j) + " has " +
                      std::to_string(rows_of[j].size()) + " target rows, expected " +
                      std::to_string(k) + "; rows cannot form score blocks");
  std::vector<std::size_t> perm;
  perm.reserve(target_columns.size());
  for (std::size_t b = 0; b < k; ++b)
    for (std::size_t j = 0; j < n_models; ++j) perm.push_back(rows_of[j][b]);
  return perm;
}

/// Value-level reorder of a [rows x n] matrix into score blocks.
template <typename Real>
std::vector<ScoreBlock<Real>> ReorderToBlocks(const std::vector<Real>& raw, std::size_t n,
                                              const std::vector<std::size_t>& target_columns) {
  if (raw.size() != target_columns.size() * n)
    throw DimensionError("reorder: matrix size does not match label count");
  const std::vector<std::size_t> perm = BlockPermutation(target_columns, n);
  std::vector<ScoreBlock<Real>> blocks(perm.size() / n, ScoreBlock<Real>{n, std::vector<Real>(n * n)});
  for (std::size_t q = 0; q < perm.size(); ++q)
    std::copy_n(raw.begin() + perm[q] * n, n, blocks[q / n].y.begin() + (q % n) * n);
  return blocks;
}

enum class Role { kForward, kSwapped };

template <typename Real>
struct BatchScoreMatrix {
  Tensor<Real> scores;  // [num_blocks * N x N]
  std::size_t block_size = 0;
  std::size_t num_blocks = 0;
  // Per row: block index, role, test speaker (batch index) and the test
  // utterance's position within that speaker's batch utterances.
  std::vector<std::size_t> block_of_row;
  std::vector<Role> role_of_row;
  std::vector<std::size_t> test_speaker_of_row;
  std::vector<std::size_t> test_utt_of_row;

  Tensor<Real> Block(Tape<Real>& tape, std::size_t b) const {
    return Slice(tape, scores, 0, b * block_size, (b + 1) * block_size);
  }
  std::size_t rows() const { return scores.Dim(0); }
};

/**
   Builds the stacked score matrix for one batch.

   `embeddings` is [N*U x E] ordered speaker-major (speaker s, utterance u at
   row s*U + u).  `scorer(tape, models [M x E], tests [R x E])` returns
   [R x M] scores.
*/
template <typename Real, typename Scorer>
BatchScoreMatrix<Real> BuildBatchScores(Tape<Real>& tape, const Tensor<Real>& embeddings,
                                        const MiniBatchSpec& spec, Scorer&& scorer) {
  spec.Validate();
  const std::size_t n = spec.n_speakers, u = spec.utts_per_speaker;
  if (embeddings.Rank() != 2 || embeddings.Dim(0) != n * u)
    throw DimensionError("batch scores: expected " + std::to_string(n * u) +
                         " embeddings, got " + ShapeString(embeddings.shape()));
  BatchScoreMatrix<Real> out;
  out.block_size = n;
  std::vector<Tensor<Real>> role_blocks;

  auto build_role = [&](Role role, std::size_t model_begin, std::size_t model_count,
                        std::size_t test_begin, std::size_t test_count) {
    std::vector<Tensor<Real>> models;
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<std::size_t> rows;
      for (std::size_t k = 0; k < model_count; ++k) rows.push_back(s * u + model_begin + k);
      models.push_back(Mean(tape, GatherRows(tape, embeddings, rows), std::size_t{0}));
    }
    std::vector<std::size_t> test_rows, targets;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t k = 0; k < test_count; ++k) {
        test_rows.push_back(s * u + test_begin + k);
        targets.push_back(s);
      }
    Tensor<Real> raw = scorer(tape, Concat(tape, models, 0), GatherRows(tape, embeddings, test_rows));
    if (raw.Rank() != 2 || raw.Dim(0) != test_rows.size() || raw.Dim(1) != n)
      throw DimensionError("batch scores: scorer returned " + ShapeString(raw.shape()));
    const std::vector<std::size_t> perm = BlockPermutation(targets, n);
    role_blocks.push_back(GatherRows(tape, raw, perm));
    for (std::size_t q = 0; q < perm.size(); ++q) {
      const std::size_t r = perm[q];
      out.block_of_row.push_back(out.num_blocks + q / n);
      out.role_of_row.push_back(role);
      out.test_speaker_of_row.push_back(r / test_count);
      out.test_utt_of_row.push_back(test_begin + r % test_count);
    }
    out.num_blocks += test_count;
  };

  build_role(Role::kForward, 0, spec.n_enroll, spec.n_enroll, spec.n_test);
  build_role(Role::kSwapped, spec.n_enroll, spec.n_test, 0, spec.n_enroll);
  out.scores = Concat(tape, role_blocks, 0);
  return out;
}

/// Sum of per-block losses; `normalize_blocks` divides each block's loss by N.
template <typename Real>
Tensor<Real> BatchLoss(Tape<Real>& tape, const BatchScoreMatrix<Real>& matrix, LossKind kind,
                       bool normalize_blocks = false) {
  std::vector<Tensor<Real>> losses;
  for (std::size_t b = 0; b < matrix.num_blocks; ++b)
    losses.push_back(BlockLoss(tape, matrix.Block(tape, b), kind));
  Tensor<Real> total = Sum(tape, Concat(tape, losses, 0));
  if (normalize_blocks) total = Affine(tape, total, Real(1) / Real(matrix.block_size));
  return total;
}

/// Debug dump: header `role,block,test_speaker,test_utt,<model ids>`.
template <typename Real>
std::string ScoreMatrixCsv(const BatchScoreMatrix<Real>& m, const std::vector<std::string>& model_ids) {
  std::ostringstream os;
  os.precision(9);
  os << "role,block,test_speaker,test_utt";
  for (const std::string& id : model_ids) os << ',' << id;
  os << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    os << (m.role_of_row[r] == Role::kForward ? "forward" : "swapped") << ','
       << m.block_of_row[r] << ',' << model_ids.at(m.test_speaker_of_row[r]) << ','
       << m.test_utt_of_row[r];
    for (std::size_t j = 0; j < m.block_size; ++j) os << ',' << m.scores(r, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace drv
