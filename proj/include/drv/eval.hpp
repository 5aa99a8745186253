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

// Trial scoring, EER and DET curves.
//
// A trial is accepted when score >= threshold.  For a threshold t,
//   FRR(t) = fraction of target scores < t
//   FAR(t) = fraction of nontarget scores >= t
// evaluated at every distinct score and at +inf.  The EER is read off where
// FRR - FAR changes sign, interpolating linearly between the two bracketing
// operating points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>  // nlohmann, vendored

#include "drv/features.hpp"
#include "drv/model.hpp"
#include "drv/trials.hpp"

namespace drv {

struct DetPoint {
  double threshold = 0;
  double far = 0;
  double frr = 0;
};

/// Operating points sorted by threshold; the first is (FAR=1, FRR=0) and the
/// last, at threshold +inf, is (FAR=0, FRR=1).
inline std::vector<DetPoint> DetPoints(const std::vector<double>& targets,
                                       const std::vector<double>& nontargets) {
  if (targets.empty() || nontargets.empty())
    throw DataError("det: need at least one target and one nontarget score (got " +
                    std::to_string(targets.size()) + " / " + std::to_string(nontargets.size()) +
                    ")");
  std::vector<double> tar = targets, non = nontargets;
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  std::vector<double> all = tar;
  all.insert(all.end(), non.begin(), non.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  all.push_back(std::numeric_limits<double>::infinity());

  std::vector<DetPoint> out;
  out.reserve(all.size());
  std::size_t tar_below = 0, non_below = 0;
  const double nt = double(tar.size()), nn = double(non.size());
  for (double t : all) {
    while (tar_below < tar.size() && tar[tar_below] < t) ++tar_below;
    while (non_below < non.size() && non[non_below] < t) ++non_below;
    out.push_back({t, double(non.size() - non_below) / nn, double(tar_below) / nt});
  }
  return out;
}

/// EER from a threshold-sorted DET curve as produced by DetPoints().
inline double EerFromDet(const std::vector<DetPoint>& det) {
  for (std::size_t k = 1; k < det.size(); ++k) {
    const double d1 = det[k].frr - det[k].far;
    if (d1 < 0) continue;
    const double d0 = det[k - 1].frr - det[k - 1].far;  // < 0
    const double alpha = -d0 / (d1 - d0);
    return det[k - 1].frr + alpha * (det[k].frr - det[k - 1].frr);
  }
  throw DataError("det: curve never reaches FRR >= FAR");
}

inline double Eer(const std::vector<double>& targets, const std::vector<double>& nontargets) {
  return EerFromDet(DetPoints(targets, nontargets));
}

inline std::string DetCsv(const std::vector<DetPoint>& det) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,far,frr\n";
  for (const DetPoint& p : det) {
    if (std::isinf(p.threshold))
      os << "inf";
    else
      os << p.threshold;
    os << ',' << p.far << ',' << p.frr << '\n';
  }
  return os.str();
}

struct ConditionScores {
  std::vector<double> targets;
  std::vector<double> nontargets;
};

struct ConditionResult {
  double eer = 0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  std::vector<DetPoint> det;
};

struct EvalReport {
  std::map<std::string, ConditionResult> conditions;
  double average_eer = 0;
  SwitchConfig switches;
};

inline ConditionResult ResultFromScores(const ConditionScores& s) {
  ConditionResult r;
  r.det = DetPoints(s.targets, s.nontargets);
  r.eer = EerFromDet(r.det);
  r.n_target = s.targets.size();
  r.n_nontarget = s.nontargets.size();
  return r;
}

/// Unweighted mean of the per-condition EERs.
inline EvalReport Aggregate(std::map<std::string, ConditionResult> conditions,
                            const SwitchConfig& switches = {}) {
  if (conditions.empty()) throw DataError("aggregate: no conditions");
  EvalReport report;
  report.conditions = std::move(conditions);
  report.switches = switches;
  double sum = 0;
  for (const auto& [name, r] : report.conditions) sum += r.eer;
  report.average_eer = sum / double(report.conditions.size());
  return report;
}

using FeatureTable = std::map<std::string, FeatureSequence>;

template <typename Real>
Tensor<Real> FeatureTensor(const FeatureSequence& f) {
  return Tensor<Real>({f.num_frames, f.dim}, std::vector<Real>(f.values.begin(), f.values.end()));
}

/**
   Embeds the listed utterances without recording gradients.  Utterances of
   equal length are batched together; the result does not depend on the
   batching since rows never interact.
*/
template <typename Real>
std::map<std::string, std::vector<Real>> EmbedUtterances(const Embedder<Real>& embedder,
                                                         const FeatureTable& features,
                                                         const std::vector<std::string>& ids) {
  std::map<std::size_t, std::vector<const std::string*>> by_length;
  for (const std::string& id : ids) {
    auto it = features.find(id);
    if (it == features.end()) throw DataError("utterance '" + id + "' has no features");
    if (it->second.num_frames == 0) throw DataError("utterance '" + id + "' has no frames");
    by_length[it->second.num_frames].push_back(&it->first);
  }
  std::map<std::string, std::vector<Real>> out;
  const std::size_t dim = embedder.config().feature_dim;
  for (const auto& [length, group] : by_length) {
    std::vector<Tensor<Real>> steps;
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<Real> frame(group.size() * dim);
      for (std::size_t b = 0; b < group.size(); ++b) {
        const FeatureSequence& f = features.at(*group[b]);
        if (f.dim != dim)
          throw DimensionError("utterance '" + *group[b] + "' has feature dim " +
                               std::to_string(f.dim) + ", model expects " + std::to_string(dim));
        std::copy_n(f.values.begin() + t * dim, dim, frame.begin() + b * dim);
      }
      steps.emplace_back(Shape{group.size(), dim}, std::move(frame));
    }
    Tape<Real> tape(false);
    const Tensor<Real> emb = embedder.EmbedBatch(tape, steps);
    const std::size_t e = emb.Dim(1);
    for (std::size_t b = 0; b < group.size(); ++b)
      out[*group[b]] = std::vector<Real>(emb.Values().begin() + b * e,
                                         emb.Values().begin() + (b + 1) * e);
  }
  return out;
}

/// Scores of every trial in order, from precomputed utterance embeddings.
template <typename Real>
std::vector<double> ScoreTrials(const DrHead<Real>& head, const TrialSet& trials,
                                const std::map<std::string, std::vector<Real>>& embeddings) {
  auto lookup = [&](const std::string& id) -> const std::vector<Real>& {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) throw DataError("utterance '" + id + "' was not embedded");
    return it->second;
  };
  const std::size_t e = head.embedding_dim();
  std::vector<double> scores;
  scores.reserve(trials.trials.size());
  for (const Trial& t : trials.trials) {
    Tape<Real> tape(false);
    std::vector<Tensor<Real>> enroll;
    for (const std::string& id : t.enroll) enroll.emplace_back(Shape{1, e}, lookup(id));
    const Tensor<Real> model = EnrollAverage(tape, enroll);
    const Tensor<Real> test(Shape{1, e}, lookup(t.test));
    scores.push_back(double(head.ScoreTrial(tape, model, test).Item()));
  }
  return scores;
}

inline std::vector<std::string> TrialUtterances(const TrialSet& trials) {
  std::vector<std::string> ids;
  for (const Trial& t : trials.trials) {
    ids.insert(ids.end(), t.enroll.begin(), t.enroll.end());
    ids.push_back(t.test);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline ConditionScores SplitByLabel(const TrialSet& trials, const std::vector<double>& scores) {
  ConditionScores out;
  for (std::size_t i = 0; i < trials.trials.size(); ++i)
    (trials.trials[i].target ? out.targets : out.nontargets).push_back(scores[i]);
  return out;
}

/// Embeds each referenced utterance once, then scores every trial.
template <typename Real>
ConditionScores ScoreTrialset(const Model<Real>& model, const TrialSet& trials,
                              const FeatureTable& features) {
  const auto embeddings = EmbedUtterances(model.embedder(), features, TrialUtterances(trials));
  return SplitByLabel(trials, ScoreTrials(model.head(), trials, embeddings));
}

template <typename Real>
EvalReport Evaluate(const Model<Real>& model, const std::map<std::string, TrialSet>& trials,
                    const FeatureTable& features) {
  std::map<std::string, ConditionResult> results;
  for (const auto& [condition, set] : trials)
    results[condition] = ResultFromScores(ScoreTrialset(model, set, features));
  return Aggregate(std::move(results), model.head().switches());
}

inline nlohmann::ordered_json SwitchJson(const SwitchConfig& s) {
  return {{"A", s.cosine_to_output}, {"B", s.cosine_to_network}, {"C", s.network}, {"d", s.d},
          {"label", s.Label()}};
}

/// Report as JSON; `config` and `version` are echoed verbatim.
inline nlohmann::ordered_json EvalReportJson(const EvalReport& r, const nlohmann::ordered_json& config,
                                             const std::string& version) {
  nlohmann::ordered_json j;
  j["version"] = version;
  j["switches"] = SwitchJson(r.switches);
  nlohmann::ordered_json conds = nlohmann::ordered_json::object();
  for (const auto& [name, c] : r.conditions)
    conds[name] = {{"eer", c.eer}, {"n_target", c.n_target}, {"n_nontarget", c.n_nontarget},
                   {"det_points", c.det.size()}};
  j["conditions"] = std::move(conds);
  j["average_eer"] = r.average_eer;
  j["config"] = config;
  return j;
}

}  // namespace drv
