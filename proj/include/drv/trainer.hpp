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

// End-to-end training: embedder -> batch score matrix -> loss, plain SGD with
// global gradient-norm clipping, periodic held-out evaluation, checkpoints.

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>  // nlohmann, vendored

#include "drv/batching.hpp"
#include "drv/binary_io.hpp"
#include "drv/corpus.hpp"
#include "drv/eval.hpp"
#include "drv/json_util.hpp"
#include "drv/losses.hpp"
#include "drv/model.hpp"

namespace drv {

struct TrainConfig {
  LossKind loss = LossKind::kGe2eXs;
  std::size_t steps = 600;
  double learning_rate = 0.05;
  double clip_norm = 3.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 100;  // 0: evaluate only after the last step
  // Utterances of a batch are cut to a common random segment of at most
  // this many frames so the batch runs as one recurrence.
  std::size_t crop_frames = 40;
  bool normalize_blocks = false;
  MiniBatchSpec batch;
  ModelConfig model = ModelConfig::Desk();

  void Validate() const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
      throw ConfigError("train: learning_rate must be a finite value >= 0");
    if (!(clip_norm > 0)) throw ConfigError("train: clip_norm must be > 0");
    if (crop_frames < 1) throw ConfigError("train: crop_frames must be >= 1");
    batch.Validate();
    model.embedder.Validate();
    model.head.switches.Validate(model.embedder.embedding_dim);
  }

  bool operator==(const TrainConfig&) const = default;
};

inline nlohmann::ordered_json TrainConfigToJson(const TrainConfig& c) {
  const SwitchConfig& s = c.model.head.switches;
  const EmbedderConfig& e = c.model.embedder;
  const HeadConfig& h = c.model.head;
  nlohmann::ordered_json j;
  j["loss"] = LossName(c.loss);
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["clip_norm"] = c.clip_norm;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["crop_frames"] = c.crop_frames;
  j["normalize_blocks"] = c.normalize_blocks;
  j["batch"] = {{"n_speakers", c.batch.n_speakers},
                {"utts_per_speaker", c.batch.utts_per_speaker},
                {"n_enroll", c.batch.n_enroll},
                {"n_test", c.batch.n_test}};
  j["embedder"] = {{"num_layers", e.num_layers},
                   {"hidden_dim", e.hidden_dim},
                   {"proj_dim", e.proj_dim},
                   {"embedding_dim", e.embedding_dim},
                   {"feature_dim", e.feature_dim}};
  j["head"] = {{"A", s.cosine_to_output}, {"B", s.cosine_to_network}, {"C", s.network},
               {"d", s.d},  {"hidden_dim", h.hidden_dim},          {"num_layers", h.num_layers},
               {"scale_init", h.scale_init}, {"offset_init", h.offset_init},
               {"readout_init", h.readout_init}};
  return j;
}

/// Applies the keys present in `j` on top of `base`; unknown keys are errors.
inline TrainConfig TrainConfigFromJson(const nlohmann::json& j, TrainConfig base = {},
                                       const std::string& path = "") {
  JsonObjectReader r(j, path);
  r.AllowOnly({"loss", "steps", "learning_rate", "clip_norm", "seed", "eval_every", "crop_frames",
               "normalize_blocks", "batch", "embedder", "head"});
  TrainConfig& c = base;
  if (r.Has("loss")) {
    std::string name;
    r.Get("loss", name);
    c.loss = ParseLossKind(name);
  }
  r.Get("steps", c.steps);
  r.Get("learning_rate", c.learning_rate);
  r.Get("clip_norm", c.clip_norm);
  r.Get("seed", c.seed);
  r.Get("eval_every", c.eval_every);
  r.Get("crop_frames", c.crop_frames);
  r.Get("normalize_blocks", c.normalize_blocks);
  if (r.Has("batch")) {
    JsonObjectReader b(r.At("batch"), r.Key("batch"));
    b.AllowOnly({"n_speakers", "utts_per_speaker", "n_enroll", "n_test"});
    b.Get("n_speakers", c.batch.n_speakers);
    b.Get("utts_per_speaker", c.batch.utts_per_speaker);
    b.Get("n_enroll", c.batch.n_enroll);
    b.Get("n_test", c.batch.n_test);
  }
  if (r.Has("embedder")) {
    JsonObjectReader e(r.At("embedder"), r.Key("embedder"));
    e.AllowOnly({"num_layers", "hidden_dim", "proj_dim", "embedding_dim", "feature_dim"});
    e.Get("num_layers", c.model.embedder.num_layers);
    e.Get("hidden_dim", c.model.embedder.hidden_dim);
    e.Get("proj_dim", c.model.embedder.proj_dim);
    e.Get("embedding_dim", c.model.embedder.embedding_dim);
    e.Get("feature_dim", c.model.embedder.feature_dim);
  }
  if (r.Has("head")) {
    JsonObjectReader h(r.At("head"), r.Key("head"));
    h.AllowOnly({"A", "B", "C", "d", "hidden_dim", "num_layers", "scale_init", "offset_init",
                 "readout_init"});
    SwitchConfig& s = c.model.head.switches;
    h.Get("A", s.cosine_to_output);
    h.Get("B", s.cosine_to_network);
    h.Get("C", s.network);
    h.Get("d", s.d);
    h.Get("hidden_dim", c.model.head.hidden_dim);
    h.Get("num_layers", c.model.head.num_layers);
    h.Get("scale_init", c.model.head.scale_init);
    h.Get("offset_init", c.model.head.offset_init);
    h.Get("readout_init", c.model.head.readout_init);
  }
  return c;
}

/// Model parameters live in 32-bit floats; gradient checks use Model<double>.
using TrainReal = float;

struct TrainState {
  Model<TrainReal> model;
  Rng rng;
  std::size_t step = 0;
  double best_eer = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
};

/// Fresh state: parameters from Rng(seed), batch sampling from its own stream.
inline TrainState InitialState(const TrainConfig& config) {
  config.Validate();
  TrainState s{Model<TrainReal>(config.model), Rng::ForKey(config.seed, "batches"), 0};
  s.model.Initialize(config.seed);
  return s;
}

/// One batch as per-frame [N*U x F] matrices, rows speaker-major.
template <typename Real>
struct BatchInput {
  MiniBatch batch;
  std::vector<Tensor<Real>> steps;
};

/// Samples a batch and cuts every utterance to one random segment of the
/// common length min(crop_frames, shortest utterance).
template <typename Real>
BatchInput<Real> SampleBatchInput(const SpeakerPool& pool, const FeatureTable& features,
                                  const TrainConfig& config, Rng& rng) {
  BatchInput<Real> in;
  in.batch = SampleMinibatch(pool, config.batch, rng);
  std::vector<const FeatureSequence*> utts;
  std::size_t length = config.crop_frames;
  for (const auto& speaker : in.batch.utterances)
    for (const std::string& id : speaker) {
      auto it = features.find(id);
      if (it == features.end()) throw DataError("utterance '" + id + "' has no features");
      utts.push_back(&it->second);
      length = std::min(length, it->second.num_frames);
    }
  if (length == 0) throw DataError("batch contains an utterance with no frames");
  std::vector<std::size_t> start(utts.size());
  for (std::size_t b = 0; b < utts.size(); ++b)
    start[b] = std::size_t(rng.Below(utts[b]->num_frames - length + 1));
  const std::size_t dim = utts.front()->dim;
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<Real> frame(utts.size() * dim);
    for (std::size_t b = 0; b < utts.size(); ++b) {
      if (utts[b]->dim != dim) throw DimensionError("batch utterances differ in feature dim");
      const float* src = utts[b]->values.data() + (start[b] + t) * dim;
      std::copy(src, src + dim, frame.begin() + b * dim);
    }
    in.steps.emplace_back(Shape{utts.size(), dim}, std::move(frame));
  }
  return in;
}

/// Batch loss on the tape: embed, score matrix, summed block losses.
template <typename Real>
Tensor<Real> ForwardLoss(Tape<Real>& tape, const Model<Real>& model, const BatchInput<Real>& in,
                         const TrainConfig& config) {
  const Tensor<Real> emb = model.embedder().EmbedBatch(tape, in.steps);
  auto scorer = [&](Tape<Real>& t, const Tensor<Real>& models, const Tensor<Real>& tests) {
    return model.head().ScoreMatrix(t, models, tests);
  };
  const BatchScoreMatrix<Real> m = BuildBatchScores(tape, emb, config.batch, scorer);
  return BatchLoss(tape, m, config.loss, config.normalize_blocks);
}

template <typename Real>
double BatchLossValue(const Model<Real>& model, const BatchInput<Real>& in,
                      const TrainConfig& config) {
  Tape<Real> tape(false);
  return double(ForwardLoss(tape, model, in, config).Item());
}

/// Global L2 norm of the gradients of `params`.
template <typename Real>
double GradNorm(const NamedParams<Real>& params) {
  double sq = 0;
  for (const auto& [name, t] : params)
    for (Real g : t.Grad()) sq += double(g) * double(g);
  return std::sqrt(sq);
}

/**
   Forward, backward, clip, SGD update.  Returns the loss before the update.
   Throws TrainingError if the loss or gradient norm is not finite; the
   parameters are untouched in that case.
*/
template <typename Real>
double TrainStep(Model<Real>& model, const BatchInput<Real>& in, const TrainConfig& config,
                 std::size_t step) {
  model.ZeroGrad();
  Tape<Real> tape;
  const Tensor<Real> loss = ForwardLoss(tape, model, in, config);
  const double value = double(loss.Item());
  if (!std::isfinite(value))
    throw TrainingError("non-finite loss " + std::to_string(value) + " at step " +
                        std::to_string(step), step);
  tape.Backward(loss);
  const NamedParams<Real> params = model.Parameters();
  const double norm = GradNorm(params);
  if (!std::isfinite(norm))
    throw TrainingError("non-finite gradient norm at step " + std::to_string(step), step);
  const double scale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
  const Real rate = Real(config.learning_rate * scale);
  for (auto [name, t] : params) {
    auto v = t.MutableValues();
    auto g = t.Grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= rate * g[i];
  }
  return value;
}

/// Samples the next batch from the state's stream and takes one step.
inline double TrainStep(TrainState& state, const SpeakerPool& pool, const FeatureTable& features,
                        const TrainConfig& config) {
  const BatchInput<TrainReal> in = SampleBatchInput<TrainReal>(pool, features, config, state.rng);
  const double loss = TrainStep(state.model, in, config, state.step);
  ++state.step;
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "DRV1", u32 manifest length, JSON manifest, zero padding to
// a 4-byte boundary, then little-endian float32 tensor blobs.  The manifest is
// an object whose "tensors" array lists {name, shape, dtype, byte_offset}
// (offsets relative to the first blob); it also carries the training config,
// step, RNG state, best EER and version string.
// ---------------------------------------------------------------------------

inline Bytes SerializeCheckpoint(const TrainState& state, const TrainConfig& config,
                                 const std::string& version) {
  nlohmann::ordered_json manifest;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  const NamedParams<TrainReal> params = state.model.Parameters();
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"byte_offset", offset}});
    offset += 4 * t.Size();
  }
  manifest["tensors"] = std::move(tensors);
  manifest["config"] = TrainConfigToJson(config);
  manifest["step"] = state.step;
  manifest["rng_state"] = state.rng.state();
  manifest["best_eer"] = std::isfinite(state.best_eer) ? nlohmann::ordered_json(state.best_eer)
                                                       : nlohmann::ordered_json(nullptr);
  manifest["best_step"] = state.best_step;
  manifest["version"] = version;
  const std::string text = manifest.dump();

  Bytes out;
  PutTag(out, "DRV1");
  PutU32(out, std::uint32_t(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  while (out.size() % 4) out.push_back(0);
  for (const auto& [name, t] : params)
    for (TrainReal v : t.Values()) PutF32(out, v);
  return out;
}

struct Checkpoint {
  TrainConfig config;
  TrainState state;
  std::string version;
};

/// Parses a checkpoint and rebuilds the state; every tensor must match the
/// model implied by the stored config (MismatchError otherwise).
inline Checkpoint ParseCheckpoint(const Bytes& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.Tag("magic") != "DRV1") throw FormatError("checkpoint: bad magic (expected DRV1)");
  const std::uint32_t len = r.U32("manifest length");
  r.Need(len, "manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  const std::size_t data_start = (8 + std::size_t(len) + 3) / 4 * 4;
  Checkpoint ck;
  try {
    ck.config = TrainConfigFromJson(manifest.at("config"), TrainConfig{}, "config");
    ck.config.Validate();
    ck.state = TrainState{Model<TrainReal>(ck.config.model), Rng(), 0};
    ck.state.step = manifest.at("step");
    ck.state.rng.set_state(manifest.at("rng_state").get<Rng::State>());
    if (!manifest.at("best_eer").is_null()) ck.state.best_eer = manifest.at("best_eer");
    ck.state.best_step = manifest.at("best_step");
    ck.version = manifest.at("version");
    const auto& tensors = manifest.at("tensors");
    NamedParams<TrainReal> params = ck.state.model.Parameters();
    if (tensors.size() != params.size())
      throw MismatchError("checkpoint has " + std::to_string(tensors.size()) +
                          " tensors, config implies " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = tensors[i];
      auto& [name, t] = params[i];
      if (entry.at("name") != name)
        throw MismatchError("checkpoint tensor " + std::to_string(i) + " is '" +
                            entry.at("name").get<std::string>() + "', expected '" + name + "'");
      if (entry.at("shape").get<Shape>() != t.shape())
        throw MismatchError("checkpoint tensor '" + name + "' has shape " +
                            ShapeString(entry.at("shape").get<Shape>()) + ", config implies " +
                            ShapeString(t.shape()));
      if (entry.at("dtype") != "f32") throw FormatError("checkpoint tensor '" + name + "' is not f32");
      r.Seek(data_start + entry.at("byte_offset").get<std::size_t>());
      for (TrainReal& v : t.MutableValues()) v = r.F32(name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint config: " + std::string(e.what()));
  }
  return ck;
}

inline void SaveCheckpoint(const std::filesystem::path& path, const TrainState& state,
                           const TrainConfig& config, const std::string& version) {
  WriteFileAtomic(path, SerializeCheckpoint(state, config, version));
}

inline Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  return ParseCheckpoint(ReadFileBytes(path));
}

// ---------------------------------------------------------------------------

struct TraceRow {
  std::size_t step = 0;  // 1-based: loss of the step that produced this state
  double loss = 0;
  std::optional<double> eer_clean, eer_noisy;
};

inline std::string TraceCsv(const std::vector<TraceRow>& rows, const std::string& preamble = "") {
  std::ostringstream os;
  os.precision(9);
  os << preamble << "step,loss,eer_clean,eer_noisy\n";
  for (const TraceRow& r : rows) {
    os << r.step << ',' << r.loss << ',';
    if (r.eer_clean) os << *r.eer_clean;
    os << ',';
    if (r.eer_noisy) os << *r.eer_noisy;
    os << '\n';
  }
  return os.str();
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints: best.ckpt, final.ckpt
  std::string version = "unknown";
  bool evaluate = true;
  std::function<void(const TraceRow&)> on_row;
};

struct TrainResult {
  TrainState state;
  std::vector<TraceRow> trace;
  std::optional<EvalReport> last_report;
};

inline std::optional<double> ConditionEer(const EvalReport& r, const std::string& condition) {
  auto it = r.conditions.find(condition);
  if (it == r.conditions.end()) return std::nullopt;
  return it->second.eer;
}

/**
   Runs steps state.step .. config.steps - 1.  The held-out trial lists of
   the corpus are scored every eval_every steps and after the last step; the
   state with the lowest average EER so far is kept as best.ckpt.
*/
inline TrainResult ContinueTraining(TrainState state, const TrainConfig& config,
                                    const Corpus& corpus, const RunOptions& opts = {}) {
  config.Validate();
  const SpeakerPool pool = corpus.TrainPool();
  const bool can_eval = opts.evaluate && !corpus.trials.empty();
  TrainResult result;
  while (state.step < config.steps) {
    TraceRow row;
    row.loss = TrainStep(state, pool, corpus.features, config);
    row.step = state.step;
    const bool last = state.step == config.steps;
    if (can_eval && (last || (config.eval_every > 0 && state.step % config.eval_every == 0))) {
      EvalReport report = Evaluate(state.model, corpus.trials, corpus.features);
      row.eer_clean = ConditionEer(report, "clean");
      row.eer_noisy = ConditionEer(report, "noisy");
      if (report.average_eer < state.best_eer) {
        state.best_eer = report.average_eer;
        state.best_step = state.step;
        if (opts.out_dir) SaveCheckpoint(*opts.out_dir / "best.ckpt", state, config, opts.version);
      }
      result.last_report = std::move(report);
    }
    if (opts.on_row) opts.on_row(row);
    result.trace.push_back(row);
  }
  if (opts.out_dir) SaveCheckpoint(*opts.out_dir / "final.ckpt", state, config, opts.version);
  result.state = std::move(state);
  return result;
}

inline TrainResult RunTraining(const TrainConfig& config, const Corpus& corpus,
                               const RunOptions& opts = {}) {
  return ContinueTraining(InitialState(config), config, corpus, opts);
}

// ---------------------------------------------------------------------------
// Ablation grids.
// ---------------------------------------------------------------------------

enum class AblationAxis { kLoss, kSwitches, kDterms };

inline AblationAxis ParseAxis(const std::string& s) {
  if (s == "loss") return AblationAxis::kLoss;
  if (s == "switches") return AblationAxis::kSwitches;
  if (s == "dterms") return AblationAxis::kDterms;
  throw ConfigError("unknown ablation axis '" + s + "' (expected loss, switches or dterms)");
}

struct AblationCell {
  std::string label;
  TrainConfig config;
  std::optional<EvalReport> report;
  std::string error;
};

/// The five switch rows, in table order.
inline std::vector<std::array<bool, 3>> SwitchRows() {
  return {{true, false, false}, {false, false, true}, {false, true, true},
          {true, false, true},  {true, true, true}};
}

/// d values for the cosine-terms axis: none, half, the partial setting of
/// the base config, all.
inline std::vector<std::size_t> DtermValues(std::size_t embedding_dim, std::size_t partial) {
  std::vector<std::size_t> d = {0, embedding_dim / 2, partial, embedding_dim};
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

inline std::vector<AblationCell> AblationCells(const TrainConfig& base, AblationAxis axis) {
  std::vector<AblationCell> cells;
  switch (axis) {
    case AblationAxis::kLoss:
      for (LossKind k : {LossKind::kEcwBce, LossKind::kGe2eSoftmax, LossKind::kGe2eXs}) {
        AblationCell c{LossName(k), base, std::nullopt, ""};
        c.config.loss = k;
        cells.push_back(c);
      }
      break;
    case AblationAxis::kSwitches:
      for (const auto& row : SwitchRows()) {
        AblationCell c{"", base, std::nullopt, ""};
        SwitchConfig& s = c.config.model.head.switches;
        s.cosine_to_output = row[0];
        s.cosine_to_network = row[1];
        s.network = row[2];
        // Plain cosine scoring uses every dimension.
        if (s.cosine_to_output && !s.network) s.d = c.config.model.embedder.embedding_dim;
        c.label = s.Label();
        cells.push_back(c);
      }
      break;
    case AblationAxis::kDterms:
      for (std::size_t d : DtermValues(base.model.embedder.embedding_dim, base.model.head.switches.d)) {
        AblationCell c{"", base, std::nullopt, ""};
        SwitchConfig& s = c.config.model.head.switches;
        // Without cosine terms only the decision network is left.
        s = d == 0 ? SwitchConfig::Make(false, false, true, 0) : SwitchConfig::Make(true, true, true, d);
        c.label = s.Label();
        cells.push_back(c);
      }
      break;
  }
  return cells;
}

/// Trains every cell from the same seed on the same corpus; a cell whose
/// config is invalid or whose training fails records the error and is skipped.
inline std::vector<AblationCell> AblationGrid(const TrainConfig& base, AblationAxis axis,
                                              const Corpus& corpus, const RunOptions& opts = {}) {
  std::vector<AblationCell> cells = AblationCells(base, axis);
  for (AblationCell& cell : cells) {
    try {
      cell.config.Validate();
      RunOptions cell_opts = opts;
      cell_opts.out_dir.reset();
      cell_opts.evaluate = false;
      TrainResult r = RunTraining(cell.config, corpus, cell_opts);
      cell.report = Evaluate(r.state.model, corpus.trials, corpus.features);
    } catch (const Error& e) {
      cell.error = e.what();
    }
  }
  return cells;
}

inline std::string AblationCsv(const std::vector<AblationCell>& cells, AblationAxis axis,
                               const std::string& preamble = "") {
  std::ostringstream os;
  os.precision(9);
  os << preamble;
  if (axis == AblationAxis::kLoss)
    os << "loss";
  else
    os << "A,B,C,d";
  os << ",eer_clean,eer_noisy,average_eer,status\n";
  for (const AblationCell& c : cells) {
    const SwitchConfig& s = c.config.model.head.switches;
    if (axis == AblationAxis::kLoss)
      os << LossName(c.config.loss);
    else
      os << (s.cosine_to_output ? "ON" : "OFF") << ',' << (s.cosine_to_network ? "ON" : "OFF")
         << ',' << (s.network ? "ON" : "OFF") << ',' << s.d;
    if (c.report) {
      os << ',' << ConditionEer(*c.report, "clean").value_or(NAN) << ','
         << ConditionEer(*c.report, "noisy").value_or(NAN) << ',' << c.report->average_eer << ",ok\n";
    } else {
      std::string err = c.error;
      for (char& ch : err)
        if (ch == ',' || ch == '\n') ch = ';';
      os << ",,,,error: " << err << '\n';
    }
  }
  return os.str();
}

}  // namespace drv
