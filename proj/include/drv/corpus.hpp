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
  Deterministic synthetic speaker corpus.

  Speakers:   three formants drawn from disjoint bands (F1 300-900 Hz,
              F2 1000-2200 Hz, F3 2400-3400 Hz), pitch uniform in 80-300 Hz,
              and a 40-dim feature centroid with i.i.d. N(0, centroid_sd^2)
              entries.
  Waveform:   harmonics of a jittered pitch up to 3800 Hz, each weighted by
              Lorentzian formant resonances, random phases, peak 0.25,
              quantized to the 16-bit grid.
  Feature:    frame_t = centroid + z_t with AR(1) z_t = 0.9 z_{t-1} + 0.5 e_t,
              z_0 drawn from the stationary distribution.
  Noisy copy: gain then additive white noise at a target SNR (waveform), or
              a log-power offset plus Gaussian noise whose variance is the
              feature variance scaled down by the SNR (feature mode).

  Every speaker and utterance draws from its own stream keyed by
  (seed, id), so generation order never changes the output.
*/

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>  // nlohmann, vendored

#include "drv/batching.hpp"
#include "drv/binary_io.hpp"
#include "drv/features.hpp"
#include "drv/rng.hpp"
#include "drv/trials.hpp"
#include "drv/wav.hpp"

namespace drv {

enum class SynthMode { kWaveform, kFeature };
enum class Split { kTrain, kEval };

inline const char* ModeName(SynthMode m) { return m == SynthMode::kWaveform ? "waveform" : "feature"; }
inline SynthMode ParseMode(const std::string& s) {
  if (s == "waveform") return SynthMode::kWaveform;
  if (s == "feature") return SynthMode::kFeature;
  throw ConfigError("unknown synth mode '" + s + "' (expected waveform or feature)");
}

inline constexpr std::size_t kMinUtteranceFrames = 20;
inline constexpr std::size_t kMaxUtteranceFrames = 200;

struct SpeakerPrototype {
  std::string speaker_id;
  Split split = Split::kTrain;
  std::array<double, 3> formants{};  // Hz, strictly increasing
  double pitch = 0;                  // Hz
  std::vector<double> feature_centroid;
};

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string condition = "clean";
  std::size_t length_frames = 0;
  std::string source_utt;  // clean parent of a noisy copy
  double snr_db = 0;
  double gain_db = 0;
};

struct Utterance {
  UtteranceRecord record;
  std::variant<PcmSignal, FeatureSequence> payload;
};

struct FeatureModeParams {
  double centroid_sd = 2.0;
  double ar_coeff = 0.9;
  double innovation_sd = 0.5;
};

inline constexpr std::array<std::array<double, 2>, 3> kFormantBands = {
    {{300.0, 900.0}, {1000.0, 2200.0}, {2400.0, 3400.0}}};

inline SpeakerPrototype GenSpeaker(Rng& rng, const std::string& speaker_id,
                                   std::size_t feature_dim = kNumMelBins,
                                   const FeatureModeParams& fm = {}) {
  SpeakerPrototype p;
  p.speaker_id = speaker_id;
  for (std::size_t k = 0; k < 3; ++k)
    p.formants[k] = rng.Uniform(kFormantBands[k][0], kFormantBands[k][1]);
  p.pitch = rng.Uniform(80.0, 300.0);
  p.feature_centroid.resize(feature_dim);
  for (double& c : p.feature_centroid) c = fm.centroid_sd * rng.Gaussian();
  return p;
}

/// Number of samples that frame into exactly `frames` frames.
inline std::size_t SamplesForFrames(std::size_t frames, int sample_rate,
                                    const FrontendOptions& opts = {}) {
  return opts.FrameLength(sample_rate) + (frames - 1) * opts.FrameShift(sample_rate);
}

inline Utterance GenUtterance(const SpeakerPrototype& proto, SynthMode mode,
                              std::size_t length_frames, Rng& rng,
                              const std::string& utt_id, const FeatureModeParams& fm = {},
                              int sample_rate = 16000) {
  if (length_frames < kMinUtteranceFrames || length_frames > kMaxUtteranceFrames)
    throw ConfigError("utterance length " + std::to_string(length_frames) +
                      " frames outside [" + std::to_string(kMinUtteranceFrames) + ", " +
                      std::to_string(kMaxUtteranceFrames) + "]");
  Utterance u;
  u.record.utt_id = utt_id;
  u.record.speaker_id = proto.speaker_id;
  u.record.length_frames = length_frames;

  if (mode == SynthMode::kFeature) {
    const std::size_t dim = proto.feature_centroid.size();
    FeatureSequence f;
    f.num_frames = length_frames;
    f.dim = dim;
    f.values.resize(length_frames * dim);
    const double stationary_sd = fm.innovation_sd / std::sqrt(1.0 - fm.ar_coeff * fm.ar_coeff);
    std::vector<double> z(dim);
    for (double& v : z) v = stationary_sd * rng.Gaussian();
    for (std::size_t t = 0; t < length_frames; ++t) {
      if (t > 0)
        for (double& v : z) v = fm.ar_coeff * v + fm.innovation_sd * rng.Gaussian();
      for (std::size_t k = 0; k < dim; ++k)
        f.values[t * dim + k] = float(proto.feature_centroid[k] + z[k]);
    }
    u.payload = std::move(f);
    return u;
  }

  const double f0 = proto.pitch * (1.0 + 0.03 * rng.Gaussian());
  std::array<double, 3> formants = proto.formants;
  for (double& f : formants) f *= 1.0 + 0.02 * rng.Gaussian();
  constexpr std::array<double, 3> kBandwidths = {80.0, 120.0, 160.0};
  PcmSignal sig;
  sig.sample_rate = sample_rate;
  sig.samples.assign(SamplesForFrames(length_frames, sample_rate), 0.0);
  for (int k = 1; k * f0 < 3800.0; ++k) {
    const double fk = k * f0;
    double amp = 0;
    for (std::size_t m = 0; m < 3; ++m) {
      const double x = (fk - formants[m]) / kBandwidths[m];
      amp += 1.0 / (1.0 + x * x);
    }
    const double phase = 2.0 * std::numbers::pi * rng.Uniform();
    const double w = 2.0 * std::numbers::pi * fk / sample_rate;
    for (std::size_t n = 0; n < sig.samples.size(); ++n)
      sig.samples[n] += amp * std::sin(w * double(n) + phase);
  }
  double peak = 0;
  for (double s : sig.samples) peak = std::max(peak, std::abs(s));
  const double scale = peak > 0 ? 0.25 / peak : 0.0;
  for (double& s : sig.samples) s = double(QuantizeSample(s * scale)) / 32768.0;
  u.payload = std::move(sig);
  return u;
}

inline double MeanPower(const std::vector<double>& x) {
  double p = 0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / double(x.size());
}

/// Noisy copy of a clean utterance at `snr_db` after a channel gain.
inline Utterance Corrupt(const Utterance& clean, double snr_db, double gain_db, Rng& rng) {
  if (!(snr_db >= -10.0 && snr_db <= 60.0))
    throw ConfigError("snr_db " + std::to_string(snr_db) + " outside [-10, 60]");
  Utterance out = clean;
  out.record.condition = "noisy";
  out.record.source_utt = clean.record.utt_id;
  out.record.utt_id = clean.record.utt_id + "-noisy";
  out.record.snr_db = snr_db;
  out.record.gain_db = gain_db;
  const double snr = std::pow(10.0, snr_db / 10.0);

  if (auto* sig = std::get_if<PcmSignal>(&out.payload)) {
    const double g = std::pow(10.0, gain_db / 20.0);
    for (double& s : sig->samples) s *= g;
    std::vector<double> noise(sig->samples.size());
    for (double& n : noise) n = rng.Gaussian();
    const double p_sig = MeanPower(sig->samples), p_noise = MeanPower(noise);
    const double k = p_noise > 0 ? std::sqrt(p_sig / (p_noise * snr)) : 0.0;
    for (std::size_t i = 0; i < noise.size(); ++i)
      sig->samples[i] = std::clamp(sig->samples[i] + k * noise[i], -1.0, 1.0);
    return out;
  }

  auto& f = std::get<FeatureSequence>(out.payload);
  double mean = 0;
  for (float v : f.values) mean += v;
  mean /= double(f.values.size());
  double var = 0;
  for (float v : f.values) var += (v - mean) * (v - mean);
  var /= double(f.values.size());
  const double noise_sd = std::sqrt(var / snr);
  const double offset = gain_db * std::numbers::ln10 / 10.0;  // log-power shift
  for (float& v : f.values) v = float(double(v) + offset + noise_sd * rng.Gaussian());
  return out;
}

struct CorpusConfig {
  SynthMode mode = SynthMode::kFeature;
  std::size_t train_speakers = 64;
  std::size_t train_utts = 10;
  std::size_t eval_speakers = 32;
  std::size_t eval_utts = 8;
  std::size_t min_frames = 40;
  std::size_t max_frames = 120;
  std::uint64_t seed = 7;
  int sample_rate = 16000;
  FeatureModeParams feature;
  // Each training utterance also gets a noisy copy drawn from this range;
  // evaluation noise uses a different, harsher range.
  bool train_noisy_copies = true;
  double train_snr_lo = 10.0, train_snr_hi = 30.0;
  double eval_snr_lo = 0.0, eval_snr_hi = 10.0;
  double gain_db_range = 6.0;
  std::size_t n_enroll_utts = 3;
  std::size_t n_target_trials = 1000;
  std::size_t n_nontarget_trials = 1000;

  static CorpusConfig Desk() { return {}; }

  void Validate() const {
    if (train_speakers + eval_speakers == 0) throw ConfigError("corpus: no speakers requested");
    if (min_frames < kMinUtteranceFrames || max_frames > kMaxUtteranceFrames || min_frames > max_frames)
      throw ConfigError("corpus: utterance length range [" + std::to_string(min_frames) + ", " +
                        std::to_string(max_frames) + "] outside [20, 200]");
    if (sample_rate < 8000) throw ConfigError("corpus: sample_rate below 8000");
  }
};

struct Corpus {
  CorpusConfig config;
  std::vector<SpeakerPrototype> speakers;
  std::vector<UtteranceRecord> utterances;
  std::map<std::string, FeatureSequence> features;
  std::map<std::string, PcmSignal> waveforms;  // waveform mode only
  std::map<std::string, TrialSet> trials;      // by condition

  const FeatureSequence& Features(const std::string& utt_id) const {
    auto it = features.find(utt_id);
    if (it == features.end()) throw DataError("utterance '" + utt_id + "' not in corpus");
    return it->second;
  }

  const SpeakerPrototype& Speaker(const std::string& id) const {
    for (const SpeakerPrototype& s : speakers)
      if (s.speaker_id == id) return s;
    throw DataError("speaker '" + id + "' not in corpus");
  }

  /// Training speakers with all their utterances (clean and noisy copies).
  SpeakerPool TrainPool() const {
    SpeakerPool pool;
    std::map<std::string, std::size_t> index;
    for (const SpeakerPrototype& s : speakers)
      if (s.split == Split::kTrain) {
        index[s.speaker_id] = pool.size();
        pool.push_back({s.speaker_id, {}});
      }
    for (const UtteranceRecord& u : utterances) {
      auto it = index.find(u.speaker_id);
      if (it != index.end()) pool[it->second].second.push_back(u.utt_id);
    }
    return pool;
  }

  /// Utterances of `split` speakers in `condition`, grouped by speaker.
  std::vector<std::pair<std::string, std::vector<std::string>>> UtterancesBySpeaker(
      Split split, const std::string& condition) const {
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    std::map<std::string, std::size_t> index;
    for (const SpeakerPrototype& s : speakers)
      if (s.split == split) {
        index[s.speaker_id] = out.size();
        out.push_back({s.speaker_id, {}});
      }
    for (const UtteranceRecord& u : utterances) {
      auto it = index.find(u.speaker_id);
      if (it != index.end() && u.condition == condition) out[it->second].second.push_back(u.utt_id);
    }
    return out;
  }

  std::size_t CountCondition(const std::string& condition) const {
    std::size_t n = 0;
    for (const UtteranceRecord& u : utterances) n += u.condition == condition;
    return n;
  }
};

/**
   Samples verification trials among eval-split speakers of one condition.

   Target trials take n_enroll + 1 distinct utterances of one speaker;
   nontarget trials enroll on one speaker and test on an utterance of a
   different speaker.  Every eval speaker needs n_enroll + 2 utterances.
*/
inline TrialSet BuildTrials(const Corpus& corpus, const std::string& condition, std::size_t n_enroll,
                            std::size_t n_target, std::size_t n_nontarget, Rng& rng) {
  if (n_enroll < 1) throw ConfigError("trials: n_enroll must be >= 1");
  const auto by_speaker = corpus.UtterancesBySpeaker(Split::kEval, condition);
  for (const auto& [spk, utts] : by_speaker)
    if (utts.size() < n_enroll + 2)
      throw DataError("trials: speaker " + spk + " has " + std::to_string(utts.size()) + " " +
                      condition + " utterances, needs " + std::to_string(n_enroll + 2));
  if (by_speaker.size() < (n_nontarget > 0 ? 2u : 1u))
    throw DataError("trials: not enough eval speakers for " + condition + " trials");

  TrialSet set;
  for (std::size_t i = 0; i < n_target; ++i) {
    const auto& utts = by_speaker[rng.Below(by_speaker.size())].second;
    auto pick = rng.SampleWithoutReplacement(utts.size(), n_enroll + 1);
    Trial t{{}, utts[pick.back()], true, condition};
    for (std::size_t k = 0; k < n_enroll; ++k) t.enroll.push_back(utts[pick[k]]);
    set.trials.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < n_nontarget; ++i) {
    const std::size_t s = rng.Below(by_speaker.size());
    std::size_t other = rng.Below(by_speaker.size() - 1);
    if (other >= s) ++other;
    const auto& utts = by_speaker[s].second;
    const auto& other_utts = by_speaker[other].second;
    Trial t{{}, other_utts[rng.Below(other_utts.size())], false, condition};
    for (std::size_t k : rng.SampleWithoutReplacement(utts.size(), n_enroll)) t.enroll.push_back(utts[k]);
    set.trials.push_back(std::move(t));
  }
  return set;
}

inline std::string SpeakerId(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%04zu", index);
  return buf;
}

inline std::string UtteranceId(const std::string& speaker, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-u%03zu", index);
  return speaker + buf;
}

inline void AddUtterance(Corpus& corpus, Utterance u, const FrontendOptions& frontend = {}) {
  const std::string id = u.record.utt_id;
  if (auto* sig = std::get_if<PcmSignal>(&u.payload)) {
    // Store exactly what a WAV round trip would give back.
    for (double& s : sig->samples) s = double(QuantizeSample(s)) / 32768.0;
    corpus.features[id] = LogFbank(*sig, frontend);
    corpus.waveforms[id] = std::move(*sig);
  } else {
    corpus.features[id] = std::get<FeatureSequence>(u.payload);
  }
  corpus.utterances.push_back(std::move(u.record));
}

/// Generates the full corpus (speakers, clean and noisy utterances, trial
/// lists) as a pure function of `config`.
inline Corpus GenerateCorpus(const CorpusConfig& config) {
  config.Validate();
  Corpus corpus;
  corpus.config = config;
  const std::size_t n_speakers = config.train_speakers + config.eval_speakers;
  for (std::size_t s = 0; s < n_speakers; ++s) {
    const std::string id = SpeakerId(s);
    Rng rng = Rng::ForKey(config.seed, id);
    SpeakerPrototype proto = GenSpeaker(rng, id, kNumMelBins, config.feature);
    proto.split = s < config.train_speakers ? Split::kTrain : Split::kEval;
    corpus.speakers.push_back(std::move(proto));
  }
  for (const SpeakerPrototype& proto : corpus.speakers) {
    const bool train = proto.split == Split::kTrain;
    const std::size_t n_utts = train ? config.train_utts : config.eval_utts;
    for (std::size_t k = 0; k < n_utts; ++k) {
      const std::string utt_id = UtteranceId(proto.speaker_id, k);
      Rng rng = Rng::ForKey(config.seed, utt_id);
      const std::size_t length =
          config.min_frames + std::size_t(rng.Below(config.max_frames - config.min_frames + 1));
      Utterance clean = GenUtterance(proto, config.mode, length, rng, utt_id, config.feature,
                                     config.sample_rate);
      const bool make_noisy = train ? config.train_noisy_copies : true;
      std::optional<Utterance> noisy;
      if (make_noisy) {
        Rng nrng = Rng::ForKey(config.seed, utt_id + "#noise");
        const double snr = train ? nrng.Uniform(config.train_snr_lo, config.train_snr_hi)
                                 : nrng.Uniform(config.eval_snr_lo, config.eval_snr_hi);
        const double gain = nrng.Uniform(-config.gain_db_range, config.gain_db_range);
        noisy = Corrupt(clean, snr, gain, nrng);
      }
      AddUtterance(corpus, std::move(clean));
      if (noisy) AddUtterance(corpus, std::move(*noisy));
    }
  }
  if (config.eval_speakers > 0) {
    for (const char* condition : {"clean", "noisy"}) {
      Rng rng = Rng::ForKey(config.seed, std::string("trials#") + condition);
      corpus.trials[condition] = BuildTrials(corpus, condition, config.n_enroll_utts,
                                             config.n_target_trials, config.n_nontarget_trials, rng);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// On-disk layout:
//   manifest.json            corpus description (see README for the schema)
//   wav/<utt>.wav | feats/<utt>.fbk
//   trials_<condition>.txt
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json CorpusConfigToJson(const CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = ModeName(c.mode);
  j["train_speakers"] = c.train_speakers;
  j["train_utts"] = c.train_utts;
  j["eval_speakers"] = c.eval_speakers;
  j["eval_utts"] = c.eval_utts;
  j["min_frames"] = c.min_frames;
  j["max_frames"] = c.max_frames;
  j["seed"] = c.seed;
  j["sample_rate"] = c.sample_rate;
  j["centroid_sd"] = c.feature.centroid_sd;
  j["ar_coeff"] = c.feature.ar_coeff;
  j["innovation_sd"] = c.feature.innovation_sd;
  j["train_noisy_copies"] = c.train_noisy_copies;
  j["train_snr_db"] = {c.train_snr_lo, c.train_snr_hi};
  j["eval_snr_db"] = {c.eval_snr_lo, c.eval_snr_hi};
  j["gain_db_range"] = c.gain_db_range;
  j["n_enroll_utts"] = c.n_enroll_utts;
  j["n_target_trials"] = c.n_target_trials;
  j["n_nontarget_trials"] = c.n_nontarget_trials;
  return j;
}

inline CorpusConfig CorpusConfigFromJson(const nlohmann::json& j) {
  CorpusConfig c;
  c.mode = ParseMode(j.at("mode").get<std::string>());
  c.train_speakers = j.at("train_speakers");
  c.train_utts = j.at("train_utts");
  c.eval_speakers = j.at("eval_speakers");
  c.eval_utts = j.at("eval_utts");
  c.min_frames = j.at("min_frames");
  c.max_frames = j.at("max_frames");
  c.seed = j.at("seed");
  c.sample_rate = j.at("sample_rate");
  c.feature.centroid_sd = j.at("centroid_sd");
  c.feature.ar_coeff = j.at("ar_coeff");
  c.feature.innovation_sd = j.at("innovation_sd");
  c.train_noisy_copies = j.at("train_noisy_copies");
  c.train_snr_lo = j.at("train_snr_db").at(0);
  c.train_snr_hi = j.at("train_snr_db").at(1);
  c.eval_snr_lo = j.at("eval_snr_db").at(0);
  c.eval_snr_hi = j.at("eval_snr_db").at(1);
  c.gain_db_range = j.at("gain_db_range");
  c.n_enroll_utts = j.at("n_enroll_utts");
  c.n_target_trials = j.at("n_target_trials");
  c.n_nontarget_trials = j.at("n_nontarget_trials");
  return c;
}

inline std::string PayloadPath(const Corpus& corpus, const std::string& utt_id) {
  return corpus.config.mode == SynthMode::kWaveform ? "wav/" + utt_id + ".wav"
                                                    : "feats/" + utt_id + ".fbk";
}

inline nlohmann::ordered_json CorpusManifest(const Corpus& corpus, const std::string& version) {
  nlohmann::ordered_json m;
  m["format"] = "drvec-corpus-1";
  m["version"] = version;
  m["config"] = CorpusConfigToJson(corpus.config);
  std::size_t n_train = 0, train_clean = 0, eval_clean = 0;
  for (const SpeakerPrototype& s : corpus.speakers) n_train += s.split == Split::kTrain;
  for (const UtteranceRecord& u : corpus.utterances)
    if (u.condition == "clean") (corpus.Speaker(u.speaker_id).split == Split::kTrain ? train_clean : eval_clean)++;
  // train_/eval_utterances count clean recordings; noisy copies are listed
  // separately.
  m["counts"] = {{"speakers", corpus.speakers.size()},
                 {"train_speakers", n_train},
                 {"eval_speakers", corpus.speakers.size() - n_train},
                 {"train_utterances", train_clean},
                 {"eval_utterances", eval_clean},
                 {"clean_utterances", corpus.CountCondition("clean")},
                 {"noisy_utterances", corpus.CountCondition("noisy")}};
  nlohmann::ordered_json speakers = nlohmann::ordered_json::array();
  for (const SpeakerPrototype& s : corpus.speakers) {
    nlohmann::ordered_json js;
    js["id"] = s.speaker_id;
    js["split"] = s.split == Split::kTrain ? "train" : "eval";
    js["pitch_hz"] = s.pitch;
    js["formants_hz"] = s.formants;
    js["feature_centroid"] = s.feature_centroid;
    speakers.push_back(std::move(js));
  }
  m["speakers"] = std::move(speakers);
  nlohmann::ordered_json utts = nlohmann::ordered_json::array();
  for (const UtteranceRecord& u : corpus.utterances) {
    nlohmann::ordered_json ju;
    ju["id"] = u.utt_id;
    ju["speaker"] = u.speaker_id;
    ju["condition"] = u.condition;
    ju["length_frames"] = u.length_frames;
    ju["path"] = PayloadPath(corpus, u.utt_id);
    if (u.condition != "clean") {
      ju["source"] = u.source_utt;
      ju["snr_db"] = u.snr_db;
      ju["gain_db"] = u.gain_db;
    }
    utts.push_back(std::move(ju));
  }
  m["utterances"] = std::move(utts);
  nlohmann::ordered_json trials = nlohmann::ordered_json::object();
  for (const auto& [condition, set] : corpus.trials) trials[condition] = "trials_" + condition + ".txt";
  m["trials"] = std::move(trials);
  return m;
}

inline void WriteCorpus(const Corpus& corpus, const std::filesystem::path& dir,
                        const std::string& version) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / (corpus.config.mode == SynthMode::kWaveform ? "wav" : "feats"), ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const UtteranceRecord& u : corpus.utterances) {
    const fs::path path = dir / PayloadPath(corpus, u.utt_id);
    if (corpus.config.mode == SynthMode::kWaveform)
      WriteFileAtomic(path, WriteWav(corpus.waveforms.at(u.utt_id)));
    else
      WriteFileAtomic(path, WriteFeatureFile(corpus.features.at(u.utt_id)));
  }
  for (const auto& [condition, set] : corpus.trials)
    WriteFileAtomic(dir / ("trials_" + condition + ".txt"), FormatTrials(set));
  // Manifest last: its presence marks a complete corpus.
  WriteFileAtomic(dir / "manifest.json", CorpusManifest(corpus, version).dump(2) + "\n");
}

inline Corpus LoadCorpus(const std::filesystem::path& dir, const FrontendOptions& frontend = {}) {
  const Bytes raw = ReadFileBytes(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  Corpus corpus;
  try {
    corpus.config = CorpusConfigFromJson(m.at("config"));
    for (const auto& js : m.at("speakers")) {
      SpeakerPrototype s;
      s.speaker_id = js.at("id");
      s.split = js.at("split") == "train" ? Split::kTrain : Split::kEval;
      s.pitch = js.at("pitch_hz");
      s.formants = js.at("formants_hz");
      s.feature_centroid = js.at("feature_centroid").get<std::vector<double>>();
      corpus.speakers.push_back(std::move(s));
    }
    for (const auto& ju : m.at("utterances")) {
      UtteranceRecord u;
      u.utt_id = ju.at("id");
      u.speaker_id = ju.at("speaker");
      u.condition = ju.at("condition");
      u.length_frames = ju.at("length_frames");
      if (ju.contains("source")) {
        u.source_utt = ju.at("source");
        u.snr_db = ju.at("snr_db");
        u.gain_db = ju.at("gain_db");
      }
      const Bytes payload = ReadFileBytes(dir / ju.at("path").get<std::string>());
      if (corpus.config.mode == SynthMode::kWaveform) {
        PcmSignal sig = ParseWav(payload);
        corpus.features[u.utt_id] = LogFbank(sig, frontend);
        corpus.waveforms[u.utt_id] = std::move(sig);
      } else {
        corpus.features[u.utt_id] = ParseFeatureFile(payload);
      }
      corpus.Speaker(u.speaker_id);  // must exist
      corpus.utterances.push_back(std::move(u));
    }
    for (const auto& [condition, file] : m.at("trials").items()) {
      const Bytes text = ReadFileBytes(dir / file.get<std::string>());
      corpus.trials[condition] = ParseTrials(std::string(text.begin(), text.end()), condition);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return corpus;
}

}  // namespace drv
