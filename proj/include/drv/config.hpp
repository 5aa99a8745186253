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

// Command-line configuration document and exit-code mapping.
//
// A config file is a JSON object with the optional keys
//   "corpus"  corpus directory (train, eval, ablate)
//   "out"     output directory
//   "trials"  {"<condition>": "<trial list path>"}, replaces the corpus lists
//   "synth"   corpus generation settings (subset of the manifest config)
//   "train"   training settings, see TrainConfigFromJson
// Unknown keys anywhere are rejected.

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>  // nlohmann, vendored

#include "drv/binary_io.hpp"
#include "drv/corpus.hpp"
#include "drv/errors.hpp"
#include "drv/json_util.hpp"
#include "drv/trainer.hpp"

namespace drv {

#ifdef DRV_VERSION
inline constexpr const char* kVersion = DRV_VERSION;
#else
inline constexpr const char* kVersion = "unknown";
#endif

// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // anything not listed below; also: every ablation cell failed
  kExitConfig = 2,
  kExitIo = 3,
  kExitNonFinite = 4,
  kExitMismatch = 5,
  kExitGradCheck = 6,
};

struct CliConfig {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> out;
  std::map<std::string, std::filesystem::path> trials;
  CorpusConfig synth;
  TrainConfig train;
  bool train_given = false;  // the file had a "train" section
  bool train_seed_given = false, synth_seed_given = false;
};

/// Partial corpus settings on top of `base`.
inline CorpusConfig CorpusConfigOverride(const nlohmann::json& j, CorpusConfig base,
                                         const std::string& path = "synth") {
  JsonObjectReader r(j, path);
  r.AllowOnly({"mode", "train_speakers", "train_utts", "eval_speakers", "eval_utts", "min_frames",
               "max_frames", "seed", "sample_rate", "centroid_sd", "ar_coeff", "innovation_sd",
               "train_noisy_copies", "train_snr_db", "eval_snr_db", "gain_db_range",
               "n_enroll_utts", "n_target_trials", "n_nontarget_trials"});
  if (r.Has("mode")) {
    std::string mode;
    r.Get("mode", mode);
    try {
      base.mode = ParseMode(mode);
    } catch (const Error& e) {
      throw ConfigError("config key '" + r.Key("mode") + "': " + e.what());
    }
  }
  r.Get("train_speakers", base.train_speakers);
  r.Get("train_utts", base.train_utts);
  r.Get("eval_speakers", base.eval_speakers);
  r.Get("eval_utts", base.eval_utts);
  r.Get("min_frames", base.min_frames);
  r.Get("max_frames", base.max_frames);
  r.Get("seed", base.seed);
  r.Get("sample_rate", base.sample_rate);
  r.Get("centroid_sd", base.feature.centroid_sd);
  r.Get("ar_coeff", base.feature.ar_coeff);
  r.Get("innovation_sd", base.feature.innovation_sd);
  r.Get("train_noisy_copies", base.train_noisy_copies);
  r.Get("gain_db_range", base.gain_db_range);
  r.Get("n_enroll_utts", base.n_enroll_utts);
  r.Get("n_target_trials", base.n_target_trials);
  r.Get("n_nontarget_trials", base.n_nontarget_trials);
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!r.Has(key)) return;
    const nlohmann::json& v = r.At(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError("config key '" + r.Key(key) + "' must be [lo, hi], got " + v.dump());
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  range("train_snr_db", base.train_snr_lo, base.train_snr_hi);
  range("eval_snr_db", base.eval_snr_lo, base.eval_snr_hi);
  return base;
}

inline CliConfig CliConfigFromJson(const nlohmann::json& j) {
  JsonObjectReader r(j, "");
  r.AllowOnly({"corpus", "out", "trials", "synth", "train"});
  CliConfig c;
  std::string s;
  if (r.Has("corpus")) {
    r.Get("corpus", s);
    c.corpus = s;
  }
  if (r.Has("out")) {
    r.Get("out", s);
    c.out = s;
  }
  if (r.Has("trials")) {
    JsonObjectReader t(r.At("trials"), "trials");
    for (const auto& [condition, value] : r.At("trials").items()) {
      if (!value.is_string())
        throw ConfigError("config key '" + t.Key(condition) + "' must be a path string");
      c.trials[condition] = value.get<std::string>();
    }
  }
  if (r.Has("synth")) {
    c.synth = CorpusConfigOverride(r.At("synth"), c.synth);
    c.synth_seed_given = r.At("synth").contains("seed");
  }
  if (r.Has("train")) {
    c.train = TrainConfigFromJson(r.At("train"), c.train, "train");
    c.train_given = true;
    c.train_seed_given = r.At("train").contains("seed");
  }
  return c;
}

inline CliConfig LoadCliConfig(const std::filesystem::path& path) {
  const Bytes raw = ReadFileBytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  return CliConfigFromJson(j);
}

/// DRV_SEED as an unsigned integer, if set.
inline std::optional<std::uint64_t> SeedFromEnvironment() {
  const char* v = std::getenv("DRV_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long seed = std::strtoull(v, &end, 10);
  if (errno != 0 || *end != '\0' || *v == '-')
    throw ConfigError("DRV_SEED must be an unsigned integer, got '" + std::string(v) + "'");
  return seed;
}

inline int ExitCodeFor(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const TrainingError*>(&e)) return kExitNonFinite;
  if (dynamic_cast<const MismatchError*>(&e)) return kExitMismatch;
  return kExitFailure;
}

/// '#'-prefixed header lines carrying version and config for CSV artifacts.
inline std::string CsvPreamble(const nlohmann::ordered_json& config) {
  return std::string("# version: ") + kVersion + "\n# config: " + config.dump() + "\n";
}

}  // namespace drv
