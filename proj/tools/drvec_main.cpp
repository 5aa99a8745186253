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

// drvec: corpus synthesis, training, evaluation, ablation grids and gradient
// checks.  Exit codes are listed in drv/config.hpp and the README.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drv/config.hpp"
#include "drv/corpus.hpp"
#include "drv/eval.hpp"
#include "drv/grad_suite.hpp"
#include "drv/trainer.hpp"

namespace fs = std::filesystem;
using namespace drv;

namespace {

void MakeDirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void WriteText(const fs::path& path, const std::string& text) {
  WriteFileAtomic(path, Bytes(text.begin(), text.end()));
}

// "ON,ON,OFF,24" or "A=ON,B=ON,C=OFF,d=24".
SwitchConfig ParseSwitches(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    const auto eq = p.find('=');
    parts.push_back(eq == std::string::npos ? p : p.substr(eq + 1));
  }
  auto on = [&](const std::string& v) {
    if (v == "ON" || v == "on" || v == "1") return true;
    if (v == "OFF" || v == "off" || v == "0") return false;
    throw ConfigError("--switches: expected ON or OFF, got '" + v + "'");
  };
  if (parts.size() != 4) throw ConfigError("--switches: expected A,B,C,d, got '" + text + "'");
  std::size_t d = 0;
  try {
    std::size_t used = 0;
    d = std::stoul(parts[3], &used);
    if (used != parts[3].size() || parts[3][0] == '-') throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw ConfigError("--switches: bad d '" + parts[3] + "'");
  }
  return SwitchConfig::Make(on(parts[0]), on(parts[1]), on(parts[2]), d);
}

// Options shared by train and ablate.
struct TrainFlags {
  std::string config_path, corpus, out, preset;
  std::optional<std::string> loss, switches;
  std::optional<std::size_t> steps, eval_every, crop;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;

  void Register(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--corpus", corpus, "corpus directory (overrides config)");
    cmd->add_option("--out", out, "output directory (overrides config)");
    cmd->add_option("--preset", preset, "model and batch dimensions: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--loss", loss, "ge2e_softmax, ge2e_xs or ecw_bce");
    cmd->add_option("--switches", switches, "head switches A,B,C,d, e.g. ON,ON,ON,24");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--eval-every", eval_every, "held-out evaluation cadence (0: only at the end)");
    cmd->add_option("--crop", crop, "frames per training segment");
    cmd->add_option("--lr", lr, "SGD learning rate");
    cmd->add_option("--seed", seed, "seed (falls back to the config file, then DRV_SEED)");
  }

  // Resolution order: defaults < preset < config file < DRV_SEED (seed only,
  // if the file has none) < flags.
  CliConfig Resolve() const {
    CliConfig c;
    if (!preset.empty() || !config_path.empty()) {
      TrainConfig base;
      if (preset == "paper") {
        base.model = ModelConfig::Paper();
        base.batch = MiniBatchSpec::Paper();
      }
      c.train = base;
    }
    if (!config_path.empty()) {
      const TrainConfig preset_base = c.train;
      c = LoadCliConfig(config_path);
      // Re-apply the file's train section over the preset.
      if (c.train_given) {
        const Bytes raw = ReadFileBytes(config_path);
        c.train = TrainConfigFromJson(nlohmann::json::parse(raw.begin(), raw.end()).at("train"),
                                      preset_base, "train");
      } else {
        c.train = preset_base;
      }
    }
    if (!c.train_seed_given)
      if (auto env = SeedFromEnvironment()) c.train.seed = *env;
    if (!corpus.empty()) c.corpus = corpus;
    if (!out.empty()) c.out = out;
    if (loss) c.train.loss = ParseLossKind(*loss);
    if (switches) c.train.model.head.switches = ParseSwitches(*switches);
    if (steps) c.train.steps = *steps;
    if (eval_every) c.train.eval_every = *eval_every;
    if (crop) c.train.crop_frames = *crop;
    if (lr) c.train.learning_rate = *lr;
    if (seed) c.train.seed = *seed;
    if (!c.corpus) throw ConfigError("no corpus given (--corpus or config key 'corpus')");
    if (!c.out) throw ConfigError("no output directory given (--out or config key 'out')");
    c.train.Validate();
    return c;
  }
};

nlohmann::ordered_json ResolvedJson(const CliConfig& c) {
  nlohmann::ordered_json j;
  j["corpus"] = c.corpus ? c.corpus->string() : "";
  j["out"] = c.out ? c.out->string() : "";
  nlohmann::ordered_json trials = nlohmann::ordered_json::object();
  for (const auto& [cond, path] : c.trials) trials[cond] = path.string();
  j["trials"] = std::move(trials);
  j["train"] = TrainConfigToJson(c.train);
  return j;
}

// Loads the corpus and swaps in trial lists named by the config.
Corpus LoadCorpusFor(const CliConfig& c) {
  Corpus corpus = LoadCorpus(*c.corpus);
  if (!c.trials.empty()) {
    corpus.trials.clear();
    for (const auto& [condition, path] : c.trials) {
      const Bytes text = ReadFileBytes(path);
      corpus.trials[condition] = ParseTrials(std::string(text.begin(), text.end()), condition);
    }
  }
  return corpus;
}

void RequireFeatureDim(const Corpus& corpus, const ModelConfig& model) {
  for (const auto& [id, f] : corpus.features) {
    if (f.dim != model.embedder.feature_dim)
      throw MismatchError("corpus features have dim " + std::to_string(f.dim) + " but the model expects " +
                          std::to_string(model.embedder.feature_dim));
    break;
  }
}

std::string Percent(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100 * *v);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::string config_path, out;
  std::optional<std::size_t> speakers, utts, eval_speakers, eval_utts, min_frames, max_frames;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
};

int CmdSynth(const SynthFlags& f) {
  CliConfig c;
  if (!f.config_path.empty()) c = LoadCliConfig(f.config_path);
  CorpusConfig& cc = c.synth;
  if (!c.synth_seed_given)
    if (auto env = SeedFromEnvironment()) cc.seed = *env;
  if (f.speakers) cc.train_speakers = *f.speakers;
  if (f.utts) cc.train_utts = *f.utts;
  if (f.eval_speakers) cc.eval_speakers = *f.eval_speakers;
  if (f.eval_utts) cc.eval_utts = *f.eval_utts;
  if (f.min_frames) cc.min_frames = *f.min_frames;
  if (f.max_frames) cc.max_frames = *f.max_frames;
  if (f.mode) cc.mode = ParseMode(*f.mode);
  if (f.seed) cc.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (!c.out) throw ConfigError("no output directory given (--out or config key 'out')");

  const Corpus corpus = GenerateCorpus(cc);
  MakeDirs(*c.out);
  WriteCorpus(corpus, *c.out, kVersion);
  const auto counts = CorpusManifest(corpus, kVersion).at("counts");
  std::cout << "corpus " << c.out->string() << " (" << ModeName(cc.mode) << " mode, seed " << cc.seed << ")\n"
            << "  train: " << counts.at("train_speakers") << " speakers, " << counts.at("train_utterances")
            << " utterances";
  if (cc.train_noisy_copies) std::cout << " + " << counts.at("train_utterances") << " noisy copies";
  std::cout << "\n  eval:  " << counts.at("eval_speakers") << " speakers, " << counts.at("eval_utterances")
            << " clean + " << counts.at("eval_utterances") << " noisy utterances\n";
  for (const auto& [condition, set] : corpus.trials)
    std::cout << "  trials_" << condition << ".txt: " << set.NumTargets() << " target, "
              << set.trials.size() - set.NumTargets() << " nontarget\n";
  return kExitOk;
}

int CmdTrain(const TrainFlags& f) {
  const CliConfig c = f.Resolve();
  const Corpus corpus = LoadCorpusFor(c);
  RequireFeatureDim(corpus, c.train.model);
  MakeDirs(*c.out);
  const nlohmann::ordered_json resolved = ResolvedJson(c);

  RunOptions opts;
  opts.out_dir = *c.out;
  opts.version = kVersion;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_row = [&](const TraceRow& row) {
    if (!row.eer_clean && !row.eer_noisy) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("step %zu  loss %.4f  eer clean %s noisy %s  (%.0fs)\n", row.step, row.loss,
                Percent(row.eer_clean).c_str(), Percent(row.eer_noisy).c_str(), secs);
    std::fflush(stdout);
  };
  const TrainResult result = RunTraining(c.train, corpus, opts);
  WriteText(*c.out / "trace.csv", TraceCsv(result.trace, CsvPreamble(resolved)));
  if (result.last_report) {
    nlohmann::ordered_json report = EvalReportJson(*result.last_report, resolved, kVersion);
    report["step"] = result.state.step;
    report["best_step"] = result.state.best_step;
    WriteText(*c.out / "report.json", report.dump(2) + "\n");
    std::printf("final average EER %s (best %s at step %zu)\n", Percent(result.last_report->average_eer).c_str(),
                Percent(result.state.best_eer).c_str(), result.state.best_step);
  }
  return kExitOk;
}

struct EvalFlags {
  std::string config_path, checkpoint, corpus, out;
  std::vector<std::string> trials;  // condition=path
};

int CmdEval(const EvalFlags& f) {
  CliConfig c;
  if (!f.config_path.empty()) c = LoadCliConfig(f.config_path);
  if (!f.corpus.empty()) c.corpus = f.corpus;
  if (!f.out.empty()) c.out = f.out;
  for (const std::string& t : f.trials) {
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--trials expects condition=path, got '" + t + "'");
    c.trials[t.substr(0, eq)] = t.substr(eq + 1);
  }
  if (!c.corpus) throw ConfigError("no corpus given (--corpus or config key 'corpus')");
  if (!c.out) throw ConfigError("no output directory given (--out or config key 'out')");

  const Checkpoint ck = LoadCheckpoint(f.checkpoint);
  if (c.train_given && !(c.train.model == ck.config.model))
    throw MismatchError("checkpoint " + f.checkpoint + " was trained with a different model config (" +
                        ck.config.model.head.switches.Label() + ") than the config file (" +
                        c.train.model.head.switches.Label() + ")");
  c.train = ck.config;
  const Corpus corpus = LoadCorpusFor(c);
  RequireFeatureDim(corpus, ck.config.model);
  if (corpus.trials.empty()) throw DataError("no trial lists to evaluate");
  const EvalReport report = Evaluate(ck.state.model, corpus.trials, corpus.features);

  nlohmann::ordered_json resolved = ResolvedJson(c);
  resolved["checkpoint"] = f.checkpoint;
  resolved["checkpoint_step"] = ck.state.step;
  resolved["checkpoint_version"] = ck.version;
  MakeDirs(*c.out);
  for (const auto& [condition, r] : report.conditions)
    WriteText(*c.out / ("det_" + condition + ".csv"), CsvPreamble(resolved) + DetCsv(r.det));
  nlohmann::ordered_json j = EvalReportJson(report, resolved, kVersion);
  // Wall-clock time is the only field that differs between identical runs.
  j["timestamp"] = std::time(nullptr);
  WriteText(*c.out / "report.json", j.dump(2) + "\n");
  std::cout << "switches " << report.switches.Label() << "\n";
  for (const auto& [condition, r] : report.conditions)
    std::cout << "  " << condition << ": EER " << Percent(r.eer) << " (" << r.n_target << " target, "
              << r.n_nontarget << " nontarget)\n";
  std::cout << "  average: EER " << Percent(report.average_eer) << "\n";
  return kExitOk;
}

int CmdAblate(const TrainFlags& f, const std::string& axis_name) {
  const AblationAxis axis = ParseAxis(axis_name);
  const CliConfig c = f.Resolve();
  const Corpus corpus = LoadCorpusFor(c);
  RequireFeatureDim(corpus, c.train.model);
  MakeDirs(*c.out);
  nlohmann::ordered_json resolved = ResolvedJson(c);
  resolved["axis"] = axis_name;

  std::size_t ok = 0;
  const std::vector<AblationCell> cells = AblationGrid(c.train, axis, corpus);
  for (const AblationCell& cell : cells) {
    if (cell.report) {
      ++ok;
      std::cout << cell.label << ": clean " << Percent(ConditionEer(*cell.report, "clean")) << " noisy "
                << Percent(ConditionEer(*cell.report, "noisy")) << "\n";
    } else {
      std::cout << cell.label << ": error: " << cell.error << "\n";
    }
  }
  const fs::path csv = *c.out / ("ablate_" + axis_name + ".csv");
  WriteText(csv, AblationCsv(cells, axis, CsvPreamble(resolved)));
  std::cout << "wrote " << csv.string() << " (" << ok << " of " << cells.size() << " cells ok)\n";
  return ok > 0 ? kExitOk : kExitFailure;
}

struct GradFlags {
  std::string dims = "desk", fault, out;
};

int CmdGradcheck(const GradFlags& f) {
  GradSuiteOptions opts;
  if (f.dims == "tiny") {
    opts.model.embedder = {1, 6, 4, 5, 7};
    opts.model.head.switches = SwitchConfig::Make(true, true, true, 3);
    opts.model.head.hidden_dim = 5;
  }
  if (f.fault == "tanh-derivative") internal::TanhDerivativeFault() = 1.05;
  const std::vector<GradCheckResult> results = RunGradientSuite(opts);
  internal::TanhDerivativeFault() = 1.0;

  std::vector<std::string> failed;
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  std::printf("%-20s %-12s %s\n", "op", "max_rel_err", "status");
  for (const GradCheckResult& r : results) {
    std::printf("%-20s %-12.3e %s\n", r.op.c_str(), r.max_rel_err, r.pass ? "ok" : "FAIL");
    checks.push_back({{"op", r.op}, {"max_rel_err", r.max_rel_err}, {"pass", r.pass}, {"seconds", r.seconds}});
    if (!r.pass) failed.push_back(r.op);
  }
  if (!f.out.empty()) {
    TrainConfig probe;
    probe.model = opts.model;
    nlohmann::ordered_json j;
    j["version"] = kVersion;
    j["config"] = {{"dims", f.dims}, {"tolerance", opts.tolerance}, {"fault", f.fault},
                   {"embedder", TrainConfigToJson(probe).at("embedder")},
                   {"head", TrainConfigToJson(probe).at("head")}};
    j["checks"] = std::move(checks);
    j["failed"] = failed;
    const fs::path p(f.out);
    if (p.has_parent_path()) MakeDirs(p.parent_path());
    WriteText(p, j.dump(2) + "\n");
  }
  if (failed.empty()) {
    std::printf("all %zu checks passed (tolerance %.0e)\n", results.size(), opts.tolerance);
    return kExitOk;
  }
  std::string list;
  for (const std::string& op : failed) list += (list.empty() ? "" : ", ") + op;
  std::fprintf(stderr, "gradient check failed: %s\n", list.c_str());
  return kExitGradCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-residual speaker verification toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SynthFlags synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  cmd_synth->add_option("--config", synth.config_path, "JSON config file ('synth' and 'out' keys)");
  cmd_synth->add_option("--out", synth.out, "output directory");
  cmd_synth->add_option("--speakers", synth.speakers, "training speakers");
  cmd_synth->add_option("--utts", synth.utts, "clean utterances per training speaker");
  cmd_synth->add_option("--eval-speakers", synth.eval_speakers, "held-out speakers");
  cmd_synth->add_option("--eval-utts", synth.eval_utts, "clean utterances per held-out speaker");
  cmd_synth->add_option("--min-frames", synth.min_frames, "shortest utterance in frames");
  cmd_synth->add_option("--max-frames", synth.max_frames, "longest utterance in frames");
  cmd_synth->add_option("--mode", synth.mode, "feature or waveform");
  cmd_synth->add_option("--seed", synth.seed, "corpus seed (falls back to the config file, then DRV_SEED)");

  TrainFlags train;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model on a corpus");
  train.Register(cmd_train);

  EvalFlags eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score trial lists with a checkpoint");
  cmd_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("--config", eval.config_path, "JSON config file");
  cmd_eval->add_option("--corpus", eval.corpus, "corpus directory");
  cmd_eval->add_option("--out", eval.out, "output directory");
  cmd_eval->add_option("--trials", eval.trials, "condition=path, replaces the corpus trial lists");

  TrainFlags ablate;
  std::string axis;
  CLI::App* cmd_ablate = app.add_subcommand("ablate", "train and score one ablation grid");
  ablate.Register(cmd_ablate);
  cmd_ablate->add_option("--axis", axis, "loss, switches or dterms")->required();

  GradFlags grad;
  CLI::App* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  cmd_grad->add_option("--dims", grad.dims, "desk or tiny")->check(CLI::IsMember({"desk", "tiny"}));
  cmd_grad->add_option("--out", grad.out, "JSON report path");
  cmd_grad->add_option("--inject-fault", grad.fault, "test fixture: tanh-derivative")
      ->check(CLI::IsMember({"tanh-derivative"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const CLI::App* active = app.get_subcommands().front();
  try {
    if (active == cmd_synth) return CmdSynth(synth);
    if (active == cmd_train) return CmdTrain(train);
    if (active == cmd_eval) return CmdEval(eval);
    if (active == cmd_ablate) return CmdAblate(ablate, axis);
    if (active == cmd_grad) return CmdGradcheck(grad);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "drvec %s: error: %s\n", active->get_name().c_str(), e.what());
    return ExitCodeFor(e);
  }
  return kExitFailure;
}
