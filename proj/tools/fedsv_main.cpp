// Copyright 2026 The fedsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsv/checkpoint.hpp"
#include "fedsv/eval.hpp"
#include "fedsv/experiment.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common_flags(CLI::App* cmd, CommonFlags* flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags->config_path, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags->seed, "override the config seed");
  cmd->add_option("--out", flags->out, "override the output directory");
  cmd->add_option("--threads", flags->threads, "override the worker thread count");
}

fedsv::ExperimentConfig load_config(const CommonFlags& flags) {
  fedsv::ExperimentConfig cfg = fedsv::parse_experiment_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out_dir = *flags.out;
  if (flags.threads) {
    if (*flags.threads < 1) throw fedsv::ConfigError("threads: must be >= 1");
    cfg.threads = *flags.threads;
  }
  return cfg;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

int cmd_run(const CommonFlags& flags) {
  const fedsv::ExperimentConfig cfg = load_config(flags);
  const fedsv::RunManifest manifest = fedsv::run_experiment(cfg);
  std::cout << "run complete\n";
  std::cout << "  config_hash: " << manifest.config_hash << "\n";
  std::cout << "  run_dir: " << manifest.run_dir << "\n";
  for (const fedsv::StageTiming& s : manifest.stages) {
    std::cout << "  stage " << s.name << ": " << fmt(s.ms) << " ms\n";
  }
  std::cout << "  files: " << manifest.files.size() << "\n";
  return kExitOk;
}

int cmd_compare(const CommonFlags& flags, const std::vector<std::string>& regime_names) {
  const fedsv::ExperimentConfig cfg = load_config(flags);
  std::vector<fedsv::Regime> regimes;
  for (const std::string& name : regime_names) {
    try {
      regimes.push_back(fedsv::regime_from_string(name));
    } catch (const std::exception& e) {
      throw fedsv::ConfigError(std::string("--regimes: ") + e.what());
    }
  }
  const std::vector<fedsv::RegimeRow> rows =
      fedsv::compare_regimes(cfg, regimes, cfg.out_dir);
  std::cout << "regime comparison (" << rows.size() << " regimes)\n";
  std::cout << "  regime              accuracy  round1_snr  epsilon\n";
  for (const fedsv::RegimeRow& row : rows) {
    const double eps = row.privacy.has_guarantee
                           ? row.privacy.epsilon
                           : std::numeric_limits<double>::infinity();
    std::printf("  %-18s  %8s  %10s  %7s\n", fedsv::regime_name(row.regime).c_str(),
                fmt(row.final_accuracy).c_str(), fmt(row.first_round_snr).c_str(),
                fmt(eps).c_str());
  }
  std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "regimes.csv").string()
            << "\n";
  return kExitOk;
}

struct DpCalcFlags {
  std::optional<double> epsilon;
  std::optional<double> noise_multiplier;
  double delta = 1e-5;
  double q = 0.0;
  int rounds = 0;
  bool as_json = false;
};

int cmd_dp_calc(const DpCalcFlags& flags) {
  if (flags.epsilon.has_value() == flags.noise_multiplier.has_value()) {
    throw fedsv::ConfigError(
        "dp-calc: give exactly one of --epsilon (calibrate sigma) or "
        "--noise-multiplier (report epsilon)");
  }
  if (!(flags.delta > 0.0 && flags.delta < 1.0)) {
    throw fedsv::ConfigError("--delta: must be in (0, 1)");
  }
  if (!(flags.q > 0.0 && flags.q <= 1.0)) {
    throw fedsv::ConfigError("--q: must be in (0, 1]");
  }
  if (flags.rounds < 0) {
    throw fedsv::ConfigError("--rounds: must be >= 0");
  }

  nlohmann::json j;
  j["delta"] = flags.delta;
  j["sampling_rate"] = flags.q;
  j["rounds"] = flags.rounds;
  if (flags.epsilon) {
    if (!(*flags.epsilon > 0.0)) {
      throw fedsv::ConfigError("--epsilon: must be > 0");
    }
    const fedsv::PrivacyParams target{*flags.epsilon, flags.delta};
    const double sigma = fedsv::accountant_sigma(target, flags.q, flags.rounds);
    const double round_trip =
        fedsv::accountant_epsilon(sigma, flags.q, flags.rounds, flags.delta);
    j["mode"] = "calibrate-sigma";
    j["epsilon_target"] = *flags.epsilon;
    j["noise_multiplier"] = sigma;
    j["epsilon_roundtrip"] = round_trip;
    if (flags.as_json) {
      std::cout << j.dump(2) << "\n";
    } else {
      std::printf("mode: calibrate-sigma\n");
      std::printf("epsilon_target = %.17g\n", *flags.epsilon);
      std::printf("delta = %.17g\n", flags.delta);
      std::printf("sampling_rate = %.17g\n", flags.q);
      std::printf("rounds = %d\n", flags.rounds);
      std::printf("noise_multiplier = %.17g\n", sigma);
      std::printf("epsilon_roundtrip = %.17g\n", round_trip);
    }
  } else {
    if (!(*flags.noise_multiplier > 0.0)) {
      throw fedsv::ConfigError("--noise-multiplier: must be > 0");
    }
    const double eps = fedsv::accountant_epsilon(*flags.noise_multiplier, flags.q,
                                                 flags.rounds, flags.delta);
    j["mode"] = "report-epsilon";
    j["noise_multiplier"] = *flags.noise_multiplier;
    j["epsilon"] = eps;
    if (flags.as_json) {
      std::cout << j.dump(2) << "\n";
    } else {
      std::printf("mode: report-epsilon\n");
      std::printf("noise_multiplier = %.17g\n", *flags.noise_multiplier);
      std::printf("delta = %.17g\n", flags.delta);
      std::printf("sampling_rate = %.17g\n", flags.q);
      std::printf("rounds = %d\n", flags.rounds);
      std::printf("epsilon = %.17g\n", eps);
    }
  }
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint_path;
  std::string trials_path;
  std::optional<std::string> report_path;
  std::optional<std::string> roc_path;
};

int cmd_eval(const EvalFlags& flags) {
  const fedsv::Network net = fedsv::load_checkpoint(flags.checkpoint_path);
  const fedsv::TrialSet trials = fedsv::read_trials_file(flags.trials_path);
  const fedsv::EvalReport report = fedsv::evaluate_sv(net, trials);
  nlohmann::json j;
  j["eer"] = report.eer;
  j["threshold"] = report.threshold;
  j["trial_count"] = report.trial_count;
  std::cout << j.dump(2) << "\n";
  if (flags.report_path) fedsv::write_eval_report_json(report, *flags.report_path);
  if (flags.roc_path) fedsv::write_roc_csv(report, *flags.roc_path);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated speaker-verification simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "run the full pipeline from a config");
  add_common_flags(run_cmd, &run_flags, /*config_required=*/true);

  CommonFlags cmp_flags;
  std::vector<std::string> regime_names = {"nodp", "localdp", "centraldp",
                                           "central_weaklocal"};
  CLI::App* cmp_cmd = app.add_subcommand(
      "compare-regimes", "train the teacher once per privacy regime and tabulate");
  add_common_flags(cmp_cmd, &cmp_flags, /*config_required=*/true);
  cmp_cmd->add_option("--regimes", regime_names,
                      "regimes to compare (default: all four federated regimes)")
      ->delimiter(',');

  DpCalcFlags dp_flags;
  CLI::App* dp_cmd =
      app.add_subcommand("dp-calc", "noise calibration for the subsampled accountant");
  dp_cmd->add_option("--epsilon", dp_flags.epsilon, "target epsilon (calibrate sigma)");
  dp_cmd->add_option("--noise-multiplier", dp_flags.noise_multiplier,
                     "known noise multiplier (report epsilon)");
  dp_cmd->add_option("--delta", dp_flags.delta, "target delta (default 1e-5)");
  dp_cmd->add_option("--q", dp_flags.q, "per-round sampling rate")->required();
  dp_cmd->add_option("--rounds", dp_flags.rounds, "number of composed rounds")
      ->required();
  dp_cmd->add_flag("--json", dp_flags.as_json, "emit JSON instead of plain text");

  EvalFlags eval_flags;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "re-score a stored checkpoint against a trial file");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint_path, "model checkpoint")
      ->required();
  eval_cmd->add_option("--trials", eval_flags.trials_path, "trial bundle (trials.bin)")
      ->required();
  eval_cmd->add_option("--report", eval_flags.report_path, "also write the report JSON");
  eval_cmd->add_option("--roc", eval_flags.roc_path, "also write the ROC CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_flags, regime_names);
    if (dp_cmd->parsed()) return cmd_dp_calc(dp_flags);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags);
  } catch (const fedsv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
