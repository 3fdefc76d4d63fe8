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

#ifndef FEDSV_EXPERIMENT_HPP_
#define FEDSV_EXPERIMENT_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedsv/eval.hpp"
#include "fedsv/student.hpp"
#include "fedsv/synth.hpp"
#include "fedsv/teacher.hpp"

namespace fedsv {

// Configuration problems (parse failures, invalid or unknown fields).
// The CLI maps these to exit code 2, runtime failures to 3.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Utterance index split per speaker: [0, enroll_end) enrollment,
// [enroll_end, train_end) training pool, [train_end, n) held-out test pool.
struct SplitConfig {
  int enroll_end = 5;
  int train_end = 32;
};

struct TeacherExperimentConfig {
  std::vector<int> hidden;  // empty = linear classifier (desk default)
  Regime regime = Regime::kCentralPlusWeakLocal;
  TeacherFederatedConfig federated;
  int offline_epochs = 40;
};

struct StudentExperimentConfig {
  std::vector<int> hidden = {256, 256, 256, 256};
  int embedding_dim = 100;
  std::string mode = "both";  // "baseline", "mtl" or "both"
  int epochs = 6;
  OptimizerConfig optimizer;
  DistillConfig distill;
};

struct TrialExperimentConfig {
  int enroll_n = 0;  // 0 = split.enroll_end
  double impostor_ratio = 1.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  int threads = 1;
  PopulationConfig population;
  SplitConfig split;
  TeacherExperimentConfig teacher;
  StudentExperimentConfig student;
  TrialExperimentConfig trials;

  void validate() const;  // throws ConfigError naming the offending field
};

// Desk-scale defaults: every field as materialized into the manifest.
ExperimentConfig default_experiment_config();

// Strict JSON parse: unknown fields are errors, all defaults filled in.
// "seed" is mandatory.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_json_text(const std::string& text);

// Canonical materialized form (keys sorted by the JSON library); the config
// hash is FNV-1a over its dump, so it is stable under input key reordering.
std::string experiment_config_dump(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

struct StageTiming {
  std::string name;
  double ms = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string version;
  std::string run_dir;
  std::vector<std::string> files;  // relative to run_dir
  std::vector<StageTiming> stages;
  std::string failed_stage;  // empty on success
};

// Full pipeline: generate data, train the configured teacher, train the
// configured student(s), build trials, evaluate, and write all artifacts
// plus manifest.json under a fresh run directory. On a stage failure the
// partial manifest is written before the error propagates.
RunManifest run_experiment(const ExperimentConfig& cfg);

struct RegimeRow {
  Regime regime = Regime::kNoDP;
  double final_accuracy = 0.0;
  double first_round_snr = 0.0;
  PrivacyReport privacy;
};

// Trains the teacher once per regime with the shared data seed and writes
// regimes.csv (regime,final_accuracy,first_round_snr,epsilon,delta,
// mechanism) into out_dir. Requires >= 2 federated regimes.
std::vector<RegimeRow> compare_regimes(const ExperimentConfig& cfg,
                                       const std::vector<Regime>& regimes,
                                       const std::string& out_dir);

void write_regime_csv(const std::vector<RegimeRow>& rows, const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_EXPERIMENT_HPP_
