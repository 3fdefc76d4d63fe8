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

#ifndef FEDSV_TEACHER_HPP_
#define FEDSV_TEACHER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fedsv/fed.hpp"
#include "fedsv/nn.hpp"
#include "fedsv/synth.hpp"

namespace fedsv {

// Privacy regimes for the side-information classifier. CentralOffline is
// the plain centralized baseline; the middle four are the federated
// regimes compared against each other.
enum class Regime {
  kNoDP,
  kLocalDP,
  kCentralDP,
  kCentralPlusWeakLocal,
  kCentralOffline,
};

std::string regime_name(Regime r);
Regime regime_from_string(const std::string& name);

// What the artifact can claim about its training privacy. Regimes without
// a DP guarantee (NoDP, CentralOffline) still carry a report describing
// that fact.
struct PrivacyReport {
  std::string mechanism;  // human-readable mechanism summary
  bool has_guarantee = false;
  double epsilon = 0.0;
  double delta = 0.0;
  double clip_norm = 0.0;
  double noise_multiplier = 0.0;  // central noise (sigma / clip) when present
  double local_sigma = 0.0;       // per-client noise stddev when present
};

struct TeacherArtifact {
  Network net;
  Regime regime = Regime::kNoDP;
  double final_accuracy = 0.0;
  std::vector<RoundTelemetry> telemetry;
  PrivacyReport privacy;
  std::uint64_t seed = 0;
};

// Classifier trunk: Dense+BatchNorm+Sigmoid per hidden width, then a
// softmax head named "side" with num_classes outputs.
NetworkSpec make_teacher_spec(int input_dim, const std::vector<int>& hidden,
                              int num_classes);

struct TeacherFederatedConfig {
  int rounds = 60;
  int cohort_size = 300;
  int local_epochs = 1;
  OptimizerConfig local_optimizer;
  double clip_norm = 1.0;
  PrivacyParams central_target{2.0, 1e-5};  // CentralDP / CentralPlusWeakLocal
  PrivacyParams local_target{2.0, 1e-5};    // LocalDP
  PrivacyParams weak_local{25.7, 1e-5};     // CentralPlusWeakLocal
  AccountantConfig accountant;              // assumed deployment population
  int threads = 1;

  void validate() const;
};

// Materializes the mechanisms for a regime:
//   NoDP                 -> (None, None)
//   LocalDP              -> (Gaussian at local_target, None)
//   CentralDP            -> (clip only, accountant-calibrated central noise)
//   CentralPlusWeakLocal -> (weak-local Gaussian, accountant-calibrated
//                            central noise)
// The accountant uses q = cohort_size / accountant.population_size.
RoundConfig make_round_config(Regime regime, const TeacherFederatedConfig& cfg);

PrivacyReport make_privacy_report(Regime regime, const TeacherFederatedConfig& cfg);

// Plain centralized minibatch SGD; the "offline" teacher. Telemetry is one
// entry per epoch (accuracy only).
TeacherArtifact train_teacher_central(const LabeledData& data,
                                      const NetworkSpec& spec,
                                      const OptimizerConfig& opt, int epochs,
                                      const LabeledData& eval_set, const Rng& rng);

// Federated training under one of the four regimes.
TeacherArtifact train_teacher_federated(const std::vector<ClientDataset>& population,
                                        const NetworkSpec& spec, Regime regime,
                                        const TeacherFederatedConfig& cfg,
                                        const LabeledData& eval_set, const Rng& rng,
                                        const Network* warm_start = nullptr);

// Inference-mode logits of the "side" head; pure in (params, batch).
Matrix teacher_logits(const TeacherArtifact& artifact, const Matrix& batch);

// Artifact file pair: <prefix>.ckpt (parameters) + <prefix>.json (regime,
// privacy report, accuracy, seed). Reloads to bit-identical inference.
void save_teacher(const TeacherArtifact& artifact, const std::string& prefix);
TeacherArtifact load_teacher(const std::string& prefix);

}  // namespace fedsv

#endif  // FEDSV_TEACHER_HPP_
