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

#ifndef FEDSV_EVAL_HPP_
#define FEDSV_EVAL_HPP_

#include <string>
#include <utility>
#include <vector>

#include "fedsv/nn.hpp"
#include "fedsv/synth.hpp"

namespace fedsv {

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;  // impostors accepted / impostors
  double frr = 0.0;  // targets rejected / targets
};

struct EvalReport {
  double eer = 0.0;
  double threshold = 0.0;  // operating threshold at the crossing
  std::vector<RocPoint> roc;
  std::size_t trial_count = 0;
};

// Mean over enrollment rows of cos(test_embedding, enrollment row). Throws
// std::runtime_error naming the offending row on a zero-norm embedding.
double sv_score(const Matrix& enrollment_embeddings,
                const std::vector<double>& test_embedding);

// Sweep of all distinct scores as thresholds with the accept rule
// score >= threshold; EER from linear interpolation between the adjacent
// operating points where FAR - FRR changes sign. Requires at least one
// target and one impostor trial.
EvalReport compute_eer(const std::vector<std::pair<double, bool>>& scores);

// Embeds all enrollment and test utterances once, scores every trial, and
// computes the EER. Deterministic in (student, trials).
EvalReport evaluate_sv(const Network& student, const TrialSet& trials);

// Binary trial bundle (profiles, test utterances, trial list) so a stored
// checkpoint can be re-scored without regenerating the population.
void write_trials_file(const TrialSet& trials, const std::string& path);
TrialSet read_trials_file(const std::string& path);

// {"eer": ..., "threshold": ..., "trial_count": ...}
void write_eval_report_json(const EvalReport& report, const std::string& path);

// CSV: threshold,far,frr per operating point.
void write_roc_csv(const EvalReport& report, const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_EVAL_HPP_
