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

#ifndef FEDSV_FED_HPP_
#define FEDSV_FED_HPP_

#include <string>
#include <vector>

#include "fedsv/dp.hpp"
#include "fedsv/nn.hpp"
#include "fedsv/synth.hpp"

namespace fedsv {

enum class Aggregation { kUniformMean };

struct RoundConfig {
  int cohort_size = 300;
  int local_epochs = 1;
  OptimizerConfig local_optimizer;
  MechanismConfig local_mechanism;    // kNone, kLocal or kWeakLocal
  MechanismConfig central_mechanism;  // kNone or kCentral
  Aggregation aggregation = Aggregation::kUniformMean;
  std::string loss_head = "side";

  void validate() const;
};

struct RoundTelemetry {
  int round = 0;
  double update_norm = 0.0;  // aggregate norm before central noise
  double local_snr = 0.0;    // mean over cohort; +inf without local noise
  double central_snr = 0.0;  // +inf without central noise
  double overall_snr = 0.0;  // signal norm over total-injected-noise norm
  double accuracy = 0.0;     // filled by run_federated_training
  double duration_ms = 0.0;
  std::string note;
};

// Uniform sample without replacement, returned in ascending index order so
// aggregation visits clients in a fixed order.
std::vector<int> sample_cohort(const std::vector<ClientDataset>& population,
                               int cohort_size, Rng& rng);

struct LocalUpdateResult {
  std::vector<double> delta;  // trained params minus central params
  bool skipped = false;
  std::string note;
};

// local_epochs of minibatch SGD from the central parameters on this
// client's data alone; fresh optimizer state per round. The central network
// is not modified. Empty client data is skipped with a note.
LocalUpdateResult local_update(const Network& central, const ClientDataset& client,
                               const RoundConfig& cfg, Rng& rng);

// One federated-averaging round: sample cohort, local updates, local
// mechanism per delta, uniform mean in ascending client order, central
// mechanism on the mean (noise sigma = noise_multiplier * clip_norm /
// cohort_size), central parameter update. `threads` > 1 parallelizes
// local updates; results are still consumed in ascending order so parallel
// and serial runs are bit-identical.
RoundTelemetry federated_round(Network& central,
                               const std::vector<ClientDataset>& population,
                               const RoundConfig& cfg, int round_index,
                               const Rng& round_rng, int threads = 1);

// Top-1 accuracy of `head` on a labeled set, inference mode.
double eval_accuracy(const Network& net, const LabeledData& data,
                     const std::string& head);

struct FederatedResult {
  Network net;
  std::vector<RoundTelemetry> telemetry;
};

// Initializes the teacher from rng (or continues from `warm_start` when
// given) and runs `rounds` federated rounds, evaluating accuracy on
// `eval_set` after each round.
FederatedResult run_federated_training(const std::vector<ClientDataset>& population,
                                       const NetworkSpec& spec, int rounds,
                                       const RoundConfig& cfg,
                                       const LabeledData& eval_set, const Rng& rng,
                                       int threads = 1,
                                       const Network* warm_start = nullptr);

// CSV columns: round,accuracy,local_snr,central_snr,update_norm,duration_ms.
// Infinite SNR values are written as "inf".
void write_telemetry_csv(const std::vector<RoundTelemetry>& series,
                         const std::string& path);

// JSON lines, one object per round, including overall_snr and note; infinite
// values encoded as the string "inf".
void write_telemetry_jsonl(const std::vector<RoundTelemetry>& series,
                           const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_FED_HPP_
