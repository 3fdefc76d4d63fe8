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

#ifndef FEDSV_SYNTH_HPP_
#define FEDSV_SYNTH_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsv/matrix.hpp"
#include "fedsv/rng.hpp"

namespace fedsv {

// Latent-factor generative model of a speaker population. Each side class
// owns a centroid in latent space (pairwise distance set by
// class_separation); each speaker sits at its class centroid plus a unit
// Gaussian offset; each utterance is a fixed affine map of the speaker
// latent into supervector space plus within-speaker Gaussian noise.
struct PopulationConfig {
  int num_speakers = 500;
  int utterances_per_speaker = 40;
  int supervector_dim = 520;  // 26 coefficients x 20 states
  int num_side_classes = 6;
  int latent_dim = 16;
  // Defaults put single-utterance verification in the few-percent EER band
  // while leaving the side classes cleanly separable.
  double within_speaker_noise = 0.85;
  double class_separation = 12.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SpeakerRecord {
  int speaker_id = 0;
  int side_class = 0;
  Matrix utterances;  // rows = utterances, cols = supervector_dim
};

using Population = std::vector<SpeakerRecord>;

// Examples with per-row labels; rows of x parallel labels.
struct LabeledData {
  Matrix x;
  std::vector<int> labels;
};

struct ClientDataset {
  int client_id = 0;
  LabeledData data;
};

struct SpeakerProfileData {
  int speaker_id = 0;
  Matrix enrollment;  // rows = enrollment utterances
};

struct Trial {
  int profile_speaker = 0;
  int test_speaker = 0;
  int test_utterance = 0;  // utterance index within the test speaker
  bool is_target = false;
};

struct TrialSet {
  std::vector<SpeakerProfileData> profiles;
  std::vector<Trial> trials;
  // Test supervectors are referenced out of this population copy so a
  // TrialSet is self-contained.
  Population population;
};

// Deterministic in cfg (including cfg.seed); side classes assigned
// round-robin so class priors are balanced within one speaker.
Population generate_population(const PopulationConfig& cfg);

// One client per speaker; all of the speaker's utterances with its side
// class as the label.
std::vector<ClientDataset> partition_to_clients(const Population& population);

// First enroll_n utterances of every speaker form its profile; remaining
// utterances become target trials; impostor trials pair a profile with a
// non-enrollment utterance of a different speaker,
// floor(targets * impostor_ratio) of them.
TrialSet build_trials(const Population& population, int enroll_n,
                      double impostor_ratio, Rng& rng);

// Copy of the population keeping only utterance indices in
// [range.first, range.second) for each listed range, concatenated in order.
Population slice_utterances(const Population& population,
                            const std::vector<std::pair<int, int>>& ranges);

// All utterances labeled with the speaker's side class.
LabeledData side_class_dataset(const Population& population);

// All utterances labeled with the speaker id (position in the population).
LabeledData speaker_id_dataset(const Population& population);

// JSON bundle round-trip: speaker id, side class, utterance vectors.
void export_population_json(const Population& population, const std::string& path);
Population import_population_json(const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_SYNTH_HPP_
