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

#ifndef FEDSV_STUDENT_HPP_
#define FEDSV_STUDENT_HPP_

#include <string>
#include <vector>

#include "fedsv/nn.hpp"
#include "fedsv/synth.hpp"
#include "fedsv/teacher.hpp"

namespace fedsv {

// Speaker-embedding trunk: hidden Dense+BatchNorm+Sigmoid layers, then a
// linear embedding layer with batch norm and no activation. Heads:
// "speaker" always; "side" (distillation target) when with_side_head.
NetworkSpec make_student_spec(int input_dim, int num_speakers,
                              int num_side_classes, bool with_side_head,
                              const std::vector<int>& hidden = {256, 256, 256, 256},
                              int embedding_dim = 100);

struct DistillConfig {
  double temperature = 10.0;
  // Weight of the distillation term. On the default synthetic population the
  // speaker loss is ~5.8x the raw distillation term at initialization, so 4.0
  // keeps the two weighted terms within a factor of 2 of each other.
  double gamma = 4.0;

  void validate() const;
};

// Mean over the batch of (T^2 / N_c) * sum_i (softmax(V/T)_i - softmax(z/T)_i)^2
// with the analytic gradient w.r.t. the student logits z. The T^2 factor
// compensates the 1/T^2 gradient attenuation of the softened softmaxes.
LossResult distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                        double temperature);

struct MtlLossResult {
  double total = 0.0;
  double speaker_loss = 0.0;
  double distill_term = 0.0;  // unweighted distillation loss
  Gradients grads;
};

// Speaker cross-entropy plus gamma times the distillation loss against the
// frozen teacher logits; gradients flow into the trunk from both heads.
// Throws std::invalid_argument if the student has no "side" head.
MtlLossResult mtl_loss(Network& student, const Matrix& batch,
                       const std::vector<int>& speaker_labels,
                       const Matrix& teacher_logits_batch, const DistillConfig& cfg,
                       ForwardCache* cache_out = nullptr);

enum class StudentMode { kBaseline, kMtl };

struct EpochStats {
  int epoch = 0;
  double speaker_accuracy = 0.0;
  double side_agreement = -1.0;  // teacher-argmax agreement; -1 when untracked
};

struct StudentResult {
  Network net;
  StudentMode mode = StudentMode::kBaseline;
  std::vector<EpochStats> stats;
  double final_speaker_accuracy = 0.0;
  double final_side_agreement = -1.0;
};

// Minibatch SGD over (train.x, speaker labels). Mtl mode additionally
// distills from `teacher` (logits over the training set are computed once
// and cached). Per-epoch evaluation reports top-1 speaker accuracy on
// eval_set and, in mtl mode, argmax agreement with the teacher on eval_set.
StudentResult train_student(const LabeledData& train, const NetworkSpec& spec,
                            StudentMode mode, const OptimizerConfig& opt,
                            const DistillConfig& distill,
                            const TeacherArtifact* teacher, int epochs,
                            const LabeledData& eval_set, const Rng& rng);

// Inference-mode embedding (trunk output); classification heads are not
// evaluated.
Matrix embed(const Network& student, const Matrix& batch);

// Per-epoch stats CSV: epoch,speaker_accuracy,side_agreement.
void write_student_stats_csv(const std::vector<EpochStats>& stats,
                             const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_STUDENT_HPP_
