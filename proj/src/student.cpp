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

#include "fedsv/student.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedsv/fed.hpp"

namespace fedsv {

NetworkSpec make_student_spec(int input_dim, int num_speakers,
                              int num_side_classes, bool with_side_head,
                              const std::vector<int>& hidden, int embedding_dim) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  int dim = input_dim;
  for (int h : hidden) {
    spec.trunk.push_back({LayerKind::kDense, dim, h});
    spec.trunk.push_back({LayerKind::kBatchNorm, h, h});
    spec.trunk.push_back({LayerKind::kSigmoid, h, h});
    dim = h;
  }
  // Embedding layer: linear transform with batch norm, no activation.
  spec.trunk.push_back({LayerKind::kDense, dim, embedding_dim});
  spec.trunk.push_back({LayerKind::kBatchNorm, embedding_dim, embedding_dim});
  spec.heads.push_back({"speaker", num_speakers});
  if (with_side_head) spec.heads.push_back({"side", num_side_classes});
  spec.validate();
  return spec;
}

void DistillConfig::validate() const {
  if (!(temperature > 0)) {
    throw std::invalid_argument("DistillConfig: temperature must be > 0");
  }
  if (!(gamma >= 0)) throw std::invalid_argument("DistillConfig: gamma must be >= 0");
}

LossResult distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                        double temperature) {
  if (!(temperature > 0)) {
    throw std::invalid_argument("distill_loss: temperature must be > 0");
  }
  if (!student_logits.same_shape(teacher_logits)) {
    throw std::invalid_argument("distill_loss: logit shape mismatch");
  }
  const int batch = student_logits.rows;
  const int classes = student_logits.cols;
  const double t = temperature;

  Matrix soft_student(batch, classes), soft_teacher(batch, classes);
  for (int r = 0; r < batch; ++r) {
    for (int c = 0; c < classes; ++c) {
      soft_student(r, c) = student_logits(r, c) / t;
      soft_teacher(r, c) = teacher_logits(r, c) / t;
    }
  }
  soft_student = softmax_rows(soft_student);
  soft_teacher = softmax_rows(soft_teacher);

  LossResult res;
  res.dlogits = Matrix(batch, classes);
  const double scale = t * t / classes;
  double loss = 0.0;
  for (int r = 0; r < batch; ++r) {
    const double* s = soft_student.row_ptr(r);
    const double* p = soft_teacher.row_ptr(r);
    double sq = 0.0, inner = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double d = s[c] - p[c];
      sq += d * d;
      inner += d * s[c];
    }
    loss += scale * sq;
    // d/dz_j of the per-row term: (2T/N_c) s_j ((s_j - p_j) - sum_i (s_i - p_i) s_i)
    double* g = res.dlogits.row_ptr(r);
    const double gscale = 2.0 * t / (classes * batch);
    for (int c = 0; c < classes; ++c) {
      g[c] = gscale * s[c] * ((s[c] - p[c]) - inner);
    }
  }
  res.loss = loss / batch;
  return res;
}

MtlLossResult mtl_loss(Network& student, const Matrix& batch,
                       const std::vector<int>& speaker_labels,
                       const Matrix& teacher_logits_batch, const DistillConfig& cfg,
                       ForwardCache* cache_out) {
  cfg.validate();
  bool has_side = false;
  for (const HeadSpec& h : student.spec().heads) has_side = has_side || h.name == "side";
  if (!has_side) {
    throw std::invalid_argument("mtl_loss: student has no side head");
  }
  ForwardCache local_cache;
  ForwardCache& cache = cache_out ? *cache_out : local_cache;
  ForwardResult fwd = student.forward(batch, Mode::kTrain, &cache);

  LossResult spk = cross_entropy_loss(fwd.head_logits.at("speaker"), speaker_labels);
  LossResult vc =
      distill_loss(fwd.head_logits.at("side"), teacher_logits_batch, cfg.temperature);

  Matrix d_side = vc.dlogits;
  for (double& v : d_side.data) v *= cfg.gamma;

  MtlLossResult res;
  res.speaker_loss = spk.loss;
  res.distill_term = vc.loss;
  res.total = spk.loss + cfg.gamma * vc.loss;
  res.grads = student.backward(cache, {{"speaker", spk.dlogits}, {"side", d_side}});
  return res;
}

Matrix embed(const Network& student, const Matrix& batch) {
  ForwardResult fwd =
      student.forward(batch, Mode::kInfer, nullptr, /*compute_heads=*/false);
  return fwd.embedding;
}

namespace {

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row_ptr(r);
    int arg = 0;
    for (int c = 1; c < m.cols; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    out[static_cast<std::size_t>(r)] = arg;
  }
  return out;
}

// Chunked inference-mode logits for one head.
Matrix head_logits(const Network& net, const Matrix& x, const std::string& head) {
  Matrix out;
  const int chunk = 2048;
  for (int start = 0; start < x.rows; start += chunk) {
    const int count = std::min(chunk, x.rows - start);
    Matrix batch(count, x.cols);
    std::copy(x.row_ptr(start),
              x.row_ptr(start) + static_cast<std::size_t>(count) * x.cols,
              batch.row_ptr(0));
    ForwardResult fwd = net.forward(batch, Mode::kInfer);
    Matrix& logits = fwd.head_logits.at(head);
    if (out.rows == 0) {
      out = Matrix(x.rows, logits.cols);
    }
    std::copy(logits.data.begin(), logits.data.end(), out.row_ptr(start));
  }
  return out;
}

}  // namespace

StudentResult train_student(const LabeledData& train, const NetworkSpec& spec,
                            StudentMode mode, const OptimizerConfig& opt,
                            const DistillConfig& distill,
                            const TeacherArtifact* teacher, int epochs,
                            const LabeledData& eval_set, const Rng& rng) {
  if (train.x.rows == 0) throw std::invalid_argument("train_student: empty data");
  opt.validate();
  distill.validate();
  if (epochs < 0) throw std::invalid_argument("train_student: epochs < 0");
  if (mode == StudentMode::kMtl && teacher == nullptr) {
    throw std::invalid_argument("train_student: mtl mode requires a teacher");
  }

  StudentResult result;
  result.mode = mode;
  result.net = Network(spec);
  result.net.init_params(rng.derive("init"));

  // The teacher is frozen, so its logits over the fixed training set are
  // computed once and indexed by row thereafter.
  Matrix teacher_train, teacher_eval;
  std::vector<int> teacher_eval_argmax;
  if (mode == StudentMode::kMtl) {
    teacher_train = head_logits(teacher->net, train.x, "side");
    teacher_eval = head_logits(teacher->net, eval_set.x, "side");
    teacher_eval_argmax = argmax_rows(teacher_eval);
  }

  Rng shuffle_rng = rng.derive("shuffle");
  SgdState state;
  const int n = train.x.rows;
  const int batch_size = std::min(opt.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    for (int start = 0; start < n; start += batch_size) {
      const int count = std::min(batch_size, n - start);
      Matrix batch(count, train.x.cols);
      std::vector<int> labels(static_cast<std::size_t>(count));
      Matrix teacher_rows;
      if (mode == StudentMode::kMtl) teacher_rows = Matrix(count, teacher_train.cols);
      for (int r = 0; r < count; ++r) {
        const int src = order[static_cast<std::size_t>(start + r)];
        std::copy(train.x.row_ptr(src), train.x.row_ptr(src) + train.x.cols,
                  batch.row_ptr(r));
        labels[static_cast<std::size_t>(r)] =
            train.labels[static_cast<std::size_t>(src)];
        if (mode == StudentMode::kMtl) {
          std::copy(teacher_train.row_ptr(src),
                    teacher_train.row_ptr(src) + teacher_train.cols,
                    teacher_rows.row_ptr(r));
        }
      }
      ForwardCache cache;
      if (mode == StudentMode::kMtl) {
        MtlLossResult loss =
            mtl_loss(result.net, batch, labels, teacher_rows, distill, &cache);
        sgd_step(result.net, loss.grads, opt, state);
      } else {
        ForwardResult fwd = result.net.forward(batch, Mode::kTrain, &cache);
        LossResult loss = cross_entropy_loss(fwd.head_logits.at("speaker"), labels);
        Gradients grads = result.net.backward(cache, {{"speaker", loss.dlogits}});
        sgd_step(result.net, grads, opt, state);
      }
      result.net.update_running_stats(cache);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.speaker_accuracy = eval_accuracy(result.net, eval_set, "speaker");
    if (mode == StudentMode::kMtl) {
      const std::vector<int> student_argmax =
          argmax_rows(head_logits(result.net, eval_set.x, "side"));
      int agree = 0;
      for (std::size_t i = 0; i < student_argmax.size(); ++i) {
        if (student_argmax[i] == teacher_eval_argmax[i]) ++agree;
      }
      stats.side_agreement =
          student_argmax.empty()
              ? 0.0
              : static_cast<double>(agree) / static_cast<double>(student_argmax.size());
    }
    result.stats.push_back(stats);
  }

  if (!result.stats.empty()) {
    result.final_speaker_accuracy = result.stats.back().speaker_accuracy;
    result.final_side_agreement = result.stats.back().side_agreement;
  } else {
    result.final_speaker_accuracy = eval_accuracy(result.net, eval_set, "speaker");
  }
  return result;
}

void write_student_stats_csv(const std::vector<EpochStats>& stats,
                             const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_student_stats_csv: cannot open " + path);
  out << "epoch,speaker_accuracy,side_agreement\n";
  char buf[80];
  for (const EpochStats& s : stats) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g", s.epoch, s.speaker_accuracy,
                  s.side_agreement);
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("write_student_stats_csv: write failed");
}

}  // namespace fedsv
