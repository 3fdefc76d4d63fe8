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

#include "fedsv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "fedsv/student.hpp"
#include "json.hpp"

namespace fedsv {

namespace {

double row_norm(const double* v, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

double cosine(const double* a, const double* b, int n, double norm_a, double norm_b) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += a[i] * b[i];
  return dot / (norm_a * norm_b);
}

}  // namespace

double sv_score(const Matrix& enrollment_embeddings,
                const std::vector<double>& test_embedding) {
  if (enrollment_embeddings.rows < 1) {
    throw std::invalid_argument("sv_score: empty enrollment profile");
  }
  if (static_cast<int>(test_embedding.size()) != enrollment_embeddings.cols) {
    throw std::invalid_argument("sv_score: embedding dimension mismatch");
  }
  const int dim = enrollment_embeddings.cols;
  const double test_norm = row_norm(test_embedding.data(), dim);
  if (test_norm == 0.0) {
    throw std::runtime_error("sv_score: zero-norm test embedding");
  }
  double sum = 0.0;
  for (int r = 0; r < enrollment_embeddings.rows; ++r) {
    const double* e = enrollment_embeddings.row_ptr(r);
    const double enorm = row_norm(e, dim);
    if (enorm == 0.0) {
      throw std::runtime_error("sv_score: zero-norm enrollment embedding at row " +
                               std::to_string(r));
    }
    sum += cosine(test_embedding.data(), e, dim, test_norm, enorm);
  }
  return sum / enrollment_embeddings.rows;
}

EvalReport compute_eer(const std::vector<std::pair<double, bool>>& scores) {
  std::size_t n_targets = 0, n_impostors = 0;
  for (const auto& [score, is_target] : scores) {
    (void)score;
    if (is_target) {
      ++n_targets;
    } else {
      ++n_impostors;
    }
  }
  if (n_targets == 0 || n_impostors == 0) {
    throw std::invalid_argument(
        "compute_eer: need at least one target and one impostor trial");
  }

  // Count trials per distinct score; walking thresholds in ascending order
  // moves trials below the threshold from accepted to rejected.
  std::map<double, std::pair<std::size_t, std::size_t>> by_score;  // (targets, impostors)
  for (const auto& [score, is_target] : scores) {
    auto& entry = by_score[score];
    if (is_target) {
      ++entry.first;
    } else {
      ++entry.second;
    }
  }

  EvalReport report;
  report.trial_count = scores.size();
  report.roc.reserve(by_score.size() + 1);
  // At the lowest threshold every trial is accepted.
  std::size_t targets_rejected = 0, impostors_accepted = n_impostors;
  for (const auto& [threshold, counts] : by_score) {
    RocPoint pt;
    pt.threshold = threshold;
    pt.far = static_cast<double>(impostors_accepted) / static_cast<double>(n_impostors);
    pt.frr = static_cast<double>(targets_rejected) / static_cast<double>(n_targets);
    report.roc.push_back(pt);
    // Raising the threshold past this score rejects its trials.
    targets_rejected += counts.first;
    impostors_accepted -= counts.second;
  }
  {
    RocPoint pt;
    pt.threshold = by_score.rbegin()->first + 1.0;  // everything rejected
    pt.far = 0.0;
    pt.frr = static_cast<double>(targets_rejected) / static_cast<double>(n_targets);
    report.roc.push_back(pt);
  }

  // FAR - FRR is nonincreasing, starts at 1 and ends at -1; find the sign
  // change and interpolate linearly between the two operating points.
  for (std::size_t i = 0; i + 1 < report.roc.size(); ++i) {
    const RocPoint& a = report.roc[i];
    const RocPoint& b = report.roc[i + 1];
    const double da = a.far - a.frr;
    const double db = b.far - b.frr;
    if (da == 0.0) {
      report.eer = a.far;
      report.threshold = a.threshold;
      return report;
    }
    if (da > 0.0 && db <= 0.0) {
      if (db == 0.0) {
        report.eer = b.far;
        report.threshold = b.threshold;
        return report;
      }
      const double t = da / (da - db);
      report.eer = a.far + t * (b.far - a.far);
      report.threshold = a.threshold + t * (b.threshold - a.threshold);
      return report;
    }
  }
  // Unreachable: the sweep spans diff = +1 down to -1.
  throw std::runtime_error("compute_eer: no crossing found");
}

EvalReport evaluate_sv(const Network& student, const TrialSet& trials) {
  // Embed every utterance of every speaker in the trial population once.
  std::map<int, Matrix> embeddings;  // speaker id -> rows of embeddings
  std::map<int, const SpeakerRecord*> records;
  for (const SpeakerRecord& rec : trials.population) {
    records[rec.speaker_id] = &rec;
    embeddings[rec.speaker_id] = embed(student, rec.utterances);
  }
  std::map<int, Matrix> profile_embeddings;
  for (const SpeakerProfileData& prof : trials.profiles) {
    profile_embeddings[prof.speaker_id] = embed(student, prof.enrollment);
  }

  std::vector<std::pair<double, bool>> scores;
  scores.reserve(trials.trials.size());
  for (const Trial& trial : trials.trials) {
    const auto prof_it = profile_embeddings.find(trial.profile_speaker);
    if (prof_it == profile_embeddings.end()) {
      throw std::invalid_argument("evaluate_sv: trial references unknown profile " +
                                  std::to_string(trial.profile_speaker));
    }
    const auto emb_it = embeddings.find(trial.test_speaker);
    if (emb_it == embeddings.end() ||
        trial.test_utterance >= emb_it->second.rows) {
      throw std::invalid_argument("evaluate_sv: trial references unknown utterance " +
                                  std::to_string(trial.test_utterance) +
                                  " of speaker " + std::to_string(trial.test_speaker));
    }
    const Matrix& test_rows = emb_it->second;
    std::vector<double> test_emb(
        test_rows.row_ptr(trial.test_utterance),
        test_rows.row_ptr(trial.test_utterance) + test_rows.cols);
    try {
      scores.emplace_back(sv_score(prof_it->second, test_emb), trial.is_target);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " (profile speaker " +
                               std::to_string(trial.profile_speaker) +
                               ", test speaker " + std::to_string(trial.test_speaker) +
                               ", utterance " + std::to_string(trial.test_utterance) +
                               ")");
    }
  }
  return compute_eer(scores);
}

namespace {

constexpr char kTrialsMagic[8] = {'F', 'S', 'V', 'T', 'R', 'I', 'L', '1'};

void put_i32(std::ostream& out, std::int32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::int32_t get_i32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("trials file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return static_cast<std::int32_t>(v);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("trials file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  put_i32(out, static_cast<std::int32_t>(m.rows));
  put_i32(out, static_cast<std::int32_t>(m.cols));
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

Matrix get_matrix(std::istream& in) {
  const std::int32_t rows = get_i32(in);
  const std::int32_t cols = get_i32(in);
  if (rows < 0 || cols < 0) throw std::runtime_error("trials file: negative shape");
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("trials file: truncated matrix");
  return m;
}

}  // namespace

void write_trials_file(const TrialSet& trials, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_trials_file: cannot open " + path);
  out.write(kTrialsMagic, sizeof(kTrialsMagic));
  put_i32(out, static_cast<std::int32_t>(trials.profiles.size()));
  for (const SpeakerProfileData& p : trials.profiles) {
    put_i32(out, p.speaker_id);
    put_matrix(out, p.enrollment);
  }
  put_i32(out, static_cast<std::int32_t>(trials.population.size()));
  for (const SpeakerRecord& s : trials.population) {
    put_i32(out, s.speaker_id);
    put_i32(out, s.side_class);
    put_matrix(out, s.utterances);
  }
  put_u64(out, trials.trials.size());
  for (const Trial& t : trials.trials) {
    put_i32(out, t.profile_speaker);
    put_i32(out, t.test_speaker);
    put_i32(out, t.test_utterance);
    const char flag = t.is_target ? 1 : 0;
    out.write(&flag, 1);
  }
  if (!out) throw std::runtime_error("write_trials_file: write failed");
}

TrialSet read_trials_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_trials_file: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTrialsMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("read_trials_file: bad magic in " + path);
  }
  TrialSet out;
  const std::int32_t num_profiles = get_i32(in);
  for (std::int32_t i = 0; i < num_profiles; ++i) {
    SpeakerProfileData p;
    p.speaker_id = get_i32(in);
    p.enrollment = get_matrix(in);
    out.profiles.push_back(std::move(p));
  }
  const std::int32_t num_speakers = get_i32(in);
  for (std::int32_t i = 0; i < num_speakers; ++i) {
    SpeakerRecord s;
    s.speaker_id = get_i32(in);
    s.side_class = get_i32(in);
    s.utterances = get_matrix(in);
    out.population.push_back(std::move(s));
  }
  const std::uint64_t num_trials = get_u64(in);
  for (std::uint64_t i = 0; i < num_trials; ++i) {
    Trial t;
    t.profile_speaker = get_i32(in);
    t.test_speaker = get_i32(in);
    t.test_utterance = get_i32(in);
    char flag = 0;
    in.read(&flag, 1);
    if (!in) throw std::runtime_error("trials file: truncated");
    t.is_target = flag != 0;
    out.trials.push_back(t);
  }
  return out;
}

void write_eval_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["eer"] = report.eer;
  j["threshold"] = report.threshold;
  j["trial_count"] = report.trial_count;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_eval_report_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write_eval_report_json: write failed");
}

void write_roc_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_roc_csv: cannot open " + path);
  out << "threshold,far,frr\n";
  char buf[120];
  for (const RocPoint& pt : report.roc) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", pt.threshold, pt.far, pt.frr);
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("write_roc_csv: write failed");
}

}  // namespace fedsv
