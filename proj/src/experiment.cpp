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

#include "fedsv/experiment.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "fedsv/checkpoint.hpp"
#include "json.hpp"

namespace fedsv {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "fedsv 0.1.0";

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError(path + ": expected an object");
  }
}

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(path + "." + it.key() + ": unknown field");
    }
  }
}

double get_number(const json& j, const char* key, double fallback,
                  const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(path + "." + key + ": expected a number");
  }
  return v.get<double>();
}

int get_int(const json& j, const char* key, int fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(path + "." + key + ": expected an integer");
  }
  return v.get<int>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) {
    throw ConfigError(path + "." + key + ": expected a string");
  }
  return v.get<std::string>();
}

std::vector<int> get_int_array(const json& j, const char* key,
                               const std::vector<int>& fallback,
                               const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array()) {
    throw ConfigError(path + "." + key + ": expected an array of integers");
  }
  std::vector<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) {
      throw ConfigError(path + "." + key + ": expected an array of integers");
    }
    out.push_back(e.get<int>());
  }
  return out;
}

OptimizerConfig parse_optimizer(const json& j, const OptimizerConfig& fallback,
                                const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"learning_rate", "momentum", "weight_decay", "batch_size"});
  OptimizerConfig out = fallback;
  out.learning_rate = get_number(j, "learning_rate", fallback.learning_rate, path);
  out.momentum = get_number(j, "momentum", fallback.momentum, path);
  out.weight_decay = get_number(j, "weight_decay", fallback.weight_decay, path);
  out.batch_size = get_int(j, "batch_size", fallback.batch_size, path);
  return out;
}

void check_optimizer(const OptimizerConfig& opt, const std::string& path) {
  if (!(opt.learning_rate >= 0.0) || !std::isfinite(opt.learning_rate)) {
    throw ConfigError(path + ".learning_rate: must be finite and >= 0");
  }
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
    throw ConfigError(path + ".momentum: must be in [0, 1)");
  }
  if (!(opt.weight_decay >= 0.0) || !std::isfinite(opt.weight_decay)) {
    throw ConfigError(path + ".weight_decay: must be finite and >= 0");
  }
  if (opt.batch_size < 1) {
    throw ConfigError(path + ".batch_size: must be >= 1");
  }
}

json optimizer_json(const OptimizerConfig& opt) {
  return json{{"learning_rate", opt.learning_rate},
              {"momentum", opt.momentum},
              {"weight_decay", opt.weight_decay},
              {"batch_size", opt.batch_size}};
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  out << text;
  if (!out) {
    throw std::runtime_error("failed writing " + path);
  }
}

json manifest_json(const RunManifest& m, const ExperimentConfig& cfg) {
  json stages = json::array();
  for (const StageTiming& s : m.stages) {
    stages.push_back(json{{"name", s.name}, {"ms", s.ms}});
  }
  return json{{"config_hash", m.config_hash},
              {"version", m.version},
              {"run_dir", m.run_dir},
              {"files", m.files},
              {"stages", stages},
              {"failed_stage", m.failed_stage},
              {"config", json::parse(experiment_config_dump(cfg))}};
}

void write_manifest(const RunManifest& m, const ExperimentConfig& cfg) {
  write_text_file((fs::path(m.run_dir) / "manifest.json").string(),
                  manifest_json(m, cfg).dump(2) + "\n");
}

// Derived data products shared by run_experiment and compare_regimes.
struct ExperimentData {
  Population population;
  Population train_slice;
  Population test_slice;
  Population trial_view;  // enrollment + test-pool utterances
  std::vector<ClientDataset> clients;
  LabeledData teacher_train;
  LabeledData teacher_eval;
  LabeledData student_train;
  LabeledData student_eval;
};

ExperimentData build_data(const ExperimentConfig& cfg) {
  PopulationConfig pop_cfg = cfg.population;
  pop_cfg.seed = Rng(cfg.seed).derive("population").seed();
  ExperimentData d;
  d.population = generate_population(pop_cfg);
  const int n = cfg.population.utterances_per_speaker;
  d.train_slice =
      slice_utterances(d.population, {{cfg.split.enroll_end, cfg.split.train_end}});
  d.test_slice = slice_utterances(d.population, {{cfg.split.train_end, n}});
  d.trial_view = slice_utterances(
      d.population, {{0, cfg.split.enroll_end}, {cfg.split.train_end, n}});
  d.clients = partition_to_clients(d.train_slice);
  d.teacher_train = side_class_dataset(d.train_slice);
  d.teacher_eval = side_class_dataset(d.test_slice);
  d.student_train = speaker_id_dataset(d.train_slice);
  d.student_eval = speaker_id_dataset(d.test_slice);
  return d;
}

TeacherFederatedConfig materialize_federated(const ExperimentConfig& cfg) {
  TeacherFederatedConfig fed = cfg.teacher.federated;
  fed.threads = cfg.threads;
  fed.accountant.cohort_size = fed.cohort_size;
  fed.accountant.max_rounds = fed.rounds;
  return fed;
}

TeacherArtifact train_configured_teacher(const ExperimentConfig& cfg,
                                         const ExperimentData& data) {
  NetworkSpec spec =
      make_teacher_spec(cfg.population.supervector_dim, cfg.teacher.hidden,
                        cfg.population.num_side_classes);
  Rng rng = Rng(cfg.seed).derive("teacher");
  if (cfg.teacher.regime == Regime::kCentralOffline) {
    return train_teacher_central(data.teacher_train, spec,
                                 cfg.teacher.federated.local_optimizer,
                                 cfg.teacher.offline_epochs, data.teacher_eval, rng);
  }
  return train_teacher_federated(data.clients, spec, cfg.teacher.regime,
                                 materialize_federated(cfg), data.teacher_eval, rng);
}

class StageRunner {
 public:
  StageRunner(RunManifest& manifest, const ExperimentConfig& cfg)
      : manifest_(manifest), cfg_(cfg) {}

  void run(const std::string& name, const std::function<void()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      record(name, start);
      manifest_.failed_stage = name;
      try {
        write_manifest(manifest_, cfg_);
      } catch (...) {
        // The original failure is the one worth reporting.
      }
      throw std::runtime_error(name + ": " + e.what());
    }
    record(name, start);
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    manifest_.stages.push_back({name, ms});
  }

  RunManifest& manifest_;
  const ExperimentConfig& cfg_;
};

std::string fresh_run_dir(const std::string& out_dir, const std::string& hash) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_buf{};
  localtime_r(&t, &tm_buf);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
  const fs::path base = fs::path(out_dir) / ("run-" + hash.substr(0, 12) + "-" + stamp);
  fs::path dir = base;
  for (int suffix = 2; fs::exists(dir); ++suffix) {
    dir = base;
    dir += "-" + std::to_string(suffix);
  }
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    population.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("population: ") + e.what());
  }
  if (out_dir.empty()) {
    throw ConfigError("out_dir: must not be empty");
  }
  if (threads < 1) {
    throw ConfigError("threads: must be >= 1");
  }
  if (split.enroll_end < 1) {
    throw ConfigError("split.enroll_end: must be >= 1");
  }
  if (split.train_end <= split.enroll_end) {
    throw ConfigError("split.train_end: must be greater than split.enroll_end");
  }
  if (split.train_end >= population.utterances_per_speaker) {
    throw ConfigError(
        "split.train_end: must leave a non-empty test pool "
        "(train_end < population.utterances_per_speaker)");
  }
  for (int h : teacher.hidden) {
    if (h < 1) {
      throw ConfigError("teacher.hidden: layer widths must be >= 1");
    }
  }
  if (teacher.offline_epochs < 0) {
    throw ConfigError("teacher.offline_epochs: must be >= 0");
  }
  try {
    teacher.federated.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("teacher: ") + e.what());
  }
  check_optimizer(teacher.federated.local_optimizer, "teacher.optimizer");
  if (teacher.regime != Regime::kCentralOffline &&
      teacher.federated.cohort_size > population.num_speakers) {
    throw ConfigError("teacher.cohort_size: exceeds population.num_speakers (" +
                      std::to_string(teacher.federated.cohort_size) + " > " +
                      std::to_string(population.num_speakers) + ")");
  }
  for (int h : student.hidden) {
    if (h < 1) {
      throw ConfigError("student.hidden: layer widths must be >= 1");
    }
  }
  if (student.embedding_dim < 1) {
    throw ConfigError("student.embedding_dim: must be >= 1");
  }
  if (student.mode != "baseline" && student.mode != "mtl" && student.mode != "both") {
    throw ConfigError("student.mode: must be one of \"baseline\", \"mtl\", \"both\"");
  }
  if (student.epochs < 1) {
    throw ConfigError("student.epochs: must be >= 1");
  }
  check_optimizer(student.optimizer, "student.optimizer");
  try {
    student.distill.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("student: ") + e.what());
  }
  if (trials.enroll_n < 0 || trials.enroll_n > split.enroll_end) {
    throw ConfigError(
        "trials.enroll_n: must be in [1, split.enroll_end] (0 selects the default)");
  }
  if (!(trials.impostor_ratio > 0.0) || !std::isfinite(trials.impostor_ratio)) {
    throw ConfigError("trials.impostor_ratio: must be finite and > 0");
  }
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.seed = 0;
  cfg.out_dir = "runs";
  cfg.threads = 1;
  // Teacher: linear side-class classifier. At desk scale the noise floor of
  // the local mechanisms grows with sqrt(param_count / cohort), so the
  // teacher stays deliberately small to keep every regime in its intended
  // signal-to-noise band.
  cfg.teacher.hidden = {};
  cfg.teacher.regime = Regime::kCentralPlusWeakLocal;
  cfg.teacher.offline_epochs = 40;
  cfg.teacher.federated.rounds = 60;
  cfg.teacher.federated.cohort_size = 300;
  cfg.teacher.federated.local_epochs = 1;
  cfg.teacher.federated.local_optimizer = {0.3, 0.0, 0.0, 256};
  cfg.teacher.federated.clip_norm = 1.0;
  cfg.teacher.federated.central_target = {2.0, 1e-5};
  cfg.teacher.federated.local_target = {2.0, 1e-5};
  cfg.teacher.federated.weak_local = {25.7, 1e-5};
  cfg.teacher.federated.accountant.population_size = 100000000;
  cfg.teacher.federated.accountant.cohort_size = 300;
  cfg.teacher.federated.accountant.max_rounds = 60;
  cfg.teacher.federated.accountant.target_delta = 1e-5;
  cfg.student.hidden = {256, 256, 256, 256};
  cfg.student.embedding_dim = 100;
  cfg.student.mode = "both";
  cfg.student.epochs = 16;
  cfg.student.optimizer = {0.02, 0.9, 5e-4, 256};
  cfg.student.distill = DistillConfig{};
  return cfg;
}

ExperimentConfig parse_experiment_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_object(j, "config");
  reject_unknown(j, "config", {"seed", "out_dir", "threads", "population", "split",
                               "teacher", "student", "trials"});
  ExperimentConfig cfg = default_experiment_config();
  if (!j.contains("seed")) {
    throw ConfigError("seed: required field is missing");
  }
  {
    const json& v = j.at("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
      throw ConfigError("seed: expected a non-negative integer");
    }
    cfg.seed = v.get<std::uint64_t>();
  }
  cfg.out_dir = get_string(j, "out_dir", cfg.out_dir, "config");
  cfg.threads = get_int(j, "threads", cfg.threads, "config");

  if (j.contains("population")) {
    const json& p = j.at("population");
    require_object(p, "population");
    reject_unknown(p, "population",
                   {"num_speakers", "utterances_per_speaker", "supervector_dim",
                    "num_side_classes", "latent_dim", "within_speaker_noise",
                    "class_separation"});
    PopulationConfig& pc = cfg.population;
    pc.num_speakers = get_int(p, "num_speakers", pc.num_speakers, "population");
    pc.utterances_per_speaker = get_int(p, "utterances_per_speaker",
                                        pc.utterances_per_speaker, "population");
    pc.supervector_dim =
        get_int(p, "supervector_dim", pc.supervector_dim, "population");
    pc.num_side_classes =
        get_int(p, "num_side_classes", pc.num_side_classes, "population");
    pc.latent_dim = get_int(p, "latent_dim", pc.latent_dim, "population");
    pc.within_speaker_noise = get_number(p, "within_speaker_noise",
                                         pc.within_speaker_noise, "population");
    pc.class_separation =
        get_number(p, "class_separation", pc.class_separation, "population");
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    require_object(s, "split");
    reject_unknown(s, "split", {"enroll_end", "train_end"});
    cfg.split.enroll_end = get_int(s, "enroll_end", cfg.split.enroll_end, "split");
    cfg.split.train_end = get_int(s, "train_end", cfg.split.train_end, "split");
  }

  if (j.contains("teacher")) {
    const json& t = j.at("teacher");
    require_object(t, "teacher");
    reject_unknown(t, "teacher",
                   {"hidden", "regime", "rounds", "cohort_size", "local_epochs",
                    "clip_norm", "optimizer", "central_epsilon", "local_epsilon",
                    "weak_local_epsilon", "delta", "accountant_population",
                    "offline_epochs"});
    TeacherExperimentConfig& tc = cfg.teacher;
    tc.hidden = get_int_array(t, "hidden", tc.hidden, "teacher");
    if (t.contains("regime")) {
      const std::string name = get_string(t, "regime", "", "teacher");
      try {
        tc.regime = regime_from_string(name);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("teacher.regime: ") + e.what());
      }
    }
    tc.federated.rounds = get_int(t, "rounds", tc.federated.rounds, "teacher");
    tc.federated.cohort_size =
        get_int(t, "cohort_size", tc.federated.cohort_size, "teacher");
    tc.federated.local_epochs =
        get_int(t, "local_epochs", tc.federated.local_epochs, "teacher");
    tc.federated.clip_norm =
        get_number(t, "clip_norm", tc.federated.clip_norm, "teacher");
    if (t.contains("optimizer")) {
      tc.federated.local_optimizer = parse_optimizer(
          t.at("optimizer"), tc.federated.local_optimizer, "teacher.optimizer");
    }
    tc.federated.central_target.epsilon = get_number(
        t, "central_epsilon", tc.federated.central_target.epsilon, "teacher");
    tc.federated.local_target.epsilon =
        get_number(t, "local_epsilon", tc.federated.local_target.epsilon, "teacher");
    tc.federated.weak_local.epsilon = get_number(
        t, "weak_local_epsilon", tc.federated.weak_local.epsilon, "teacher");
    const double delta =
        get_number(t, "delta", tc.federated.central_target.delta, "teacher");
    tc.federated.central_target.delta = delta;
    tc.federated.local_target.delta = delta;
    tc.federated.weak_local.delta = delta;
    tc.federated.accountant.target_delta = delta;
    {
      const double pop = get_number(
          t, "accountant_population",
          static_cast<double>(tc.federated.accountant.population_size), "teacher");
      if (!(pop >= 1.0) || pop != std::floor(pop)) {
        throw ConfigError("teacher.accountant_population: must be a positive integer");
      }
      tc.federated.accountant.population_size = static_cast<std::int64_t>(pop);
    }
    tc.offline_epochs = get_int(t, "offline_epochs", tc.offline_epochs, "teacher");
  }

  if (j.contains("student")) {
    const json& s = j.at("student");
    require_object(s, "student");
    reject_unknown(s, "student", {"hidden", "embedding_dim", "mode", "epochs",
                                  "optimizer", "temperature", "gamma"});
    StudentExperimentConfig& sc = cfg.student;
    sc.hidden = get_int_array(s, "hidden", sc.hidden, "student");
    sc.embedding_dim = get_int(s, "embedding_dim", sc.embedding_dim, "student");
    sc.mode = get_string(s, "mode", sc.mode, "student");
    sc.epochs = get_int(s, "epochs", sc.epochs, "student");
    if (s.contains("optimizer")) {
      sc.optimizer =
          parse_optimizer(s.at("optimizer"), sc.optimizer, "student.optimizer");
    }
    sc.distill.temperature =
        get_number(s, "temperature", sc.distill.temperature, "student");
    sc.distill.gamma = get_number(s, "gamma", sc.distill.gamma, "student");
  }

  if (j.contains("trials")) {
    const json& t = j.at("trials");
    require_object(t, "trials");
    reject_unknown(t, "trials", {"enroll_n", "impostor_ratio"});
    cfg.trials.enroll_n = get_int(t, "enroll_n", cfg.trials.enroll_n, "trials");
    cfg.trials.impostor_ratio =
        get_number(t, "impostor_ratio", cfg.trials.impostor_ratio, "trials");
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_json_text(buf.str());
}

std::string experiment_config_dump(const ExperimentConfig& cfg) {
  // nlohmann::json orders keys lexicographically, so the dump is already
  // canonical with respect to input key order.
  json j{
      {"seed", cfg.seed},
      {"out_dir", cfg.out_dir},
      {"threads", cfg.threads},
      {"population",
       {{"num_speakers", cfg.population.num_speakers},
        {"utterances_per_speaker", cfg.population.utterances_per_speaker},
        {"supervector_dim", cfg.population.supervector_dim},
        {"num_side_classes", cfg.population.num_side_classes},
        {"latent_dim", cfg.population.latent_dim},
        {"within_speaker_noise", cfg.population.within_speaker_noise},
        {"class_separation", cfg.population.class_separation}}},
      {"split",
       {{"enroll_end", cfg.split.enroll_end}, {"train_end", cfg.split.train_end}}},
      {"teacher",
       {{"hidden", cfg.teacher.hidden},
        {"regime", regime_name(cfg.teacher.regime)},
        {"rounds", cfg.teacher.federated.rounds},
        {"cohort_size", cfg.teacher.federated.cohort_size},
        {"local_epochs", cfg.teacher.federated.local_epochs},
        {"clip_norm", cfg.teacher.federated.clip_norm},
        {"optimizer", optimizer_json(cfg.teacher.federated.local_optimizer)},
        {"central_epsilon", cfg.teacher.federated.central_target.epsilon},
        {"local_epsilon", cfg.teacher.federated.local_target.epsilon},
        {"weak_local_epsilon", cfg.teacher.federated.weak_local.epsilon},
        {"delta", cfg.teacher.federated.central_target.delta},
        {"accountant_population", cfg.teacher.federated.accountant.population_size},
        {"offline_epochs", cfg.teacher.offline_epochs}}},
      {"student",
       {{"hidden", cfg.student.hidden},
        {"embedding_dim", cfg.student.embedding_dim},
        {"mode", cfg.student.mode},
        {"epochs", cfg.student.epochs},
        {"optimizer", optimizer_json(cfg.student.optimizer)},
        {"temperature", cfg.student.distill.temperature},
        {"gamma", cfg.student.distill.gamma}}},
      {"trials",
       {{"enroll_n", cfg.trials.enroll_n},
        {"impostor_ratio", cfg.trials.impostor_ratio}}}};
  return j.dump();
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  const std::uint64_t h = Rng::fnv1a(experiment_config_dump(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunManifest manifest;
  manifest.config_hash = config_hash_hex(cfg);
  manifest.version = kVersion;
  manifest.run_dir = fresh_run_dir(cfg.out_dir, manifest.config_hash);
  const fs::path dir(manifest.run_dir);

  write_text_file((dir / "config.json").string(),
                  json::parse(experiment_config_dump(cfg)).dump(2) + "\n");
  manifest.files.push_back("config.json");

  StageRunner stages(manifest, cfg);
  ExperimentData data;
  stages.run("generate", [&] { data = build_data(cfg); });

  TeacherArtifact teacher;
  stages.run("teacher", [&] {
    teacher = train_configured_teacher(cfg, data);
    save_teacher(teacher, (dir / "teacher").string());
    manifest.files.push_back("teacher.ckpt");
    manifest.files.push_back("teacher.json");
    write_telemetry_csv(teacher.telemetry, (dir / "teacher_telemetry.csv").string());
    manifest.files.push_back("teacher_telemetry.csv");
    write_telemetry_jsonl(teacher.telemetry,
                          (dir / "teacher_telemetry.jsonl").string());
    manifest.files.push_back("teacher_telemetry.jsonl");
  });

  const bool want_baseline = cfg.student.mode != "mtl";
  const bool want_mtl = cfg.student.mode != "baseline";
  StudentResult baseline;
  StudentResult mtl;
  stages.run("student", [&] {
    const Rng student_rng = Rng(cfg.seed).derive("student");
    if (want_baseline) {
      const NetworkSpec spec = make_student_spec(
          cfg.population.supervector_dim, cfg.population.num_speakers,
          cfg.population.num_side_classes, /*with_side_head=*/false,
          cfg.student.hidden, cfg.student.embedding_dim);
      baseline = train_student(data.student_train, spec, StudentMode::kBaseline,
                               cfg.student.optimizer, cfg.student.distill, nullptr,
                               cfg.student.epochs, data.student_eval, student_rng);
      save_checkpoint(baseline.net, (dir / "student_baseline.ckpt").string());
      manifest.files.push_back("student_baseline.ckpt");
      write_student_stats_csv(baseline.stats,
                              (dir / "student_baseline_stats.csv").string());
      manifest.files.push_back("student_baseline_stats.csv");
    }
    if (want_mtl) {
      const NetworkSpec spec = make_student_spec(
          cfg.population.supervector_dim, cfg.population.num_speakers,
          cfg.population.num_side_classes, /*with_side_head=*/true,
          cfg.student.hidden, cfg.student.embedding_dim);
      mtl = train_student(data.student_train, spec, StudentMode::kMtl,
                          cfg.student.optimizer, cfg.student.distill, &teacher,
                          cfg.student.epochs, data.student_eval, student_rng);
      save_checkpoint(mtl.net, (dir / "student_mtl.ckpt").string());
      manifest.files.push_back("student_mtl.ckpt");
      write_student_stats_csv(mtl.stats, (dir / "student_mtl_stats.csv").string());
      manifest.files.push_back("student_mtl_stats.csv");
    }
  });

  TrialSet trials;
  stages.run("trials", [&] {
    const int enroll_n =
        cfg.trials.enroll_n > 0 ? cfg.trials.enroll_n : cfg.split.enroll_end;
    Rng trial_rng = Rng(cfg.seed).derive("trials");
    trials = build_trials(data.trial_view, enroll_n, cfg.trials.impostor_ratio,
                          trial_rng);
    write_trials_file(trials, (dir / "trials.bin").string());
    manifest.files.push_back("trials.bin");
  });

  EvalReport baseline_report;
  EvalReport mtl_report;
  stages.run("evaluate", [&] {
    if (want_baseline) {
      baseline_report = evaluate_sv(baseline.net, trials);
      write_eval_report_json(baseline_report,
                             (dir / "eval_baseline.json").string());
      manifest.files.push_back("eval_baseline.json");
      write_roc_csv(baseline_report, (dir / "roc_baseline.csv").string());
      manifest.files.push_back("roc_baseline.csv");
    }
    if (want_mtl) {
      mtl_report = evaluate_sv(mtl.net, trials);
      write_eval_report_json(mtl_report, (dir / "eval_mtl.json").string());
      manifest.files.push_back("eval_mtl.json");
      write_roc_csv(mtl_report, (dir / "roc_mtl.csv").string());
      manifest.files.push_back("roc_mtl.csv");
    }

    json students = json::object();
    if (want_baseline) {
      students["baseline"] = {
          {"speaker_accuracy", baseline.final_speaker_accuracy},
          {"eer", baseline_report.eer},
          {"trial_count", baseline_report.trial_count}};
    }
    if (want_mtl) {
      students["mtl"] = {{"speaker_accuracy", mtl.final_speaker_accuracy},
                         {"side_agreement", mtl.final_side_agreement},
                         {"eer", mtl_report.eer},
                         {"trial_count", mtl_report.trial_count}};
    }
    const json metrics{{"teacher",
                        {{"regime", regime_name(teacher.regime)},
                         {"final_accuracy", teacher.final_accuracy}}},
                       {"students", students}};
    write_text_file((dir / "metrics.json").string(), metrics.dump(2) + "\n");
    manifest.files.push_back("metrics.json");
  });

  write_manifest(manifest, cfg);
  return manifest;
}

std::vector<RegimeRow> compare_regimes(const ExperimentConfig& cfg,
                                       const std::vector<Regime>& regimes,
                                       const std::string& out_dir) {
  cfg.validate();
  if (regimes.size() < 2) {
    throw ConfigError("compare-regimes: needs at least two regimes");
  }
  for (Regime r : regimes) {
    if (r == Regime::kCentralOffline) {
      throw ConfigError(
          "compare-regimes: only federated regimes can be compared (got \"" +
          regime_name(r) + "\")");
    }
  }
  const ExperimentData data = build_data(cfg);
  const NetworkSpec spec =
      make_teacher_spec(cfg.population.supervector_dim, cfg.teacher.hidden,
                        cfg.population.num_side_classes);
  const TeacherFederatedConfig fed = materialize_federated(cfg);

  std::vector<RegimeRow> rows;
  for (Regime r : regimes) {
    // Every regime trains from the identical seed stream so data, cohorts
    // and initialization match; only the mechanisms differ.
    const TeacherArtifact artifact = train_teacher_federated(
        data.clients, spec, r, fed, data.teacher_eval, Rng(cfg.seed).derive("teacher"));
    RegimeRow row;
    row.regime = r;
    row.final_accuracy = artifact.final_accuracy;
    row.first_round_snr =
        artifact.telemetry.empty()
            ? std::numeric_limits<double>::infinity()
            : artifact.telemetry.front().overall_snr;
    row.privacy = artifact.privacy;
    rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_regime_csv(rows, (fs::path(out_dir) / "regimes.csv").string());
  }
  return rows;
}

void write_regime_csv(const std::vector<RegimeRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "regime,final_accuracy,first_round_snr,epsilon,delta,mechanism\n";
  for (const RegimeRow& row : rows) {
    const double eps = row.privacy.has_guarantee
                           ? row.privacy.epsilon
                           : std::numeric_limits<double>::infinity();
    const double delta = row.privacy.has_guarantee ? row.privacy.delta : 0.0;
    out << regime_name(row.regime) << ',' << format_double(row.final_accuracy)
        << ',' << format_double(row.first_round_snr) << ',' << format_double(eps)
        << ',' << format_double(delta) << ",\"" << row.privacy.mechanism << "\"\n";
  }
  write_text_file(path, out.str());
}

}  // namespace fedsv
