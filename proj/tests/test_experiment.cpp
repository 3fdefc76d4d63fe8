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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedsv/experiment.hpp"

using namespace fedsv;
namespace fs = std::filesystem;

namespace {

// Message of the ConfigError thrown while parsing `text`, empty if none.
std::string parse_error(const std::string& text) {
  try {
    parse_experiment_json_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Small population and short schedules so full pipeline runs stay under a
// few seconds.
ExperimentConfig tiny_config(std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig cfg = default_experiment_config();
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  cfg.population.num_speakers = 12;
  cfg.population.utterances_per_speaker = 8;
  cfg.population.supervector_dim = 16;
  cfg.population.num_side_classes = 2;
  cfg.population.latent_dim = 4;
  cfg.population.within_speaker_noise = 0.5;
  cfg.population.class_separation = 10.0;
  cfg.split.enroll_end = 2;
  cfg.split.train_end = 6;
  cfg.teacher.regime = Regime::kNoDP;
  cfg.teacher.federated.rounds = 3;
  cfg.teacher.federated.cohort_size = 8;
  cfg.teacher.federated.local_optimizer = {0.3, 0.0, 0.0, 256};
  cfg.student.hidden = {8};
  cfg.student.embedding_dim = 6;
  cfg.student.epochs = 2;
  cfg.student.optimizer = {0.05, 0.9, 5e-4, 32};
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("desk defaults form a valid configuration") {
  const ExperimentConfig cfg = default_experiment_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.teacher.hidden.empty());
  CHECK(cfg.teacher.regime == Regime::kCentralPlusWeakLocal);
  CHECK(cfg.student.mode == "both");
  const std::string hash = config_hash_hex(cfg);
  CHECK(hash.size() == 16);
  CHECK(hash.find_first_not_of("0123456789abcdef") == std::string::npos);
}

TEST_CASE("minimal config inherits every default") {
  const ExperimentConfig parsed = parse_experiment_json_text("{\"seed\": 7}");
  ExperimentConfig expected = default_experiment_config();
  expected.seed = 7;
  CHECK(experiment_config_dump(parsed) == experiment_config_dump(expected));
  CHECK(config_hash_hex(parsed) == config_hash_hex(expected));
}

TEST_CASE("parse failures name the offending field") {
  CHECK(contains(parse_error("{"), "not valid JSON"));
  CHECK(contains(parse_error("[1, 2]"), "expected an object"));
  CHECK(contains(parse_error("{}"), "seed: required field is missing"));
  CHECK(contains(parse_error("{\"seed\": -4}"),
                 "seed: expected a non-negative integer"));
  CHECK(contains(parse_error("{\"seed\": 1.5}"),
                 "seed: expected a non-negative integer"));
  CHECK(contains(parse_error("{\"seed\": 1, \"bogus\": 3}"),
                 "config.bogus: unknown field"));
  CHECK(contains(parse_error("{\"seed\": 1, \"population\": {\"bogus\": 3}}"),
                 "population.bogus: unknown field"));
  CHECK(contains(parse_error("{\"seed\": 1, \"threads\": \"two\"}"),
                 "config.threads: expected an integer"));
  CHECK(contains(parse_error("{\"seed\": 1, \"teacher\": {\"hidden\": [8, \"x\"]}}"),
                 "teacher.hidden: expected an array of integers"));
  CHECK(contains(parse_error("{\"seed\": 1, \"teacher\": {\"regime\": \"bogus\"}}"),
                 "teacher.regime"));
  CHECK(contains(parse_error("{\"seed\": 1, \"student\": {\"mode\": \"sideways\"}}"),
                 "student.mode"));
  CHECK(contains(parse_error("{\"seed\": 1, \"threads\": 0}"), "threads"));
  CHECK(contains(
      parse_error("{\"seed\": 1, \"split\": {\"enroll_end\": 6, \"train_end\": 4}}"),
      "split.train_end"));
  CHECK(contains(parse_error("{\"seed\": 1, \"student\": {\"gamma\": -2.0}}"),
                 "student"));
}

TEST_CASE("config file loader reports unreadable paths") {
  CHECK_THROWS_AS(parse_experiment_config("no_such_config.json"), ConfigError);
  const std::string path = "parse_roundtrip_config.json";
  {
    std::ofstream out(path);
    out << "{\"seed\": 11, \"threads\": 2}\n";
  }
  const ExperimentConfig cfg = parse_experiment_config(path);
  CHECK(cfg.seed == 11);
  CHECK(cfg.threads == 2);
  fs::remove(path);
}

TEST_CASE("config hash ignores key order and tracks content") {
  const ExperimentConfig a = parse_experiment_json_text(
      "{\"seed\": 5, \"threads\": 2, \"student\": {\"epochs\": 4, \"gamma\": 1.0}}");
  const ExperimentConfig b = parse_experiment_json_text(
      "{\"student\": {\"gamma\": 1.0, \"epochs\": 4}, \"threads\": 2, \"seed\": 5}");
  CHECK(config_hash_hex(a) == config_hash_hex(b));

  const ExperimentConfig c = parse_experiment_json_text(
      "{\"seed\": 5, \"threads\": 2, \"student\": {\"epochs\": 4, \"gamma\": 1.5}}");
  CHECK(config_hash_hex(c) != config_hash_hex(a));

  const ExperimentConfig d = parse_experiment_json_text("{\"seed\": 6}");
  const ExperimentConfig e = parse_experiment_json_text("{\"seed\": 5}");
  CHECK(config_hash_hex(d) != config_hash_hex(e));
}

TEST_CASE("materialized dump reparses to the identical configuration") {
  ExperimentConfig cfg = tiny_config(21, "unused");
  cfg.teacher.regime = Regime::kLocalDP;
  cfg.student.mode = "mtl";
  const std::string dump = experiment_config_dump(cfg);
  const ExperimentConfig back = parse_experiment_json_text(dump);
  CHECK(experiment_config_dump(back) == dump);
  CHECK(config_hash_hex(back) == config_hash_hex(cfg));
}

TEST_CASE("validation rejects a cohort larger than the population") {
  ExperimentConfig cfg = tiny_config(3, "exp_test_runs/never_created");
  cfg.teacher.federated.cohort_size = 50;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "cohort_size"));
  }
  // The run must fail before any artifact directory appears.
  fs::remove_all("exp_test_runs/never_created");
  CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
  CHECK(!fs::exists("exp_test_runs/never_created"));
}

TEST_CASE("full pipeline writes the documented artifact set") {
  const std::string out_dir = "exp_test_runs/pipeline";
  fs::remove_all(out_dir);
  const ExperimentConfig cfg = tiny_config(42, out_dir);
  const RunManifest manifest = run_experiment(cfg);

  CHECK(manifest.failed_stage.empty());
  CHECK(manifest.config_hash == config_hash_hex(cfg));
  CHECK(manifest.version.rfind("fedsv ", 0) == 0);

  const std::vector<std::string> stage_names = {"generate", "teacher", "student",
                                                "trials", "evaluate"};
  REQUIRE(manifest.stages.size() == stage_names.size());
  for (std::size_t i = 0; i < stage_names.size(); ++i) {
    CHECK(manifest.stages[i].name == stage_names[i]);
    CHECK(manifest.stages[i].ms >= 0.0);
  }

  const std::vector<std::string> expected_files = {
      "config.json",           "teacher.ckpt",
      "teacher.json",          "teacher_telemetry.csv",
      "teacher_telemetry.jsonl", "student_baseline.ckpt",
      "student_baseline_stats.csv", "student_mtl.ckpt",
      "student_mtl_stats.csv", "trials.bin",
      "eval_baseline.json",    "roc_baseline.csv",
      "eval_mtl.json",         "roc_mtl.csv",
      "metrics.json"};
  CHECK(manifest.files == expected_files);
  for (const std::string& f : manifest.files) {
    CHECK(fs::exists(fs::path(manifest.run_dir) / f));
  }
  CHECK(fs::exists(fs::path(manifest.run_dir) / "manifest.json"));

  // The stored config reparses to the same hash, so a run directory is
  // self-describing.
  const ExperimentConfig stored =
      parse_experiment_json_text(slurp(fs::path(manifest.run_dir) / "config.json"));
  CHECK(config_hash_hex(stored) == manifest.config_hash);

  const nlohmann::json written_manifest =
      nlohmann::json::parse(slurp(fs::path(manifest.run_dir) / "manifest.json"));
  CHECK(written_manifest.at("config_hash").get<std::string>() == manifest.config_hash);
  CHECK(written_manifest.at("failed_stage").get<std::string>().empty());
  CHECK(written_manifest.at("files").get<std::vector<std::string>>() ==
        manifest.files);

  const nlohmann::json metrics =
      nlohmann::json::parse(slurp(fs::path(manifest.run_dir) / "metrics.json"));
  CHECK(metrics.at("teacher").at("regime").get<std::string>() == "nodp");
  CHECK(metrics.at("teacher").at("final_accuracy").get<double>() > 0.5);
  const nlohmann::json& students = metrics.at("students");
  for (const char* who : {"baseline", "mtl"}) {
    const nlohmann::json& s = students.at(who);
    const double eer = s.at("eer").get<double>();
    CHECK(eer >= 0.0);
    CHECK(eer <= 1.0);
    CHECK(s.at("trial_count").get<int>() > 0);
    CHECK(s.at("speaker_accuracy").get<double>() >= 0.0);
  }
  CHECK(students.at("mtl").contains("side_agreement"));
  fs::remove_all("exp_test_runs");
}

TEST_CASE("student mode selects which artifacts exist") {
  const std::string out_dir = "exp_test_runs/mode_baseline";
  fs::remove_all(out_dir);
  ExperimentConfig cfg = tiny_config(43, out_dir);
  cfg.student.mode = "baseline";
  const RunManifest manifest = run_experiment(cfg);
  CHECK(manifest.failed_stage.empty());
  for (const std::string& f : manifest.files) {
    CHECK(f.find("mtl") == std::string::npos);
  }
  const nlohmann::json metrics =
      nlohmann::json::parse(slurp(fs::path(manifest.run_dir) / "metrics.json"));
  CHECK(metrics.at("students").contains("baseline"));
  CHECK(!metrics.at("students").contains("mtl"));
  fs::remove_all("exp_test_runs");
}

TEST_CASE("identical configs reproduce run artifacts byte for byte") {
  fs::remove_all("exp_test_runs");
  const ExperimentConfig first = tiny_config(77, "exp_test_runs/rerun_a");
  const ExperimentConfig second = tiny_config(77, "exp_test_runs/rerun_b");
  const RunManifest a = run_experiment(first);
  const RunManifest b = run_experiment(second);

  // Timings and the run directory differ; every data artifact must not.
  for (const char* f : {"metrics.json", "eval_baseline.json", "eval_mtl.json",
                        "trials.bin", "teacher.ckpt", "student_baseline.ckpt",
                        "student_mtl.ckpt", "student_baseline_stats.csv",
                        "student_mtl_stats.csv", "roc_baseline.csv", "roc_mtl.csv"}) {
    CHECK(slurp(fs::path(a.run_dir) / f) == slurp(fs::path(b.run_dir) / f));
  }

  // A different seed must change the measured outcome artifacts.
  const ExperimentConfig third = tiny_config(78, "exp_test_runs/rerun_c");
  const RunManifest c = run_experiment(third);
  CHECK(slurp(fs::path(a.run_dir) / "teacher.ckpt") !=
        slurp(fs::path(c.run_dir) / "teacher.ckpt"));
  fs::remove_all("exp_test_runs");
}

TEST_CASE("regime comparison shares data and reports mechanism rows") {
  const std::string out_dir = "exp_test_runs/regimes";
  fs::remove_all(out_dir);
  ExperimentConfig cfg = tiny_config(5, out_dir);
  cfg.teacher.federated.rounds = 15;
  // Four side classes and a tight local budget: the per-update noise sits far
  // above the clipped signal and the finer decision boundaries do not survive
  // it, so the clean regime separates decisively even at desk scale.
  cfg.population.num_side_classes = 4;
  cfg.population.utterances_per_speaker = 12;
  cfg.teacher.federated.local_target = {0.5, 1e-5};

  const std::vector<RegimeRow> rows =
      compare_regimes(cfg, {Regime::kNoDP, Regime::kLocalDP}, out_dir);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].regime == Regime::kNoDP);
  CHECK(rows[1].regime == Regime::kLocalDP);

  // No mechanism: exact updates, infinite first-round SNR, no guarantee.
  CHECK(std::isinf(rows[0].first_round_snr));
  CHECK(!rows[0].privacy.has_guarantee);
  // Per-update local noise: finite SNR and a stated (epsilon, delta).
  CHECK(std::isfinite(rows[1].first_round_snr));
  CHECK(rows[1].first_round_snr > 0.0);
  CHECK(rows[1].privacy.has_guarantee);
  CHECK(rows[1].privacy.epsilon == cfg.teacher.federated.local_target.epsilon);

  // The strong local mechanism wipes out most of the signal on this easy
  // side-class task, so the clean regime trains strictly better.
  CHECK(rows[0].final_accuracy > rows[1].final_accuracy);
  CHECK(rows[0].final_accuracy > 0.85);

  const std::string csv = slurp(fs::path(out_dir) / "regimes.csv");
  CHECK(csv.rfind("regime,final_accuracy,first_round_snr,epsilon,delta,mechanism\n",
                  0) == 0);
  CHECK(contains(csv, "\nlocaldp,"));
  CHECK(csv.rfind("nodp,", 0) == std::string::npos);  // header comes first
  CHECK(contains(csv, ",inf,"));  // unbounded epsilon for the clean regime
  fs::remove_all("exp_test_runs");
}

TEST_CASE("regime comparison rejects degenerate requests") {
  const ExperimentConfig cfg = tiny_config(6, "exp_test_runs/regime_errors");
  CHECK_THROWS_AS(compare_regimes(cfg, {Regime::kNoDP}, ""), ConfigError);
  CHECK_THROWS_AS(
      compare_regimes(cfg, {Regime::kNoDP, Regime::kCentralOffline}, ""),
      ConfigError);
  CHECK(!fs::exists("exp_test_runs/regime_errors"));
}

TEST_CASE("regime csv encodes missing guarantees as inf") {
  std::vector<RegimeRow> rows(2);
  rows[0].regime = Regime::kNoDP;
  rows[0].final_accuracy = 0.975;
  rows[0].first_round_snr = std::numeric_limits<double>::infinity();
  rows[0].privacy.has_guarantee = false;
  rows[0].privacy.mechanism = "none (anonymity only)";
  rows[1].regime = Regime::kLocalDP;
  rows[1].final_accuracy = 0.5;
  rows[1].first_round_snr = 0.25;
  rows[1].privacy.has_guarantee = true;
  rows[1].privacy.epsilon = 2.0;
  rows[1].privacy.delta = 1e-5;
  rows[1].privacy.mechanism = "per-round local Gaussian mechanism";

  const std::string path = "regime_csv_test.csv";
  write_regime_csv(rows, path);
  const std::string csv = slurp(path);
  std::istringstream in(csv);
  std::string header, line0, line1;
  std::getline(in, header);
  std::getline(in, line0);
  std::getline(in, line1);
  CHECK(header == "regime,final_accuracy,first_round_snr,epsilon,delta,mechanism");
  CHECK(line0 == "nodp,0.97499999999999998,inf,inf,0,\"none (anonymity only)\"");
  CHECK(line1 == "localdp,0.5,0.25,2,1.0000000000000001e-05,"
                 "\"per-round local Gaussian mechanism\"");
  fs::remove(path);
}
