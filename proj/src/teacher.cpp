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

#include "fedsv/teacher.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedsv/checkpoint.hpp"
#include "json.hpp"

namespace fedsv {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kNoDP: return "nodp";
    case Regime::kLocalDP: return "localdp";
    case Regime::kCentralDP: return "centraldp";
    case Regime::kCentralPlusWeakLocal: return "central_weaklocal";
    case Regime::kCentralOffline: return "offline";
  }
  throw std::invalid_argument("regime_name: unknown regime");
}

Regime regime_from_string(const std::string& name) {
  if (name == "nodp") return Regime::kNoDP;
  if (name == "localdp") return Regime::kLocalDP;
  if (name == "centraldp") return Regime::kCentralDP;
  if (name == "central_weaklocal") return Regime::kCentralPlusWeakLocal;
  if (name == "offline") return Regime::kCentralOffline;
  throw std::invalid_argument("unknown regime: " + name +
                              " (expected nodp, localdp, centraldp, "
                              "central_weaklocal or offline)");
}

NetworkSpec make_teacher_spec(int input_dim, const std::vector<int>& hidden,
                              int num_classes) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  int dim = input_dim;
  for (int h : hidden) {
    spec.trunk.push_back({LayerKind::kDense, dim, h});
    spec.trunk.push_back({LayerKind::kBatchNorm, h, h});
    spec.trunk.push_back({LayerKind::kSigmoid, h, h});
    dim = h;
  }
  spec.heads.push_back({"side", num_classes});
  spec.validate();
  return spec;
}

void TeacherFederatedConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("TeacherFederatedConfig: rounds < 1");
  if (cohort_size < 1) throw std::invalid_argument("TeacherFederatedConfig: cohort_size < 1");
  if (local_epochs < 0) throw std::invalid_argument("TeacherFederatedConfig: local_epochs < 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("TeacherFederatedConfig: clip_norm <= 0");
  local_optimizer.validate();
  central_target.validate();
  local_target.validate();
  weak_local.validate();
  accountant.validate();
}

RoundConfig make_round_config(Regime regime, const TeacherFederatedConfig& cfg) {
  cfg.validate();
  RoundConfig rc;
  rc.cohort_size = cfg.cohort_size;
  rc.local_epochs = cfg.local_epochs;
  rc.local_optimizer = cfg.local_optimizer;
  rc.loss_head = "side";

  const double q = static_cast<double>(cfg.cohort_size) /
                   static_cast<double>(cfg.accountant.population_size);
  switch (regime) {
    case Regime::kNoDP:
      break;
    case Regime::kLocalDP: {
      rc.local_mechanism.placement = Placement::kLocal;
      rc.local_mechanism.clip_norm = cfg.clip_norm;
      const double sigma = gaussian_sigma(cfg.local_target, cfg.clip_norm);
      rc.local_mechanism.noise_multiplier = sigma / cfg.clip_norm;
      break;
    }
    case Regime::kCentralDP: {
      rc.local_mechanism.placement = Placement::kLocal;
      rc.local_mechanism.clip_norm = cfg.clip_norm;
      rc.local_mechanism.noise_multiplier = 0.0;  // clip only
      rc.central_mechanism.placement = Placement::kCentral;
      rc.central_mechanism.clip_norm = cfg.clip_norm;
      rc.central_mechanism.noise_multiplier =
          accountant_sigma(cfg.central_target, q, cfg.rounds);
      break;
    }
    case Regime::kCentralPlusWeakLocal: {
      rc.local_mechanism.placement = Placement::kWeakLocal;
      rc.local_mechanism.clip_norm = cfg.clip_norm;
      rc.local_mechanism.local_epsilon = cfg.weak_local.epsilon;
      rc.local_mechanism.local_delta = cfg.weak_local.delta;
      rc.central_mechanism.placement = Placement::kCentral;
      rc.central_mechanism.clip_norm = cfg.clip_norm;
      rc.central_mechanism.noise_multiplier =
          accountant_sigma(cfg.central_target, q, cfg.rounds);
      break;
    }
    case Regime::kCentralOffline:
      throw std::invalid_argument(
          "make_round_config: offline regime is not federated");
  }
  rc.validate();
  return rc;
}

PrivacyReport make_privacy_report(Regime regime, const TeacherFederatedConfig& cfg) {
  PrivacyReport report;
  const double q = static_cast<double>(cfg.cohort_size) /
                   static_cast<double>(cfg.accountant.population_size);
  switch (regime) {
    case Regime::kNoDP:
      report.mechanism = "none (anonymity only)";
      break;
    case Regime::kCentralOffline:
      report.mechanism = "none (central data)";
      break;
    case Regime::kLocalDP: {
      report.mechanism = "per-round local Gaussian mechanism";
      report.has_guarantee = true;
      report.epsilon = cfg.local_target.epsilon;
      report.delta = cfg.local_target.delta;
      report.clip_norm = cfg.clip_norm;
      report.local_sigma = gaussian_sigma(cfg.local_target, cfg.clip_norm);
      break;
    }
    case Regime::kCentralDP: {
      report.mechanism = "central subsampled Gaussian (moments accountant)";
      report.has_guarantee = true;
      report.epsilon = cfg.central_target.epsilon;
      report.delta = cfg.central_target.delta;
      report.clip_norm = cfg.clip_norm;
      report.noise_multiplier = accountant_sigma(cfg.central_target, q, cfg.rounds);
      break;
    }
    case Regime::kCentralPlusWeakLocal: {
      report.mechanism =
          "central subsampled Gaussian (moments accountant) plus weak local "
          "Gaussian at epsilon " + std::to_string(cfg.weak_local.epsilon);
      report.has_guarantee = true;
      report.epsilon = cfg.central_target.epsilon;
      report.delta = cfg.central_target.delta;
      report.clip_norm = cfg.clip_norm;
      report.noise_multiplier = accountant_sigma(cfg.central_target, q, cfg.rounds);
      report.local_sigma = gaussian_sigma(cfg.weak_local, cfg.clip_norm);
      break;
    }
  }
  return report;
}

TeacherArtifact train_teacher_central(const LabeledData& data,
                                      const NetworkSpec& spec,
                                      const OptimizerConfig& opt, int epochs,
                                      const LabeledData& eval_set, const Rng& rng) {
  if (data.x.rows == 0) throw std::invalid_argument("train_teacher_central: empty data");
  opt.validate();
  if (epochs < 0) throw std::invalid_argument("train_teacher_central: epochs < 0");

  TeacherArtifact artifact;
  artifact.regime = Regime::kCentralOffline;
  artifact.seed = rng.seed();
  artifact.net = Network(spec);
  artifact.net.init_params(rng.derive("init"));
  artifact.privacy.mechanism = "none (central data)";

  Rng shuffle_rng = rng.derive("shuffle");
  SgdState state;
  const int n = data.x.rows;
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
      Matrix batch(count, data.x.cols);
      std::vector<int> labels(static_cast<std::size_t>(count));
      for (int r = 0; r < count; ++r) {
        const int src = order[static_cast<std::size_t>(start + r)];
        std::copy(data.x.row_ptr(src), data.x.row_ptr(src) + data.x.cols,
                  batch.row_ptr(r));
        labels[static_cast<std::size_t>(r)] = data.labels[static_cast<std::size_t>(src)];
      }
      ForwardCache cache;
      ForwardResult fwd = artifact.net.forward(batch, Mode::kTrain, &cache);
      LossResult loss = cross_entropy_loss(fwd.head_logits.at("side"), labels);
      Gradients grads = artifact.net.backward(cache, {{"side", loss.dlogits}});
      sgd_step(artifact.net, grads, opt, state);
      artifact.net.update_running_stats(cache);
    }
    RoundTelemetry t;
    t.round = epoch;
    t.accuracy = eval_accuracy(artifact.net, eval_set, "side");
    t.local_snr = kInf;
    t.central_snr = kInf;
    t.overall_snr = kInf;
    artifact.telemetry.push_back(std::move(t));
  }
  artifact.final_accuracy = epochs > 0
                                ? artifact.telemetry.back().accuracy
                                : eval_accuracy(artifact.net, eval_set, "side");
  return artifact;
}

TeacherArtifact train_teacher_federated(const std::vector<ClientDataset>& population,
                                        const NetworkSpec& spec, Regime regime,
                                        const TeacherFederatedConfig& cfg,
                                        const LabeledData& eval_set, const Rng& rng,
                                        const Network* warm_start) {
  if (regime == Regime::kCentralOffline) {
    throw std::invalid_argument(
        "train_teacher_federated: offline regime trains centrally");
  }
  const RoundConfig rc = make_round_config(regime, cfg);
  FederatedResult fed = run_federated_training(population, spec, cfg.rounds, rc,
                                               eval_set, rng, cfg.threads, warm_start);
  TeacherArtifact artifact;
  artifact.net = std::move(fed.net);
  artifact.regime = regime;
  artifact.telemetry = std::move(fed.telemetry);
  artifact.final_accuracy = artifact.telemetry.back().accuracy;
  artifact.privacy = make_privacy_report(regime, cfg);
  artifact.seed = rng.seed();
  return artifact;
}

Matrix teacher_logits(const TeacherArtifact& artifact, const Matrix& batch) {
  ForwardResult fwd = artifact.net.forward(batch, Mode::kInfer);
  return fwd.head_logits.at("side");
}

void save_teacher(const TeacherArtifact& artifact, const std::string& prefix) {
  save_checkpoint(artifact.net, prefix + ".ckpt");
  nlohmann::json j;
  j["regime"] = regime_name(artifact.regime);
  j["final_accuracy"] = artifact.final_accuracy;
  j["seed"] = artifact.seed;
  j["privacy"] = {
      {"mechanism", artifact.privacy.mechanism},
      {"has_guarantee", artifact.privacy.has_guarantee},
      {"epsilon", artifact.privacy.epsilon},
      {"delta", artifact.privacy.delta},
      {"clip_norm", artifact.privacy.clip_norm},
      {"noise_multiplier", artifact.privacy.noise_multiplier},
      {"local_sigma", artifact.privacy.local_sigma},
  };
  std::ofstream out(prefix + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error("save_teacher: cannot open " + prefix + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_teacher: write failed");
}

TeacherArtifact load_teacher(const std::string& prefix) {
  TeacherArtifact artifact;
  artifact.net = load_checkpoint(prefix + ".ckpt");
  std::ifstream in(prefix + ".json");
  if (!in) throw std::runtime_error("load_teacher: cannot open " + prefix + ".json");
  nlohmann::json j;
  in >> j;
  artifact.regime = regime_from_string(j.at("regime").get<std::string>());
  artifact.final_accuracy = j.at("final_accuracy").get<double>();
  artifact.seed = j.at("seed").get<std::uint64_t>();
  const auto& p = j.at("privacy");
  artifact.privacy.mechanism = p.at("mechanism").get<std::string>();
  artifact.privacy.has_guarantee = p.at("has_guarantee").get<bool>();
  artifact.privacy.epsilon = p.at("epsilon").get<double>();
  artifact.privacy.delta = p.at("delta").get<double>();
  artifact.privacy.clip_norm = p.at("clip_norm").get<double>();
  artifact.privacy.noise_multiplier = p.at("noise_multiplier").get<double>();
  artifact.privacy.local_sigma = p.at("local_sigma").get<double>();
  return artifact;
}

}  // namespace fedsv
