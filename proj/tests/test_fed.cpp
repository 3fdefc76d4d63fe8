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

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "fedsv/fed.hpp"

using namespace fedsv;

namespace {

NetworkSpec round_spec(int in, int hidden, int classes) {
  NetworkSpec spec;
  spec.input_dim = in;
  spec.trunk.push_back({LayerKind::kDense, in, hidden});
  spec.trunk.push_back({LayerKind::kBatchNorm, hidden, hidden});
  spec.trunk.push_back({LayerKind::kSigmoid, hidden, hidden});
  spec.heads.push_back({"side", classes});
  return spec;
}

std::vector<ClientDataset> toy_clients(int n_clients, int rows, int dim,
                                       int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ClientDataset> clients;
  for (int c = 0; c < n_clients; ++c) {
    ClientDataset cd;
    cd.client_id = c;
    cd.data.x = Matrix(rows, dim);
    for (double& v : cd.data.x.data) v = rng.uniform(-1.0, 1.0);
    for (int r = 0; r < rows; ++r) {
      cd.data.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
    }
    clients.push_back(std::move(cd));
  }
  return clients;
}

LabeledData flatten_clients(const std::vector<ClientDataset>& clients) {
  LabeledData out;
  const int dim = clients[0].data.x.cols;
  int rows = 0;
  for (const ClientDataset& c : clients) rows += c.data.x.rows;
  out.x = Matrix(rows, dim);
  int at = 0;
  for (const ClientDataset& c : clients) {
    for (int r = 0; r < c.data.x.rows; ++r, ++at) {
      for (int i = 0; i < dim; ++i) out.x(at, i) = c.data.x(r, i);
      out.labels.push_back(c.data.labels[static_cast<std::size_t>(r)]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("cohort sampling returns sorted distinct indices in range") {
  const std::vector<ClientDataset> pop = toy_clients(10, 2, 3, 2, 1);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<int> cohort = sample_cohort(pop, 4, rng);
    REQUIRE(cohort.size() == 4);
    std::set<int> seen;
    int prev = -1;
    for (int idx : cohort) {
      CHECK(idx >= 0);
      CHECK(idx < 10);
      CHECK(idx > prev);  // strictly ascending implies distinct
      prev = idx;
      seen.insert(idx);
    }
    CHECK(seen.size() == 4);
  }

  // Full-population cohort is the identity selection.
  Rng rng2(6);
  const std::vector<int> all = sample_cohort(pop, 10, rng2);
  for (int i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);

  Rng rng3(7);
  CHECK_THROWS_AS(sample_cohort(pop, 0, rng3), std::invalid_argument);
  CHECK_THROWS_AS(sample_cohort(pop, 11, rng3), std::invalid_argument);
}

TEST_CASE("cohort sampling is close to uniform over indices") {
  const std::vector<ClientDataset> pop = toy_clients(10, 2, 3, 2, 1);
  Rng rng(99);
  std::vector<int> counts(10, 0);
  const int draws = 3000;
  for (int d = 0; d < draws; ++d) {
    for (int idx : sample_cohort(pop, 3, rng)) counts[static_cast<std::size_t>(idx)]++;
  }
  const double expected = draws * 3 / 10.0;
  double chi2 = 0.0;
  for (int c : counts) {
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // 9 degrees of freedom; 30 is far beyond the 0.999 quantile.
  CHECK(chi2 < 30.0);
}

TEST_CASE("local update on a one-row client equals explicit sgd steps") {
  const NetworkSpec spec = round_spec(3, 4, 3);
  Network central(spec);
  central.init_params(Rng(21));

  ClientDataset client;
  client.client_id = 0;
  client.data.x = Matrix(1, 3);
  client.data.x.data = {0.3, -0.7, 0.2};
  client.data.labels = {1};

  RoundConfig cfg;
  cfg.cohort_size = 1;
  cfg.local_epochs = 3;
  cfg.local_optimizer.learning_rate = 0.2;
  cfg.local_optimizer.momentum = 0.9;
  cfg.local_optimizer.weight_decay = 1e-3;
  cfg.local_optimizer.batch_size = 8;

  Rng rng(31);
  const LocalUpdateResult lu = local_update(central, client, cfg, rng);
  REQUIRE(!lu.skipped);

  // Replay: same steps on a copy, fresh optimizer state, batch = the row.
  Network net = central;
  SgdState state;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    ForwardCache cache;
    ForwardResult fwd = net.forward(client.data.x, Mode::kTrain, &cache);
    LossResult loss = cross_entropy_loss(fwd.head_logits.at("side"), client.data.labels);
    Gradients grads = net.backward(cache, {{"side", loss.dlogits}});
    sgd_step(net, grads, cfg.local_optimizer, state);
    net.update_running_stats(cache);
  }
  const std::vector<double> trained = net.param_vector();
  const std::vector<double> base = central.param_vector();
  REQUIRE(lu.delta.size() == trained.size());
  for (std::size_t i = 0; i < trained.size(); ++i) {
    CHECK(lu.delta[i] == trained[i] - base[i]);
  }

  // The central network itself is untouched.
  CHECK(central.param_vector() == base);

  // Zero learning rate on a batch-norm-free network produces a zero delta
  // (with batch norm the running statistics would still move).
  NetworkSpec plain;
  plain.input_dim = 3;
  plain.trunk.push_back({LayerKind::kDense, 3, 4});
  plain.trunk.push_back({LayerKind::kSigmoid, 4, 4});
  plain.heads.push_back({"side", 3});
  Network frozen_central(plain);
  frozen_central.init_params(Rng(22));
  RoundConfig frozen = cfg;
  frozen.local_optimizer.learning_rate = 0.0;
  frozen.local_optimizer.weight_decay = 0.0;
  Rng rng2(32);
  const LocalUpdateResult still = local_update(frozen_central, client, frozen, rng2);
  CHECK(l2_norm(still.delta) == 0.0);
}

TEST_CASE("empty client data is skipped with a note") {
  const NetworkSpec spec = round_spec(3, 4, 2);
  Network central(spec);
  central.init_params(Rng(41));
  ClientDataset empty;
  empty.client_id = 7;
  RoundConfig cfg;
  Rng rng(42);
  const LocalUpdateResult lu = local_update(central, empty, cfg, rng);
  CHECK(lu.skipped);
  CHECK(lu.note.find("7") != std::string::npos);
  CHECK(lu.delta.empty());
}

TEST_CASE("federated round matches a step-by-step replay from public pieces") {
  const NetworkSpec spec = round_spec(3, 4, 3);
  const std::vector<ClientDataset> pop = toy_clients(6, 5, 3, 3, 77);

  RoundConfig cfg;
  cfg.cohort_size = 4;
  cfg.local_epochs = 1;
  cfg.local_optimizer.learning_rate = 0.1;
  cfg.local_optimizer.momentum = 0.9;
  cfg.local_optimizer.weight_decay = 1e-4;
  cfg.local_optimizer.batch_size = 2;
  cfg.local_mechanism.placement = Placement::kLocal;
  cfg.local_mechanism.clip_norm = 0.5;
  cfg.local_mechanism.noise_multiplier = 0.8;
  cfg.central_mechanism.placement = Placement::kCentral;
  cfg.central_mechanism.clip_norm = 0.5;
  cfg.central_mechanism.noise_multiplier = 1.1;

  Network central(spec);
  central.init_params(Rng(50));
  Network replayed = central;  // same starting point

  const Rng round_rng = Rng(60).derive("round", 0);
  RoundTelemetry t = federated_round(central, pop, cfg, 0, round_rng, 1);

  // Replay with the documented derivation tree: cohort, then per-client
  // train/noise streams keyed by client id, then the central noise stream.
  Rng cohort_rng = round_rng.derive("cohort");
  const std::vector<int> cohort = sample_cohort(pop, cfg.cohort_size, cohort_rng);

  const std::vector<double> base = replayed.param_vector();
  const std::size_t dim = base.size();
  std::vector<double> sum_signal(dim, 0.0), sum_noise(dim, 0.0);
  double snr_sum = 0.0;
  for (int idx : cohort) {
    const ClientDataset& client = pop[static_cast<std::size_t>(idx)];
    const Rng client_base =
        round_rng.derive("client", static_cast<std::uint64_t>(client.client_id));
    Rng train_rng = client_base.derive("train");
    Rng noise_rng = client_base.derive("noise");
    LocalUpdateResult lu = local_update(replayed, client, cfg, train_rng);
    REQUIRE(!lu.skipped);
    ClipResult clipped = clip_update(lu.delta, cfg.local_mechanism.clip_norm);
    NoiseResult nr = add_gaussian_noise(
        clipped.clipped,
        cfg.local_mechanism.noise_multiplier * cfg.local_mechanism.clip_norm,
        noise_rng);
    for (std::size_t i = 0; i < dim; ++i) {
      sum_signal[i] += clipped.clipped[i];
      sum_noise[i] += nr.noise[i];
    }
    snr_sum += snr(clipped.clipped, nr.noise);
  }
  const int k = static_cast<int>(cohort.size());
  std::vector<double> mean_signal(dim), mean_noise(dim), aggregate(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    mean_signal[i] = sum_signal[i] / k;
    mean_noise[i] = sum_noise[i] / k;
    aggregate[i] = mean_signal[i] + mean_noise[i];
  }
  Rng central_rng = round_rng.derive("central_noise");
  NoiseResult central_nr = add_gaussian_noise(
      aggregate,
      cfg.central_mechanism.noise_multiplier * cfg.central_mechanism.clip_norm / k,
      central_rng);
  std::vector<double> want(dim);
  for (std::size_t i = 0; i < dim; ++i) want[i] = base[i] + central_nr.noised[i];
  replayed.set_param_vector(want, /*clamp_bn_var=*/true);

  CHECK(central.param_vector() == replayed.param_vector());
  CHECK(t.update_norm == l2_norm(aggregate));
  CHECK(t.local_snr == snr_sum / k);
  CHECK(t.central_snr == snr(aggregate, central_nr.noise));
  std::vector<double> total_noise(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    total_noise[i] = mean_noise[i] + central_nr.noise[i];
  }
  CHECK(t.overall_snr == snr(mean_signal, total_noise));
}

TEST_CASE("parallel and serial rounds produce identical parameters") {
  const NetworkSpec spec = round_spec(4, 5, 3);
  const std::vector<ClientDataset> pop = toy_clients(8, 6, 4, 3, 13);

  RoundConfig cfg;
  cfg.cohort_size = 6;
  cfg.local_optimizer.learning_rate = 0.15;
  cfg.local_optimizer.batch_size = 3;
  cfg.local_mechanism.placement = Placement::kLocal;
  cfg.local_mechanism.clip_norm = 1.0;
  cfg.local_mechanism.noise_multiplier = 0.5;
  cfg.central_mechanism.placement = Placement::kCentral;
  cfg.central_mechanism.clip_norm = 1.0;
  cfg.central_mechanism.noise_multiplier = 0.7;

  Network serial(spec);
  serial.init_params(Rng(70));
  Network parallel = serial;

  const Rng round_rng = Rng(71).derive("round", 0);
  RoundTelemetry ts = federated_round(serial, pop, cfg, 0, round_rng, 1);
  RoundTelemetry tp = federated_round(parallel, pop, cfg, 0, round_rng, 4);

  CHECK(serial.param_vector() == parallel.param_vector());
  CHECK(ts.update_norm == tp.update_norm);
  CHECK(ts.local_snr == tp.local_snr);
  CHECK(ts.central_snr == tp.central_snr);
  CHECK(ts.overall_snr == tp.overall_snr);
}

TEST_CASE("round without any mechanism reports infinite snr") {
  const NetworkSpec spec = round_spec(3, 4, 2);
  const std::vector<ClientDataset> pop = toy_clients(4, 4, 3, 2, 3);
  RoundConfig cfg;
  cfg.cohort_size = 4;
  cfg.local_optimizer.learning_rate = 0.05;
  Network net(spec);
  net.init_params(Rng(80));
  const RoundTelemetry t = federated_round(net, pop, cfg, 2, Rng(81), 1);
  CHECK(t.round == 2);
  CHECK(std::isinf(t.local_snr));
  CHECK(std::isinf(t.central_snr));
  CHECK(std::isinf(t.overall_snr));
  CHECK(t.update_norm > 0.0);
  CHECK(t.note.empty());
}

TEST_CASE("round skips empty clients and averages over participants") {
  const NetworkSpec spec = round_spec(3, 4, 2);
  std::vector<ClientDataset> pop = toy_clients(4, 4, 3, 2, 5);
  pop[2].data.x = Matrix(0, 3);
  pop[2].data.labels.clear();

  RoundConfig cfg;
  cfg.cohort_size = 4;
  cfg.local_optimizer.learning_rate = 0.05;

  Network net(spec);
  net.init_params(Rng(90));
  const Network before = net;
  const RoundTelemetry t = federated_round(net, pop, cfg, 0, Rng(91), 1);
  CHECK(t.note.find("empty dataset") != std::string::npos);
  CHECK(net.param_vector() != before.param_vector());
}

TEST_CASE("a cohort of only empty clients leaves the model unchanged") {
  const NetworkSpec spec = round_spec(3, 4, 2);
  std::vector<ClientDataset> pop(2);
  pop[0].client_id = 0;
  pop[0].data.x = Matrix(0, 3);
  pop[1].client_id = 1;
  pop[1].data.x = Matrix(0, 3);

  RoundConfig cfg;
  cfg.cohort_size = 2;
  Network net(spec);
  net.init_params(Rng(95));
  const std::vector<double> before = net.param_vector();
  const RoundTelemetry t = federated_round(net, pop, cfg, 0, Rng(96), 1);
  CHECK(net.param_vector() == before);
  CHECK(t.note.find("no participating clients") != std::string::npos);
  CHECK(std::isinf(t.overall_snr));
}

TEST_CASE("federated training improves side-class accuracy without noise") {
  PopulationConfig pc;
  pc.num_speakers = 30;
  pc.utterances_per_speaker = 6;
  pc.supervector_dim = 24;
  pc.num_side_classes = 3;
  pc.latent_dim = 5;
  pc.seed = 7;
  const Population population = generate_population(pc);
  const std::vector<ClientDataset> clients = partition_to_clients(population);
  const LabeledData eval_set = side_class_dataset(population);

  NetworkSpec spec;
  spec.input_dim = pc.supervector_dim;
  spec.heads.push_back({"side", pc.num_side_classes});

  RoundConfig cfg;
  cfg.cohort_size = 20;
  cfg.local_optimizer.learning_rate = 0.3;
  cfg.local_optimizer.momentum = 0.0;
  cfg.local_optimizer.weight_decay = 0.0;

  const FederatedResult result = run_federated_training(
      clients, spec, 10, cfg, eval_set, Rng(123), 1);
  REQUIRE(result.telemetry.size() == 10);
  for (std::size_t r = 0; r < result.telemetry.size(); ++r) {
    CHECK(result.telemetry[r].round == static_cast<int>(r));
  }
  CHECK(result.telemetry.back().accuracy > 0.9);
  CHECK(result.telemetry.back().accuracy ==
        eval_accuracy(result.net, eval_set, "side"));

  CHECK_THROWS_AS(
      run_federated_training(clients, spec, 0, cfg, eval_set, Rng(1), 1),
      std::invalid_argument);
}

TEST_CASE("warm start continues from the given network") {
  // Batch-norm-free so that a frozen optimizer leaves no trace at all.
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.trunk.push_back({LayerKind::kDense, 3, 4});
  spec.trunk.push_back({LayerKind::kSigmoid, 4, 4});
  spec.heads.push_back({"side", 2});
  const std::vector<ClientDataset> pop = toy_clients(4, 4, 3, 2, 17);
  const LabeledData eval_set = flatten_clients(pop);

  Network start(spec);
  start.init_params(Rng(300));
  RoundConfig cfg;
  cfg.cohort_size = 4;
  cfg.local_optimizer.learning_rate = 0.0;
  cfg.local_optimizer.weight_decay = 0.0;

  const FederatedResult result = run_federated_training(
      pop, spec, 1, cfg, eval_set, Rng(301), 1, &start);
  // With a frozen local optimizer and no mechanisms the aggregate is zero,
  // so the warm-start parameters survive the round bit-exactly.
  CHECK(result.net.param_vector() == start.param_vector());
}

TEST_CASE("eval accuracy counts argmax hits") {
  NetworkSpec spec;
  spec.input_dim = 2;
  spec.heads.push_back({"side", 2});
  Network net(spec);
  net.init_params(Rng(1));
  net.block("head.side.weight").value.data = {1.0, 0.0, 0.0, 1.0};
  net.block("head.side.bias").value.data = {0.0, 0.0};

  LabeledData data;
  data.x = Matrix(4, 2);
  data.x.data = {2.0, 0.0,   // argmax 0
                 0.0, 3.0,   // argmax 1
                 5.0, 1.0,   // argmax 0
                 1.0, 2.0};  // argmax 1
  data.labels = {0, 1, 1, 1};
  CHECK(eval_accuracy(net, data, "side") == doctest::Approx(0.75));
  CHECK(eval_accuracy(net, LabeledData{}, "side") == 0.0);
}

TEST_CASE("round config validation rejects misplaced mechanisms") {
  RoundConfig cfg;
  cfg.validate();

  RoundConfig bad_local = cfg;
  bad_local.local_mechanism.placement = Placement::kCentral;
  CHECK_THROWS_AS(bad_local.validate(), std::invalid_argument);

  RoundConfig bad_central = cfg;
  bad_central.central_mechanism.placement = Placement::kLocal;
  bad_central.central_mechanism.clip_norm = 1.0;
  CHECK_THROWS_AS(bad_central.validate(), std::invalid_argument);

  RoundConfig no_head = cfg;
  no_head.loss_head.clear();
  CHECK_THROWS_AS(no_head.validate(), std::invalid_argument);

  RoundConfig bad_cohort = cfg;
  bad_cohort.cohort_size = 0;
  CHECK_THROWS_AS(bad_cohort.validate(), std::invalid_argument);
}

TEST_CASE("telemetry serializers encode infinities as inf") {
  std::vector<RoundTelemetry> series(2);
  series[0].round = 0;
  series[0].accuracy = 0.5;
  series[0].local_snr = std::numeric_limits<double>::infinity();
  series[0].central_snr = 1.25;
  series[0].overall_snr = 2.5;
  series[0].update_norm = 0.75;
  series[0].duration_ms = 10.0;
  series[1].round = 1;
  series[1].accuracy = 0.625;
  series[1].local_snr = 3.0;
  series[1].central_snr = std::numeric_limits<double>::infinity();
  series[1].overall_snr = std::numeric_limits<double>::infinity();
  series[1].update_norm = 1.5;
  series[1].note = "example";

  const std::string csv_path = "telemetry_test.csv";
  const std::string jsonl_path = "telemetry_test.jsonl";
  write_telemetry_csv(series, csv_path);
  write_telemetry_jsonl(series, jsonl_path);

  std::ifstream csv(csv_path);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "round,accuracy,local_snr,central_snr,update_norm,duration_ms");
  std::string line0;
  std::getline(csv, line0);
  CHECK(line0.find("inf") != std::string::npos);
  CHECK(line0.rfind("0,", 0) == 0);

  std::ifstream jl(jsonl_path);
  std::string jline;
  int rows = 0;
  while (std::getline(jl, jline)) {
    const nlohmann::json j = nlohmann::json::parse(jline);
    CHECK(j.at("round").get<int>() == rows);
    CHECK(j.contains("overall_snr"));
    CHECK(j.contains("note"));
    ++rows;
  }
  CHECK(rows == 2);

  std::remove(csv_path.c_str());
  std::remove(jsonl_path.c_str());
}
