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

#include "fedsv/fed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace fedsv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json json_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

void RoundConfig::validate() const {
  if (cohort_size < 1) throw std::invalid_argument("RoundConfig: cohort_size must be >= 1");
  if (local_epochs < 0) throw std::invalid_argument("RoundConfig: local_epochs must be >= 0");
  local_optimizer.validate();
  local_mechanism.validate();
  central_mechanism.validate();
  if (local_mechanism.placement == Placement::kCentral) {
    throw std::invalid_argument("RoundConfig: local mechanism cannot be Central");
  }
  if (central_mechanism.placement != Placement::kNone &&
      central_mechanism.placement != Placement::kCentral) {
    throw std::invalid_argument("RoundConfig: central mechanism must be None or Central");
  }
  if (loss_head.empty()) throw std::invalid_argument("RoundConfig: loss_head empty");
}

std::vector<int> sample_cohort(const std::vector<ClientDataset>& population,
                               int cohort_size, Rng& rng) {
  const int n = static_cast<int>(population.size());
  if (cohort_size < 1 || cohort_size > n) {
    throw std::invalid_argument("sample_cohort: cohort_size " +
                                std::to_string(cohort_size) +
                                " out of range for population " + std::to_string(n));
  }
  // Partial Fisher-Yates over index slots, then ascending order so the
  // aggregation order is independent of the draw order.
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < cohort_size; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        rng.uniform_index(static_cast<std::uint64_t>(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(cohort_size));
  std::sort(idx.begin(), idx.end());
  return idx;
}

LocalUpdateResult local_update(const Network& central, const ClientDataset& client,
                               const RoundConfig& cfg, Rng& rng) {
  LocalUpdateResult res;
  if (client.data.x.rows == 0) {
    res.skipped = true;
    res.note = "client " + std::to_string(client.client_id) + ": empty dataset";
    return res;
  }
  const std::vector<double> central_params = central.param_vector();
  Network net = central;
  SgdState state;
  const int n = client.data.x.rows;
  const int batch_size = std::min(cfg.local_optimizer.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (int start = 0; start < n; start += batch_size) {
      const int count = std::min(batch_size, n - start);
      Matrix batch(count, client.data.x.cols);
      std::vector<int> labels(static_cast<std::size_t>(count));
      for (int r = 0; r < count; ++r) {
        const int src = order[static_cast<std::size_t>(start + r)];
        std::copy(client.data.x.row_ptr(src),
                  client.data.x.row_ptr(src) + client.data.x.cols,
                  batch.row_ptr(r));
        labels[static_cast<std::size_t>(r)] =
            client.data.labels[static_cast<std::size_t>(src)];
      }
      ForwardCache cache;
      ForwardResult fwd = net.forward(batch, Mode::kTrain, &cache);
      LossResult loss = cross_entropy_loss(fwd.head_logits.at(cfg.loss_head), labels);
      Gradients grads = net.backward(cache, {{cfg.loss_head, loss.dlogits}});
      sgd_step(net, grads, cfg.local_optimizer, state);
      net.update_running_stats(cache);
    }
  }

  const std::vector<double> trained = net.param_vector();
  res.delta.resize(trained.size());
  for (std::size_t i = 0; i < trained.size(); ++i) {
    res.delta[i] = trained[i] - central_params[i];
  }
  return res;
}

namespace {

struct ClientRoundResult {
  std::vector<double> signal;  // delta after clipping, before noise
  std::vector<double> noise;   // local noise draw (empty when none)
  double snr_value = kInf;
  bool skipped = false;
  std::string note;
};

ClientRoundResult process_client(const Network& central,
                                 const ClientDataset& client,
                                 const RoundConfig& cfg, const Rng& client_base) {
  ClientRoundResult out;
  Rng train_rng = client_base.derive("train");
  Rng noise_rng = client_base.derive("noise");
  LocalUpdateResult lu = local_update(central, client, cfg, train_rng);
  if (lu.skipped) {
    out.skipped = true;
    out.note = lu.note;
    return out;
  }
  const MechanismConfig& mech = cfg.local_mechanism;
  switch (mech.placement) {
    case Placement::kNone:
      out.signal = std::move(lu.delta);
      break;
    case Placement::kLocal: {
      ClipResult clipped = clip_update(lu.delta, mech.clip_norm);
      out.signal = std::move(clipped.clipped);
      const double sigma = mech.noise_multiplier * mech.clip_norm;
      if (sigma > 0) {
        NoiseResult nr = add_gaussian_noise(out.signal, sigma, noise_rng);
        out.noise = std::move(nr.noise);
      }
      break;
    }
    case Placement::kWeakLocal: {
      ClipResult clipped = clip_update(lu.delta, mech.clip_norm);
      out.signal = std::move(clipped.clipped);
      const double sigma = gaussian_sigma(
          PrivacyParams{mech.local_epsilon, mech.local_delta}, mech.clip_norm);
      NoiseResult nr = add_gaussian_noise(out.signal, sigma, noise_rng);
      out.noise = std::move(nr.noise);
      break;
    }
    case Placement::kCentral:
      break;  // rejected by validate()
  }
  out.snr_value = out.noise.empty() ? kInf : snr(out.signal, out.noise);
  return out;
}

}  // namespace

RoundTelemetry federated_round(Network& central,
                               const std::vector<ClientDataset>& population,
                               const RoundConfig& cfg, int round_index,
                               const Rng& round_rng, int threads) {
  cfg.validate();
  const auto start_time = std::chrono::steady_clock::now();
  RoundTelemetry t;
  t.round = round_index;

  Rng cohort_rng = round_rng.derive("cohort");
  const std::vector<int> cohort =
      sample_cohort(population, cfg.cohort_size, cohort_rng);

  std::vector<ClientRoundResult> results(cohort.size());
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const ClientDataset& client = population[static_cast<std::size_t>(cohort[k])];
      const Rng client_base = round_rng.derive(
          "client", static_cast<std::uint64_t>(client.client_id));
      results[k] = process_client(central, client, cfg, client_base);
    }
  };
  if (threads <= 1 || cohort.size() < 2) {
    worker(0, cohort.size());
  } else {
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(threads), cohort.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (cohort.size() + n_threads - 1) / n_threads;
    for (std::size_t i = 0; i < n_threads; ++i) {
      const std::size_t begin = i * chunk;
      const std::size_t end = std::min(begin + chunk, cohort.size());
      if (begin >= end) break;
      pool.emplace_back(worker, begin, end);
    }
    for (std::thread& th : pool) th.join();
  }

  // Aggregation walks the cohort in ascending client order (results are
  // already sorted that way) so parallel execution cannot reorder sums.
  const std::vector<double> central_params = central.param_vector();
  const std::size_t dim = central_params.size();
  std::vector<double> sum_signal(dim, 0.0), sum_local_noise(dim, 0.0);
  int participating = 0;
  double snr_sum = 0.0;
  bool any_local_noise = false;
  for (const ClientRoundResult& r : results) {
    if (r.skipped) {
      if (!t.note.empty()) t.note += "; ";
      t.note += r.note;
      continue;
    }
    ++participating;
    for (std::size_t i = 0; i < dim; ++i) sum_signal[i] += r.signal[i];
    if (!r.noise.empty()) {
      any_local_noise = true;
      for (std::size_t i = 0; i < dim; ++i) sum_local_noise[i] += r.noise[i];
    }
    snr_sum += r.snr_value;
  }

  if (participating == 0) {
    t.local_snr = kInf;
    t.central_snr = kInf;
    t.overall_snr = kInf;
    if (!t.note.empty()) t.note += "; ";
    t.note += "no participating clients";
    t.duration_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start_time)
                        .count();
    return t;
  }
  t.local_snr = snr_sum / participating;

  std::vector<double> mean_signal(dim), mean_local_noise(dim), aggregate(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    mean_signal[i] = sum_signal[i] / participating;
    mean_local_noise[i] = sum_local_noise[i] / participating;
    aggregate[i] = mean_signal[i] + mean_local_noise[i];
  }
  t.update_norm = l2_norm(aggregate);

  std::vector<double> central_noise(dim, 0.0);
  std::vector<double> update = aggregate;
  if (cfg.central_mechanism.placement == Placement::kCentral) {
    // Sensitivity of the cohort mean to one client is clip_norm / cohort.
    const double sigma = cfg.central_mechanism.noise_multiplier *
                         cfg.central_mechanism.clip_norm / participating;
    Rng central_rng = round_rng.derive("central_noise");
    NoiseResult nr = add_gaussian_noise(aggregate, sigma, central_rng);
    update = std::move(nr.noised);
    central_noise = std::move(nr.noise);
    t.central_snr = snr(aggregate, central_noise);
  } else {
    t.central_snr = kInf;
  }

  if (any_local_noise ||
      cfg.central_mechanism.placement == Placement::kCentral) {
    std::vector<double> total_noise(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      total_noise[i] = mean_local_noise[i] + central_noise[i];
    }
    t.overall_snr = snr(mean_signal, total_noise);
  } else {
    t.overall_snr = kInf;
  }

  std::vector<double> new_params(dim);
  for (std::size_t i = 0; i < dim; ++i) new_params[i] = central_params[i] + update[i];
  central.set_param_vector(new_params, /*clamp_bn_var=*/true);

  t.duration_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start_time)
                      .count();
  return t;
}

double eval_accuracy(const Network& net, const LabeledData& data,
                     const std::string& head) {
  if (data.x.rows == 0) return 0.0;
  const int chunk = 2048;
  int correct = 0;
  for (int start = 0; start < data.x.rows; start += chunk) {
    const int count = std::min(chunk, data.x.rows - start);
    Matrix batch(count, data.x.cols);
    std::copy(data.x.row_ptr(start), data.x.row_ptr(start) + static_cast<std::size_t>(count) * data.x.cols,
              batch.row_ptr(0));
    ForwardResult fwd = net.forward(batch, Mode::kInfer);
    const Matrix& logits = fwd.head_logits.at(head);
    for (int r = 0; r < count; ++r) {
      const double* row = logits.row_ptr(r);
      int arg = 0;
      for (int c = 1; c < logits.cols; ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      if (arg == data.labels[static_cast<std::size_t>(start + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / data.x.rows;
}

FederatedResult run_federated_training(const std::vector<ClientDataset>& population,
                                       const NetworkSpec& spec, int rounds,
                                       const RoundConfig& cfg,
                                       const LabeledData& eval_set, const Rng& rng,
                                       int threads, const Network* warm_start) {
  if (rounds < 1) throw std::invalid_argument("run_federated_training: rounds must be >= 1");
  cfg.validate();
  FederatedResult result;
  if (warm_start) {
    result.net = *warm_start;
  } else {
    result.net = Network(spec);
    result.net.init_params(rng.derive("init"));
  }
  for (int r = 0; r < rounds; ++r) {
    const Rng round_rng = rng.derive("round", static_cast<std::uint64_t>(r));
    RoundTelemetry t =
        federated_round(result.net, population, cfg, r, round_rng, threads);
    t.accuracy = eval_accuracy(result.net, eval_set, cfg.loss_head);
    result.telemetry.push_back(std::move(t));
  }
  return result;
}

void write_telemetry_csv(const std::vector<RoundTelemetry>& series,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_telemetry_csv: cannot open " + path);
  out << "round,accuracy,local_snr,central_snr,update_norm,duration_ms\n";
  for (const RoundTelemetry& t : series) {
    out << t.round << ',' << fmt_double(t.accuracy) << ',' << fmt_double(t.local_snr)
        << ',' << fmt_double(t.central_snr) << ',' << fmt_double(t.update_norm)
        << ',' << fmt_double(t.duration_ms) << '\n';
  }
  if (!out) throw std::runtime_error("write_telemetry_csv: write failed");
}

void write_telemetry_jsonl(const std::vector<RoundTelemetry>& series,
                           const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_telemetry_jsonl: cannot open " + path);
  for (const RoundTelemetry& t : series) {
    nlohmann::json j;
    j["round"] = t.round;
    j["accuracy"] = json_double(t.accuracy);
    j["local_snr"] = json_double(t.local_snr);
    j["central_snr"] = json_double(t.central_snr);
    j["overall_snr"] = json_double(t.overall_snr);
    j["update_norm"] = json_double(t.update_norm);
    j["duration_ms"] = json_double(t.duration_ms);
    j["note"] = t.note;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_telemetry_jsonl: write failed");
}

}  // namespace fedsv
