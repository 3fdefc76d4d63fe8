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

#include "fedsv/synth.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fedsv {

void PopulationConfig::validate() const {
  if (num_speakers < 1) throw std::invalid_argument("PopulationConfig: num_speakers < 1");
  if (utterances_per_speaker < 1) {
    throw std::invalid_argument("PopulationConfig: utterances_per_speaker < 1");
  }
  if (supervector_dim < 1) throw std::invalid_argument("PopulationConfig: supervector_dim < 1");
  if (num_side_classes < 2) {
    throw std::invalid_argument("PopulationConfig: num_side_classes must be >= 2");
  }
  if (latent_dim < 1) throw std::invalid_argument("PopulationConfig: latent_dim < 1");
  if (!(within_speaker_noise >= 0)) {
    throw std::invalid_argument("PopulationConfig: within_speaker_noise must be >= 0");
  }
  if (!(class_separation >= 0)) {
    throw std::invalid_argument("PopulationConfig: class_separation must be >= 0");
  }
}

Population generate_population(const PopulationConfig& cfg) {
  cfg.validate();
  const Rng base(cfg.seed);

  // Class centroids: random directions in latent space, scaled so that
  // class_separation controls the between-class distance.
  Matrix centroids(cfg.num_side_classes, cfg.latent_dim);
  for (int c = 0; c < cfg.num_side_classes; ++c) {
    Rng rng = base.derive("centroid", static_cast<std::uint64_t>(c));
    double norm = 0.0;
    for (int d = 0; d < cfg.latent_dim; ++d) {
      centroids(c, d) = rng.normal();
      norm += centroids(c, d) * centroids(c, d);
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (int d = 0; d < cfg.latent_dim; ++d) {
      centroids(c, d) *= cfg.class_separation / norm;
    }
  }

  // Fixed affine map latent -> supervector. Entry scale 1/sqrt(dim) keeps
  // the supervector norm comparable to the latent norm.
  Matrix proj(cfg.supervector_dim, cfg.latent_dim);
  {
    Rng rng = base.derive("projection");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.supervector_dim));
    for (double& v : proj.data) v = scale * rng.normal();
  }
  std::vector<double> offset(static_cast<std::size_t>(cfg.supervector_dim));
  {
    Rng rng = base.derive("offset");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.supervector_dim));
    for (double& v : offset) v = scale * rng.normal();
  }

  Population population(static_cast<std::size_t>(cfg.num_speakers));
  for (int s = 0; s < cfg.num_speakers; ++s) {
    SpeakerRecord& rec = population[static_cast<std::size_t>(s)];
    rec.speaker_id = s;
    rec.side_class = s % cfg.num_side_classes;

    Rng latent_rng = base.derive("speaker", static_cast<std::uint64_t>(s));
    std::vector<double> latent(static_cast<std::size_t>(cfg.latent_dim));
    for (int d = 0; d < cfg.latent_dim; ++d) {
      latent[static_cast<std::size_t>(d)] = centroids(rec.side_class, d) + latent_rng.normal();
    }

    std::vector<double> base_sv(static_cast<std::size_t>(cfg.supervector_dim));
    for (int i = 0; i < cfg.supervector_dim; ++i) {
      double acc = offset[static_cast<std::size_t>(i)];
      for (int d = 0; d < cfg.latent_dim; ++d) {
        acc += proj(i, d) * latent[static_cast<std::size_t>(d)];
      }
      base_sv[static_cast<std::size_t>(i)] = acc;
    }

    rec.utterances = Matrix(cfg.utterances_per_speaker, cfg.supervector_dim);
    Rng utt_rng = base.derive("utterances", static_cast<std::uint64_t>(s));
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      double* row = rec.utterances.row_ptr(u);
      if (cfg.within_speaker_noise == 0.0) {
        // keep a speaker's utterances bit-identical in the noiseless case
        for (int i = 0; i < cfg.supervector_dim; ++i) {
          row[i] = base_sv[static_cast<std::size_t>(i)];
        }
      } else {
        for (int i = 0; i < cfg.supervector_dim; ++i) {
          row[i] = base_sv[static_cast<std::size_t>(i)] +
                   cfg.within_speaker_noise * utt_rng.normal();
        }
      }
    }
  }
  return population;
}

std::vector<ClientDataset> partition_to_clients(const Population& population) {
  if (population.empty()) {
    throw std::invalid_argument("partition_to_clients: empty population");
  }
  std::vector<ClientDataset> clients;
  clients.reserve(population.size());
  for (const SpeakerRecord& rec : population) {
    ClientDataset c;
    c.client_id = rec.speaker_id;
    c.data.x = rec.utterances;
    c.data.labels.assign(static_cast<std::size_t>(rec.utterances.rows), rec.side_class);
    clients.push_back(std::move(c));
  }
  return clients;
}

TrialSet build_trials(const Population& population, int enroll_n,
                      double impostor_ratio, Rng& rng) {
  if (population.empty()) throw std::invalid_argument("build_trials: empty population");
  if (enroll_n < 1) throw std::invalid_argument("build_trials: enroll_n must be >= 1");
  if (!(impostor_ratio >= 0)) {
    throw std::invalid_argument("build_trials: impostor_ratio must be >= 0");
  }
  for (const SpeakerRecord& rec : population) {
    if (rec.utterances.rows <= enroll_n) {
      throw std::invalid_argument("build_trials: speaker " +
                                  std::to_string(rec.speaker_id) + " has " +
                                  std::to_string(rec.utterances.rows) +
                                  " utterances, need more than enroll_n=" +
                                  std::to_string(enroll_n));
    }
  }

  TrialSet ts;
  ts.population = population;
  ts.profiles.reserve(population.size());
  for (std::size_t p = 0; p < population.size(); ++p) {
    const SpeakerRecord& rec = population[p];
    SpeakerProfileData prof;
    prof.speaker_id = rec.speaker_id;
    prof.enrollment = Matrix(enroll_n, rec.utterances.cols);
    for (int u = 0; u < enroll_n; ++u) {
      for (int i = 0; i < rec.utterances.cols; ++i) {
        prof.enrollment(u, i) = rec.utterances(u, i);
      }
    }
    ts.profiles.push_back(std::move(prof));

    for (int u = enroll_n; u < rec.utterances.rows; ++u) {
      ts.trials.push_back(Trial{rec.speaker_id, rec.speaker_id, u, true});
    }
  }

  const std::size_t n_targets = ts.trials.size();
  const std::size_t n_impostors =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_targets) * impostor_ratio));
  for (std::size_t k = 0; k < n_impostors; ++k) {
    const std::size_t p = rng.uniform_index(population.size());
    std::size_t other = rng.uniform_index(population.size() - 1);
    if (other >= p) ++other;
    const SpeakerRecord& rec = population[other];
    const int u = enroll_n + static_cast<int>(rng.uniform_index(
                                 static_cast<std::uint64_t>(rec.utterances.rows - enroll_n)));
    ts.trials.push_back(
        Trial{population[p].speaker_id, rec.speaker_id, u, false});
  }
  return ts;
}

Population slice_utterances(const Population& population,
                            const std::vector<std::pair<int, int>>& ranges) {
  Population out;
  out.reserve(population.size());
  for (const SpeakerRecord& rec : population) {
    SpeakerRecord sliced;
    sliced.speaker_id = rec.speaker_id;
    sliced.side_class = rec.side_class;
    int total = 0;
    for (const auto& [lo, hi] : ranges) {
      if (lo < 0 || hi > rec.utterances.rows || lo > hi) {
        throw std::invalid_argument("slice_utterances: range out of bounds");
      }
      total += hi - lo;
    }
    sliced.utterances = Matrix(total, rec.utterances.cols);
    int r = 0;
    for (const auto& [lo, hi] : ranges) {
      for (int u = lo; u < hi; ++u, ++r) {
        for (int i = 0; i < rec.utterances.cols; ++i) {
          sliced.utterances(r, i) = rec.utterances(u, i);
        }
      }
    }
    out.push_back(std::move(sliced));
  }
  return out;
}

namespace {

LabeledData flatten(const Population& population, bool speaker_labels) {
  LabeledData data;
  int total = 0, dim = 0;
  for (const SpeakerRecord& rec : population) {
    total += rec.utterances.rows;
    dim = rec.utterances.cols;
  }
  data.x = Matrix(total, dim);
  data.labels.reserve(static_cast<std::size_t>(total));
  int r = 0;
  for (std::size_t s = 0; s < population.size(); ++s) {
    const SpeakerRecord& rec = population[s];
    for (int u = 0; u < rec.utterances.rows; ++u, ++r) {
      for (int i = 0; i < dim; ++i) data.x(r, i) = rec.utterances(u, i);
      data.labels.push_back(speaker_labels ? static_cast<int>(s) : rec.side_class);
    }
  }
  return data;
}

}  // namespace

LabeledData side_class_dataset(const Population& population) {
  return flatten(population, false);
}

LabeledData speaker_id_dataset(const Population& population) {
  return flatten(population, true);
}

void export_population_json(const Population& population, const std::string& path) {
  nlohmann::json j;
  j["speakers"] = nlohmann::json::array();
  for (const SpeakerRecord& rec : population) {
    nlohmann::json spk;
    spk["id"] = rec.speaker_id;
    spk["side_class"] = rec.side_class;
    nlohmann::json utts = nlohmann::json::array();
    for (int u = 0; u < rec.utterances.rows; ++u) {
      nlohmann::json row = nlohmann::json::array();
      for (int i = 0; i < rec.utterances.cols; ++i) row.push_back(rec.utterances(u, i));
      utts.push_back(std::move(row));
    }
    spk["utterances"] = std::move(utts);
    j["speakers"].push_back(std::move(spk));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_population_json: cannot open " + path);
  out << j.dump();
  if (!out) throw std::runtime_error("export_population_json: write failed");
}

Population import_population_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_population_json: cannot open " + path);
  nlohmann::json j;
  in >> j;
  Population population;
  for (const auto& spk : j.at("speakers")) {
    SpeakerRecord rec;
    rec.speaker_id = spk.at("id").get<int>();
    rec.side_class = spk.at("side_class").get<int>();
    const auto& utts = spk.at("utterances");
    const int rows = static_cast<int>(utts.size());
    const int cols = rows > 0 ? static_cast<int>(utts.at(0).size()) : 0;
    rec.utterances = Matrix(rows, cols);
    for (int u = 0; u < rows; ++u) {
      const auto& row = utts.at(static_cast<std::size_t>(u));
      if (static_cast<int>(row.size()) != cols) {
        throw std::runtime_error("import_population_json: ragged utterance rows");
      }
      for (int i = 0; i < cols; ++i) {
        rec.utterances(u, i) = row.at(static_cast<std::size_t>(i)).get<double>();
      }
    }
    population.push_back(std::move(rec));
  }
  return population;
}

}  // namespace fedsv
