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

#ifndef FEDSV_DP_HPP_
#define FEDSV_DP_HPP_

#include <string>
#include <vector>

#include "fedsv/rng.hpp"

namespace fedsv {

struct PrivacyParams {
  double epsilon = 0.0;
  double delta = 0.0;

  // epsilon > 0, 0 < delta < 1; throws std::invalid_argument otherwise.
  void validate() const;
};

enum class Placement { kNone, kLocal, kCentral, kWeakLocal };

struct MechanismConfig {
  Placement placement = Placement::kNone;
  double clip_norm = 1.0;        // L2 sensitivity bound C
  double noise_multiplier = 0.0; // sigma / C
  // Weak-local placement calibrates its own sigma from these:
  double local_epsilon = 25.7;
  double local_delta = 1e-5;

  void validate() const;
};

struct AccountantConfig {
  long long population_size = 100000000;  // assumed device population
  int cohort_size = 300;
  int max_rounds = 60;
  double target_delta = 1e-5;

  double sampling_rate() const {
    return static_cast<double>(cohort_size) / static_cast<double>(population_size);
  }
  void validate() const;
};

double l2_norm(const std::vector<double>& v);

struct ClipResult {
  std::vector<double> clipped;
  double pre_norm = 0.0;
};

// L2-clips `update` to `clip_norm`. If the norm is already within the bound
// the input passes through bit-exactly, which makes clipping idempotent.
// Throws std::invalid_argument on non-finite entries or clip_norm <= 0.
ClipResult clip_update(const std::vector<double>& update, double clip_norm);

// delta(sigma) of the Gaussian mechanism with sensitivity `sensitivity`:
//   Phi(D/(2s) - eps*s/D) - e^eps * Phi(-D/(2s) - eps*s/D)
// Exposed so callers can re-evaluate the defining inequality independently.
double analytic_gaussian_delta(double sigma, double epsilon, double sensitivity);

// Smallest sigma (bisection, 1e-9 relative) with
// analytic_gaussian_delta(sigma, pp.epsilon, sensitivity) <= pp.delta.
// Computed at unit sensitivity and scaled, so sigma is exactly linear in
// the sensitivity argument.
double gaussian_sigma(const PrivacyParams& pp, double sensitivity);

struct NoiseResult {
  std::vector<double> noised;
  std::vector<double> noise;  // realized draw, for SNR telemetry only
};

// v + iid Normal(0, sigma^2); sigma = 0 passes v through bit-exactly.
NoiseResult add_gaussian_noise(const std::vector<double>& v, double sigma, Rng& rng);

// Log moment alpha(lambda) of the subsampled Gaussian mechanism with
// sampling rate q and noise multiplier z, computed by numerical
// integration in log space over the Gaussian mixture:
//   alpha(lambda) = log max(E1, E2)
//   E1 = E_{x~N(0,z^2)}[ (mu0/mu)^lambda (x) ]
//   E2 = E_{x~N(0,z^2)}[ (mu/mu0)^{lambda+1} (x) ]
// where mu0 = N(0,z^2) and mu = (1-q) N(0,z^2) + q N(1,z^2).
double log_moment(double noise_multiplier, double q, int lambda);

// Moments-accountant epsilon after `rounds` compositions:
//   min over integer lambda in [1, lambda_max] of
//   (rounds * alpha(lambda) + ln(1/delta)) / lambda.
// Throws std::runtime_error naming lambda if a moment is non-finite.
double accountant_epsilon(double noise_multiplier, double q, int rounds,
                          double delta, int lambda_max = 64);

// Smallest noise multiplier (bisection, 1e-6 relative) with
// accountant_epsilon(...) <= target.epsilon. Throws std::runtime_error if
// the bracket search exhausts.
double accountant_sigma(const PrivacyParams& target, double q, int rounds);

struct WeakLocalResult {
  std::vector<double> noised;
  std::vector<double> noise;
  double sigma = 0.0;
  double pre_clip_norm = 0.0;
};

// Clip to clip_norm, then apply the Gaussian mechanism calibrated by
// gaussian_sigma((local_epsilon, local_delta), clip_norm).
WeakLocalResult weak_local_randomizer(const std::vector<double>& update,
                                      double local_epsilon, double clip_norm,
                                      Rng& rng, double local_delta = 1e-5);

// ||update|| / ||noise||; +infinity when the noise norm is zero.
double snr(const std::vector<double>& update, const std::vector<double>& noise);

}  // namespace fedsv

#endif  // FEDSV_DP_HPP_
