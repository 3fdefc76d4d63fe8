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

#include "fedsv/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace fedsv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double logaddexp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace

void PrivacyParams::validate() const {
  if (!(epsilon > 0)) throw std::invalid_argument("PrivacyParams: epsilon must be > 0");
  if (!(delta > 0 && delta < 1)) {
    throw std::invalid_argument("PrivacyParams: delta must be in (0, 1)");
  }
}

void MechanismConfig::validate() const {
  if (placement == Placement::kNone) return;
  if (!(clip_norm > 0)) throw std::invalid_argument("MechanismConfig: clip_norm must be > 0");
  if (!(noise_multiplier >= 0)) {
    throw std::invalid_argument("MechanismConfig: noise_multiplier must be >= 0");
  }
  if (placement == Placement::kWeakLocal) {
    PrivacyParams{local_epsilon, local_delta}.validate();
  }
}

void AccountantConfig::validate() const {
  if (population_size < 1) {
    throw std::invalid_argument("AccountantConfig: population_size must be >= 1");
  }
  if (cohort_size < 1 || cohort_size > population_size) {
    throw std::invalid_argument(
        "AccountantConfig: cohort_size must be in [1, population_size]");
  }
  if (max_rounds < 0) throw std::invalid_argument("AccountantConfig: max_rounds < 0");
  if (!(target_delta > 0 && target_delta < 1)) {
    throw std::invalid_argument("AccountantConfig: target_delta must be in (0, 1)");
  }
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ClipResult clip_update(const std::vector<double>& update, double clip_norm) {
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_update: clip_norm must be > 0");
  for (double x : update) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument("clip_update: non-finite entry in update");
    }
  }
  ClipResult res;
  res.pre_norm = l2_norm(update);
  res.clipped = update;
  // Rescale until the recomputed norm is within the bound, so that a second
  // clip_update passes through bit-exactly (idempotence).
  double norm = res.pre_norm;
  while (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& x : res.clipped) x *= scale;
    norm = l2_norm(res.clipped);
  }
  return res;
}

double analytic_gaussian_delta(double sigma, double epsilon, double sensitivity) {
  if (!(sigma > 0)) throw std::invalid_argument("analytic_gaussian_delta: sigma must be > 0");
  const double a = sensitivity / (2.0 * sigma) - epsilon * sigma / sensitivity;
  const double b = -sensitivity / (2.0 * sigma) - epsilon * sigma / sensitivity;
  return std_normal_cdf(a) - std::exp(epsilon) * std_normal_cdf(b);
}

double gaussian_sigma(const PrivacyParams& pp, double sensitivity) {
  pp.validate();
  if (!(sensitivity > 0)) {
    throw std::invalid_argument("gaussian_sigma: sensitivity must be > 0");
  }
  // Work at unit sensitivity; sigma is linear in the sensitivity, so scaling
  // the result afterwards keeps that linearity exact.
  auto delta_at = [&](double s) { return analytic_gaussian_delta(s, pp.epsilon, 1.0); };
  double hi = 1.0;
  int guard = 0;
  while (delta_at(hi) > pp.delta) {
    hi *= 2.0;
    if (++guard > 200) throw std::runtime_error("gaussian_sigma: bracket exhausted");
  }
  double lo = 1e-12;
  while (hi - lo > 1e-12 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (delta_at(mid) <= pp.delta) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi * sensitivity;
}

NoiseResult add_gaussian_noise(const std::vector<double>& v, double sigma, Rng& rng) {
  if (!(sigma >= 0)) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
  NoiseResult res;
  if (sigma == 0.0) {
    res.noised = v;
    res.noise.assign(v.size(), 0.0);
    return res;
  }
  res.noised.resize(v.size());
  res.noise.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    res.noise[i] = sigma * rng.normal();
    res.noised[i] = v[i] + res.noise[i];
  }
  return res;
}

namespace {

// log of the mixture likelihood ratio mu(x)/mu0(x) = (1-q) + q e^{(2x-1)/(2z^2)}
double log_mix_ratio(double x, double q, double z2) {
  const double t = (2.0 * x - 1.0) / (2.0 * z2);
  if (q >= 1.0) return t;
  return logaddexp(std::log1p(-q), std::log(q) + t);
}

// log E_{x~N(0,z^2)}[ exp(k * log_mix_ratio(x)) ] via composite Simpson in
// log space. k is negative for E1 and positive for E2.
double log_mixture_moment(double k, double q, double z) {
  const double z2 = z * z;
  // The positive-k integrand concentrates near x = k (the exponential tilt
  // shifts the Gaussian mean); the negative-k integrand stays near 0.
  const double center_hi = k > 0 ? k : 0.0;
  const double lo = -(12.0 * z + 2.0);
  const double hi = center_hi + 12.0 * z + 2.0;
  const double step_goal = std::min(z, 1.0) / 50.0;
  long long n = static_cast<long long>(std::ceil((hi - lo) / step_goal));
  n = std::min<long long>(std::max<long long>(n, 64), 400000);
  if (n % 2 == 1) ++n;
  const double h = (hi - lo) / static_cast<double>(n);

  const double log_norm = -0.5 * std::log(2.0 * M_PI * z2);
  auto log_f = [&](double x) {
    return log_norm - x * x / (2.0 * z2) + k * log_mix_ratio(x, q, z2);
  };

  // Simpson weights 1,4,2,...,4,1 scaled by h/3; accumulate in log space.
  double m = -kInf;
  std::vector<double> logs(static_cast<std::size_t>(n) + 1);
  for (long long i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    logs[static_cast<std::size_t>(i)] = log_f(lo + h * static_cast<double>(i)) + std::log(w);
    m = std::max(m, logs[static_cast<std::size_t>(i)]);
  }
  if (m == -kInf) return -kInf;
  double sum = 0.0;
  for (double lg : logs) sum += std::exp(lg - m);
  return m + std::log(sum) + std::log(h / 3.0);
}

}  // namespace

double log_moment(double noise_multiplier, double q, int lambda) {
  if (!(noise_multiplier > 0)) {
    throw std::invalid_argument("log_moment: noise_multiplier must be > 0");
  }
  if (!(q >= 0 && q <= 1)) throw std::invalid_argument("log_moment: q must be in [0, 1]");
  if (lambda < 1) throw std::invalid_argument("log_moment: lambda must be >= 1");
  if (q == 0.0) return 0.0;
  const double z = noise_multiplier;
  const double log_e1 = log_mixture_moment(-static_cast<double>(lambda), q, z);
  const double log_e2 = log_mixture_moment(static_cast<double>(lambda) + 1.0, q, z);
  return std::max(log_e1, log_e2);
}

double accountant_epsilon(double noise_multiplier, double q, int rounds,
                          double delta, int lambda_max) {
  if (rounds < 0) throw std::invalid_argument("accountant_epsilon: rounds must be >= 0");
  if (!(delta > 0 && delta < 1)) {
    throw std::invalid_argument("accountant_epsilon: delta must be in (0, 1)");
  }
  if (lambda_max < 1) throw std::invalid_argument("accountant_epsilon: lambda_max < 1");
  if (rounds == 0) return 0.0;
  const double log_inv_delta = std::log(1.0 / delta);
  double best = kInf;
  for (int lambda = 1; lambda <= lambda_max; ++lambda) {
    const double alpha = log_moment(noise_multiplier, q, lambda);
    if (!std::isfinite(alpha)) {
      throw std::runtime_error("accountant_epsilon: non-finite log moment at lambda=" +
                               std::to_string(lambda));
    }
    const double eps = (static_cast<double>(rounds) * alpha + log_inv_delta) /
                       static_cast<double>(lambda);
    best = std::min(best, eps);
  }
  return best;
}

double accountant_sigma(const PrivacyParams& target, double q, int rounds) {
  target.validate();
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("accountant_sigma: q must be in (0, 1]");
  if (rounds < 1) throw std::invalid_argument("accountant_sigma: rounds must be >= 1");
  // The search re-runs the accountant dozens of times; identical targets recur
  // across seeds of one study, so the result is memoized.
  using Key = std::tuple<double, double, double, int>;
  static std::mutex memo_mutex;
  static std::map<Key, double> memo;
  const Key key{target.epsilon, target.delta, q, rounds};
  {
    std::lock_guard<std::mutex> lock(memo_mutex);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
  }
  auto eps_at = [&](double z) {
    return accountant_epsilon(z, q, rounds, target.delta);
  };
  double lo = 1e-3;
  int guard = 0;
  while (eps_at(lo) <= target.epsilon) {
    lo /= 4.0;
    if (++guard > 30) return lo;  // target met by negligible noise
  }
  double hi = std::max(lo * 2.0, 2e-3);
  guard = 0;
  while (eps_at(hi) > target.epsilon) {
    hi *= 2.0;
    if (++guard > 40) throw std::runtime_error("accountant_sigma: bracket exhausted");
  }
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= target.epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  {
    std::lock_guard<std::mutex> lock(memo_mutex);
    memo[key] = hi;
  }
  return hi;
}

WeakLocalResult weak_local_randomizer(const std::vector<double>& update,
                                      double local_epsilon, double clip_norm,
                                      Rng& rng, double local_delta) {
  PrivacyParams pp{local_epsilon, local_delta};
  ClipResult clipped = clip_update(update, clip_norm);
  const double sigma = gaussian_sigma(pp, clip_norm);
  NoiseResult noised = add_gaussian_noise(clipped.clipped, sigma, rng);
  WeakLocalResult res;
  res.noised = std::move(noised.noised);
  res.noise = std::move(noised.noise);
  res.sigma = sigma;
  res.pre_clip_norm = clipped.pre_norm;
  return res;
}

double snr(const std::vector<double>& update, const std::vector<double>& noise) {
  if (update.size() != noise.size()) {
    throw std::invalid_argument("snr: dimension mismatch");
  }
  const double n = l2_norm(noise);
  if (n == 0.0) return kInf;
  return l2_norm(update) / n;
}

}  // namespace fedsv
