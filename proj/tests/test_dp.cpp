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
#include <limits>
#include <vector>

#include "fedsv/dp.hpp"
#include "fedsv/rng.hpp"

using namespace fedsv;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Independent evaluation of the Gaussian-mechanism delta, written directly
// from the defining expression rather than calling into the library helper.
double delta_oracle(double sigma, double eps, double sens) {
  return phi(sens / (2 * sigma) - eps * sigma / sens) -
         std::exp(eps) * phi(-sens / (2 * sigma) - eps * sigma / sens);
}

// Plain trapezoid quadrature of E_{x~N(0,z^2)}[ ratio(x)^k ] without any
// log-space tricks, usable when the integrand stays in double range.
double mixture_moment_trapezoid(double k, double q, double z) {
  const double z2 = z * z;
  const double lo = -12.0 * z - 4.0;
  const double hi = (k > 0 ? k : 0.0) + 12.0 * z + 4.0;
  const int n = 400000;
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    const double ratio = (1.0 - q) + q * std::exp((2.0 * x - 1.0) / (2.0 * z2));
    return std::exp(-x * x / (2.0 * z2)) / std::sqrt(2.0 * M_PI * z2) *
           std::pow(ratio, k);
  };
  double s = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) s += f(lo + h * i);
  return s * h;
}

}  // namespace

TEST_CASE("l2 norm matches a manual accumulation") {
  CHECK(l2_norm({3.0, 4.0}) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(l2_norm({}) == 0.0);
  CHECK(l2_norm({-2.0}) == 2.0);
}

TEST_CASE("clipping is idempotent and passes small updates through bit-exactly") {
  std::vector<double> small = {0.1, -0.2, 0.05};
  const ClipResult r1 = clip_update(small, 1.0);
  CHECK(r1.clipped == small);
  CHECK(r1.pre_norm == doctest::Approx(l2_norm(small)).epsilon(1e-15));

  std::vector<double> big = {3.0, 4.0};
  const ClipResult r2 = clip_update(big, 1.0);
  CHECK(r2.pre_norm == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(l2_norm(r2.clipped) <= 1.0);
  CHECK(l2_norm(r2.clipped) == doctest::Approx(1.0).epsilon(1e-9));
  // Direction is preserved.
  CHECK(r2.clipped[0] / r2.clipped[1] == doctest::Approx(3.0 / 4.0).epsilon(1e-12));

  // A second clip of an already-clipped vector changes nothing.
  const ClipResult r3 = clip_update(r2.clipped, 1.0);
  CHECK(r3.clipped == r2.clipped);

  CHECK_THROWS_AS(clip_update({1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_update({1.0}, -2.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_update({std::numeric_limits<double>::quiet_NaN()}, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(clip_update({std::numeric_limits<double>::infinity()}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("analytic gaussian delta matches an independent evaluation") {
  for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
    for (double eps : {0.5, 1.0, 2.0}) {
      CHECK(analytic_gaussian_delta(sigma, eps, 1.0) ==
            doctest::Approx(delta_oracle(sigma, eps, 1.0)).epsilon(1e-12));
      CHECK(analytic_gaussian_delta(2.0 * sigma, eps, 2.0) ==
            doctest::Approx(delta_oracle(2.0 * sigma, eps, 2.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("calibrated sigma satisfies the defining inequality tightly") {
  const PrivacyParams pp{2.0, 1e-5};
  const double sigma = gaussian_sigma(pp, 1.0);

  // Independent check: delta at the returned sigma is within budget, and a
  // slightly smaller sigma would break it.
  CHECK(delta_oracle(sigma, pp.epsilon, 1.0) <= pp.delta * (1 + 1e-9));
  CHECK(delta_oracle(sigma * (1 - 1e-6), pp.epsilon, 1.0) > pp.delta);

  // Cross-library reference value for (epsilon=2, delta=1e-5).
  CHECK(sigma == doctest::Approx(1.993812445643537).epsilon(1e-9));

  // The calibration beats the classical sqrt(2 ln(1.25/delta))/epsilon bound.
  const double classical = std::sqrt(2.0 * std::log(1.25 / pp.delta)) / pp.epsilon;
  CHECK(classical == doctest::Approx(2.4224026313026945).epsilon(1e-12));
  CHECK(sigma < classical);

  // Weak-local regime reference value for (epsilon=25.7, delta=1e-5).
  CHECK(gaussian_sigma({25.7, 1e-5}, 1.0) ==
        doctest::Approx(0.24044720968060956).epsilon(1e-9));

  // Sigma is exactly linear in the sensitivity.
  CHECK(gaussian_sigma(pp, 3.7) == 3.7 * gaussian_sigma(pp, 1.0));
}

TEST_CASE("gaussian noise decomposes into value plus realized draw") {
  Rng rng(5);
  std::vector<double> v = {1.0, -2.0, 0.5, 8.0};
  const NoiseResult r = add_gaussian_noise(v, 0.7, rng);
  REQUIRE(r.noised.size() == v.size());
  REQUIRE(r.noise.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(r.noised[i] == v[i] + r.noise[i]);
  }

  // sigma = 0 passes through bit-exactly with a zero noise record.
  Rng rng2(6);
  const NoiseResult z = add_gaussian_noise(v, 0.0, rng2);
  CHECK(z.noised == v);
  CHECK(l2_norm(z.noise) == 0.0);

  // Realized noise has roughly the right scale.
  Rng rng3(7);
  std::vector<double> zeros(20000, 0.0);
  const NoiseResult big = add_gaussian_noise(zeros, 2.0, rng3);
  double sumsq = 0.0;
  for (double x : big.noise) sumsq += x * x;
  CHECK(std::sqrt(sumsq / zeros.size()) == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("log moment reproduces the q = 1 closed form") {
  // With q = 1 both mixture moments collapse to lambda (lambda + 1) / (2 z^2).
  for (double z : {0.8, 1.0, 2.5}) {
    for (int lambda : {1, 2, 5, 8}) {
      const double want = lambda * (lambda + 1.0) / (2.0 * z * z);
      CHECK(log_moment(z, 1.0, lambda) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("log moment matches an independent trapezoid quadrature") {
  for (double q : {0.01, 0.1}) {
    for (int lambda : {1, 3, 6}) {
      const double z = 1.0;
      const double e1 = mixture_moment_trapezoid(-lambda, q, z);
      const double e2 = mixture_moment_trapezoid(lambda + 1.0, q, z);
      const double want = std::log(std::max(e1, e2));
      CHECK(log_moment(z, q, lambda) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("log moment scales quadratically for small sampling rates") {
  // Leading term of the subsampled Gaussian moment is q^2 lambda (lambda+1) / z^2.
  const double z = 1.0;
  for (int lambda : {1, 2, 4}) {
    const double a1 = log_moment(z, 1e-3, lambda);
    const double a2 = log_moment(z, 2e-3, lambda);
    CHECK(a2 / a1 == doctest::Approx(4.0).epsilon(0.02));
    const double predicted = 1e-6 * lambda * (lambda + 1.0) / (z * z);
    CHECK(a1 == doctest::Approx(predicted).epsilon(0.05));
  }
  CHECK(std::abs(log_moment(z, 0.0, 3)) < 1e-7);
}

TEST_CASE("accountant epsilon composes monotonically") {
  CHECK(accountant_epsilon(1.0, 0.01, 0, 1e-5) == 0.0);

  const double e10 = accountant_epsilon(1.0, 0.01, 10, 1e-5);
  const double e100 = accountant_epsilon(1.0, 0.01, 100, 1e-5);
  CHECK(e10 > 0.0);
  CHECK(e100 > e10);

  // More noise means less epsilon at fixed rounds.
  CHECK(accountant_epsilon(2.0, 0.01, 100, 1e-5) < e100);

  CHECK_THROWS_AS(accountant_epsilon(1.0, 0.01, -1, 1e-5), std::invalid_argument);
  CHECK_THROWS_AS(accountant_epsilon(0.0, 0.01, 1, 1e-5), std::invalid_argument);
  CHECK_THROWS_AS(accountant_epsilon(1.0, 2.0, 1, 1e-5), std::invalid_argument);
  CHECK_THROWS_AS(accountant_epsilon(1.0, 0.01, 1, 0.0), std::invalid_argument);
}

TEST_CASE("accountant sigma round trips through accountant epsilon") {
  const PrivacyParams target{2.0, 1e-5};
  const double q = 3e-6;
  const int rounds = 60;
  const double sigma = accountant_sigma(target, q, rounds);
  CHECK(sigma > 0.0);

  const double eps = accountant_epsilon(sigma, q, rounds, target.delta);
  CHECK(eps <= target.epsilon);
  CHECK(eps > target.epsilon * 0.995);  // bisection leaves little slack
}

TEST_CASE("single-round full-participation accountant stays near the analytic sigma") {
  // The accountant's Chernoff-style bound is looser than the exact Gaussian
  // calibration, so its sigma lands above the analytic one; the gap stays
  // well under the noise floor that would matter downstream.
  const PrivacyParams pp{2.0, 1e-5};
  const double exact = gaussian_sigma(pp, 1.0);
  const double acc = accountant_sigma(pp, 1.0, 1);
  CHECK(acc > exact);
  CHECK(acc / exact < 1.35);
}

TEST_CASE("weak local randomizer clips then noises with its own calibration") {
  Rng rng(17);
  std::vector<double> update = {6.0, 8.0};  // norm 10, clipped to 1
  const WeakLocalResult r = weak_local_randomizer(update, 25.7, 1.0, rng);
  CHECK(r.pre_clip_norm == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(r.sigma == doctest::Approx(gaussian_sigma({25.7, 1e-5}, 1.0)).epsilon(1e-12));
  REQUIRE(r.noised.size() == 2);
  // noised = clipped + noise, with the clipped vector at norm 1.
  std::vector<double> clipped = {r.noised[0] - r.noise[0], r.noised[1] - r.noise[1]};
  CHECK(l2_norm(clipped) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("snr reports the update to noise norm ratio") {
  CHECK(snr({3.0, 4.0}, {0.0, 2.5}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::isinf(snr({1.0}, {0.0})));
  CHECK(snr({0.0}, {2.0}) == 0.0);
}

TEST_CASE("config validation rejects out-of-range parameters") {
  CHECK_THROWS_AS((PrivacyParams{0.0, 1e-5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PrivacyParams{1.0, 0.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PrivacyParams{1.0, 1.0}.validate()), std::invalid_argument);
  PrivacyParams{1.0, 1e-5}.validate();

  MechanismConfig ok;
  ok.placement = Placement::kCentral;
  ok.validate();
  MechanismConfig bad_clip = ok;
  bad_clip.clip_norm = 0.0;
  CHECK_THROWS_AS(bad_clip.validate(), std::invalid_argument);
  MechanismConfig bad_nm = ok;
  bad_nm.noise_multiplier = -1.0;
  CHECK_THROWS_AS(bad_nm.validate(), std::invalid_argument);

  AccountantConfig acc;
  acc.validate();
  CHECK(acc.sampling_rate() == doctest::Approx(3e-6).epsilon(1e-12));
  AccountantConfig bad_pop = acc;
  bad_pop.population_size = 0;
  CHECK_THROWS_AS(bad_pop.validate(), std::invalid_argument);
  AccountantConfig bad_cohort = acc;
  bad_cohort.cohort_size = 0;
  CHECK_THROWS_AS(bad_cohort.validate(), std::invalid_argument);
  AccountantConfig bad_rounds = acc;
  bad_rounds.max_rounds = -1;
  CHECK_THROWS_AS(bad_rounds.validate(), std::invalid_argument);
}
