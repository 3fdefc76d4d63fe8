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

#ifndef FEDSV_RNG_HPP_
#define FEDSV_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace fedsv {

// Deterministic random stream, fully pinned so that runs reproduce
// bit-identically from a 64-bit seed:
//   - generator: std::mt19937_64 (algorithm fixed by the C++ standard)
//   - uniform doubles: top 53 bits of the raw draw, scaled by 2^-53
//   - normals: Box-Muller, consuming exactly two uniforms per draw
//     (std::normal_distribution is implementation-defined and never used)
//
// Child streams are derived from the parent *seed* (not the consumed state)
// via splitmix64 mixing, so independent pipeline stages can draw in any
// order without perturbing each other.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n >= 1.
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal draw via Box-Muller (cosine branch).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream identified by an integer tag.
  Rng derive(std::uint64_t tag) const;

  // Independent child stream identified by a label (FNV-1a hashed).
  Rng derive(std::string_view label) const;

  Rng derive(std::string_view label, std::uint64_t tag) const {
    return derive(label).derive(tag);
  }

  static std::uint64_t splitmix64(std::uint64_t x);
  static std::uint64_t fnv1a(std::string_view s);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace fedsv

#endif  // FEDSV_RNG_HPP_
