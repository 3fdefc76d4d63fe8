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

#include "fedsv/matrix.hpp"

#include <cblas.h>

#include <cmath>
#include <mutex>

#include "fedsv/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fedsv {

namespace {

// BLAS is pinned to one thread: summation order stays fixed, so repeated
// runs on the same platform are bit-identical, and client-level parallelism
// above BLAS does not oversubscribe cores.
std::once_flag g_blas_once;

void ensure_single_threaded_blas() {
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
}

}  // namespace

void gemm(double alpha, const Matrix& a, bool trans_a, const Matrix& b,
          bool trans_b, double beta, Matrix& c) {
  ensure_single_threaded_blas();
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  if (k != kb) throw std::invalid_argument("gemm: inner dimensions differ");
  if (beta == 0.0) {
    c = Matrix(m, n);
  } else if (c.rows != m || c.cols != n) {
    throw std::invalid_argument("gemm: output shape mismatch");
  }
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) c.fill(0.0);
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
              a.data.data(), a.cols, b.data.data(), b.cols, beta,
              c.data.data(), c.cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  gemm(1.0, a, false, b, false, 0.0, c);
  return c;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y.data[i] += alpha * x.data[i];
}

bool all_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t Rng::splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be >= 1");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller, cosine branch only; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

Rng Rng::derive(std::uint64_t tag) const {
  return Rng(splitmix64(splitmix64(seed_ ^ 0xA0761D6478BD642FULL) ^ tag));
}

Rng Rng::derive(std::string_view label) const { return derive(fnv1a(label)); }

}  // namespace fedsv
