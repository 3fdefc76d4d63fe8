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

#ifndef FEDSV_MATRIX_HPP_
#define FEDSV_MATRIX_HPP_

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedsv {

// Dense row-major matrix of 64-bit floats.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
  }

  double& operator()(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row_ptr(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

// c = alpha * op(a) * op(b) + beta * c. Shapes are checked; c is resized only
// when beta == 0.
void gemm(double alpha, const Matrix& a, bool trans_a, const Matrix& b,
          bool trans_b, double beta, Matrix& c);

// Convenience: a * b.
Matrix matmul(const Matrix& a, const Matrix& b);

// y += alpha * x, elementwise over equally shaped matrices.
void axpy(double alpha, const Matrix& x, Matrix& y);

bool all_finite(const Matrix& m);

}  // namespace fedsv

#endif  // FEDSV_MATRIX_HPP_
