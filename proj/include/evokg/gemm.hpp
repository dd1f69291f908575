#pragma once

#include <cstddef>

namespace evokg {

// Strided read-only matrix view: element (i, j) lives at data[i * row_stride + j * col_stride].
// A transposed operand is the same buffer with the strides swapped.
struct MatrixView {
  const double* data;
  std::size_t row_stride;
  std::size_t col_stride;

  double operator()(std::size_t i, std::size_t j) const { return data[i * row_stride + j * col_stride]; }
  MatrixView transposed() const { return {data, col_stride, row_stride}; }
};

inline MatrixView row_major(const double* data, std::size_t cols) { return {data, cols, 1}; }

// C[m x n] = A[m x k] * B[k x n]   (accumulate == false)
// C[m x n] += A[m x k] * B[k x n]  (accumulate == true)
//
// C is row-major with leading dimension ldc. Every output element is produced by a single
// fused multiply-add chain over k in ascending order, seeded with 0 (or the prior C value when
// accumulating). The result for row i therefore depends only on row i of A, never on m or on
// the blocking, so a one-row product is bitwise identical to the same row of a batched product.
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c, std::size_t ldc,
          bool accumulate);

}  // namespace evokg
