#include "evokg/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if (defined(__AVX2__) && defined(__FMA__)) || defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace evokg {
namespace {

#if defined(__AVX512F__)
constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 24;
#else
constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;
#endif
constexpr std::size_t kKc = 384;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 512;

// Packs rows [i0, i0+mc) x depth [p0, p0+kc) of A into kMr-row panels, zero padded.
void pack_a(MatrixView a, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc, double* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t i = 0; i < kMr; ++i) {
        *out++ = i < rows ? a(i0 + ir + i, p0 + p) : 0.0;
      }
    }
  }
}

void pack_b(MatrixView b, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t j = 0; j < kNr; ++j) {
        *out++ = j < cols ? b(p0 + p, j0 + jr + j) : 0.0;
      }
    }
  }
}

#if defined(__AVX512F__)
// Three registers per row; still one fma chain per output element, so results match the
// AVX2 and scalar kernels bit for bit.
void micro_kernel(std::size_t kc, const double* __restrict a, const double* __restrict b, double (&acc)[kMr][kNr]) {
  constexpr std::size_t kV = kNr / 8;
  __m512d c[kMr][kV];
#pragma GCC unroll 16
  for (std::size_t i = 0; i < kMr; ++i)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < kV; ++v) c[i][v] = _mm512_loadu_pd(&acc[i][8 * v]);
  for (std::size_t p = 0; p < kc; ++p) {
    __m512d bv[kV];
#pragma GCC unroll 4
    for (std::size_t v = 0; v < kV; ++v) bv[v] = _mm512_loadu_pd(b + p * kNr + 8 * v);
#pragma GCC unroll 16
    for (std::size_t i = 0; i < kMr; ++i) {
      const __m512d ai = _mm512_set1_pd(a[p * kMr + i]);
#pragma GCC unroll 4
      for (std::size_t v = 0; v < kV; ++v) c[i][v] = _mm512_fmadd_pd(ai, bv[v], c[i][v]);
    }
  }
#pragma GCC unroll 16
  for (std::size_t i = 0; i < kMr; ++i)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < kV; ++v) _mm512_storeu_pd(&acc[i][8 * v], c[i][v]);
}
#elif defined(__AVX2__) && defined(__FMA__)
// Same fma chain as the portable kernel below, four lanes at a time.
void micro_kernel(std::size_t kc, const double* __restrict a, const double* __restrict b, double (&acc)[kMr][kNr]) {
  __m256d c00 = _mm256_loadu_pd(&acc[0][0]), c01 = _mm256_loadu_pd(&acc[0][4]);
  __m256d c10 = _mm256_loadu_pd(&acc[1][0]), c11 = _mm256_loadu_pd(&acc[1][4]);
  __m256d c20 = _mm256_loadu_pd(&acc[2][0]), c21 = _mm256_loadu_pd(&acc[2][4]);
  __m256d c30 = _mm256_loadu_pd(&acc[3][0]), c31 = _mm256_loadu_pd(&acc[3][4]);
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * kNr);
    const __m256d b1 = _mm256_loadu_pd(b + p * kNr + 4);
    __m256d ai = _mm256_broadcast_sd(a + p * kMr);
    c00 = _mm256_fmadd_pd(ai, b0, c00);
    c01 = _mm256_fmadd_pd(ai, b1, c01);
    ai = _mm256_broadcast_sd(a + p * kMr + 1);
    c10 = _mm256_fmadd_pd(ai, b0, c10);
    c11 = _mm256_fmadd_pd(ai, b1, c11);
    ai = _mm256_broadcast_sd(a + p * kMr + 2);
    c20 = _mm256_fmadd_pd(ai, b0, c20);
    c21 = _mm256_fmadd_pd(ai, b1, c21);
    ai = _mm256_broadcast_sd(a + p * kMr + 3);
    c30 = _mm256_fmadd_pd(ai, b0, c30);
    c31 = _mm256_fmadd_pd(ai, b1, c31);
  }
  _mm256_storeu_pd(&acc[0][0], c00), _mm256_storeu_pd(&acc[0][4], c01);
  _mm256_storeu_pd(&acc[1][0], c10), _mm256_storeu_pd(&acc[1][4], c11);
  _mm256_storeu_pd(&acc[2][0], c20), _mm256_storeu_pd(&acc[2][4], c21);
  _mm256_storeu_pd(&acc[3][0], c30), _mm256_storeu_pd(&acc[3][4], c31);
}
#else
void micro_kernel(std::size_t kc, const double* __restrict a, const double* __restrict b, double (&acc)[kMr][kNr]) {
  for (std::size_t p = 0; p < kc; ++p) {
    const double* bp = b + p * kNr;
    const double* ap = a + p * kMr;
    for (std::size_t i = 0; i < kMr; ++i) {
      const double ai = ap[i];
      for (std::size_t j = 0; j < kNr; ++j) acc[i][j] = std::fma(ai, bp[j], acc[i][j]);
    }
  }
}
#endif

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c, std::size_t ldc,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    return;
  }

  thread_local std::vector<double> packed_a;
  thread_local std::vector<double> packed_b;
  packed_a.resize(((kMc + kMr - 1) / kMr) * kMr * kKc);
  packed_b.resize(((kNc + kNr - 1) / kNr) * kNr * kKc);

  for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
    const std::size_t nc = std::min(kNc, n - j0);
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
      const std::size_t kc = std::min(kKc, k - p0);
      const bool seed_from_c = accumulate || p0 > 0;
      pack_b(b, p0, kc, j0, nc, packed_b.data());
      for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
        const std::size_t mc = std::min(kMc, m - i0);
        pack_a(a, i0, mc, p0, kc, packed_a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t cols = std::min(kNr, nc - jr);
          const double* bp = packed_b.data() + (jr / kNr) * kNr * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t rows = std::min(kMr, mc - ir);
            const double* ap = packed_a.data() + (ir / kMr) * kMr * kc;
            double* ct = c + (i0 + ir) * ldc + j0 + jr;
            double acc[kMr][kNr] = {};
            if (seed_from_c) {
              for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) acc[i][j] = ct[i * ldc + j];
            }
            micro_kernel(kc, ap, bp, acc);
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < cols; ++j) ct[i * ldc + j] = acc[i][j];
          }
        }
      }
    }
  }
}

}  // namespace evokg
