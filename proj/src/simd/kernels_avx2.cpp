// Compiled with -mavx2 -mfma. Nothing in here may run before dispatch has
// confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "bms/simd/kernels.hpp"

namespace bms::simd {
namespace {

// Every C element is an FMA chain over p = 0..k-1 seeded with the old C value
// (or zero). Column tails use std::fma, which compiles to the same
// instruction, so the result does not depend on where the element sits.
// Splitting the chain across k blocks stores and reloads the partial sum,
// which is exact.
template <int Rows>
inline void gemm_rows(std::size_t i0, std::size_t n, std::size_t p0, std::size_t p1,
                      const double* a, std::size_t rs, std::size_t cs,
                      const double* b, double* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d lo[Rows];
    __m256d hi[Rows];
    for (int r = 0; r < Rows; ++r) {
      double* crow = c + (i0 + r) * n + j;
      lo[r] = accumulate ? _mm256_loadu_pd(crow) : _mm256_setzero_pd();
      hi[r] = accumulate ? _mm256_loadu_pd(crow + 4) : _mm256_setzero_pd();
    }
    for (std::size_t p = p0; p < p1; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
      for (int r = 0; r < Rows; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + (i0 + r) * rs + p * cs);
        lo[r] = _mm256_fmadd_pd(av, b0, lo[r]);
        hi[r] = _mm256_fmadd_pd(av, b1, hi[r]);
      }
    }
    for (int r = 0; r < Rows; ++r) {
      double* crow = c + (i0 + r) * n + j;
      _mm256_storeu_pd(crow, lo[r]);
      _mm256_storeu_pd(crow + 4, hi[r]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[Rows];
    for (int r = 0; r < Rows; ++r) {
      acc[r] = accumulate ? _mm256_loadu_pd(c + (i0 + r) * n + j)
                          : _mm256_setzero_pd();
    }
    for (std::size_t p = p0; p < p1; ++p) {
      const __m256d bv = _mm256_loadu_pd(b + p * n + j);
      for (int r = 0; r < Rows; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + (i0 + r) * rs + p * cs);
        acc[r] = _mm256_fmadd_pd(av, bv, acc[r]);
      }
    }
    for (int r = 0; r < Rows; ++r) {
      _mm256_storeu_pd(c + (i0 + r) * n + j, acc[r]);
    }
  }
  for (; j < n; ++j) {
    for (int r = 0; r < Rows; ++r) {
      double acc = accumulate ? c[(i0 + r) * n + j] : 0.0;
      for (std::size_t p = p0; p < p1; ++p) {
        acc = std::fma(a[(i0 + r) * rs + p * cs], b[p * n + j], acc);
      }
      c[(i0 + r) * n + j] = acc;
    }
  }
}

constexpr std::size_t kBlockK = 192;

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t a_row_stride, std::size_t a_col_stride,
               const double* b, double* c, bool accumulate) {
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t p1 = std::min(k, p0 + kBlockK);
    const bool acc = accumulate || p0 > 0;
    std::size_t i = 0;
    for (; i + 6 <= m; i += 6) {
      gemm_rows<6>(i, n, p0, p1, a, a_row_stride, a_col_stride, b, c, acc);
    }
    for (; i + 2 <= m; i += 2) {
      gemm_rows<2>(i, n, p0, p1, a, a_row_stride, a_col_stride, b, c, acc);
    }
    for (; i < m; ++i) {
      gemm_rows<1>(i, n, p0, p1, a, a_row_stride, a_col_stride, b, c, acc);
    }
  }
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void add_bias_avx2(std::size_t rows, std::size_t cols, const double* in,
                   const double* bias, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in + r * cols;
    double* dst = out + r * cols;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      _mm256_storeu_pd(dst + j, _mm256_add_pd(_mm256_loadu_pd(src + j),
                                              _mm256_loadu_pd(bias + j)));
    }
    for (; j < cols; ++j) dst[j] = src[j] + bias[j];
  }
}

void leaky_relu_avx2(std::size_t n, double slope, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(sv, xv), xv, pos));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_backward_avx2(std::size_t n, double slope, const double* x,
                              const double* g, double* dx) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    const __m256d routed = _mm256_blendv_pd(_mm256_mul_pd(sv, gv), gv, pos);
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), routed));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0 ? g[i] : slope * g[i];
}

// Same formula as the scalar kernel with the two moment updates fused; the
// tail uses std::fma so every element follows one rounding sequence.
void adam_avx2(std::size_t n, const AdamArgs& args, double* param,
               const double* grad, double* m, double* v) {
  const __m256d b1 = _mm256_set1_pd(args.beta1);
  const __m256d b2 = _mm256_set1_pd(args.beta2);
  const __m256d one_b1 = _mm256_set1_pd(1.0 - args.beta1);
  const __m256d one_b2 = _mm256_set1_pd(1.0 - args.beta2);
  const __m256d bc1 = _mm256_set1_pd(args.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(args.bias_correction2);
  const __m256d lr = _mm256_set1_pd(args.lr);
  const __m256d eps = _mm256_set1_pd(args.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mv =
        _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(one_b1, g));
    const __m256d vv = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i),
                                       _mm256_mul_pd(one_b2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d m_hat = _mm256_div_pd(mv, bc1);
    const __m256d denom =
        _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vv, bc2)), eps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = std::fma(args.beta1, m[i], (1.0 - args.beta1) * g);
    v[i] = std::fma(args.beta2, v[i], (1.0 - args.beta2) * (g * g));
    const double m_hat = m[i] / args.bias_correction1;
    const double denom = std::sqrt(v[i] / args.bias_correction2) + args.eps;
    param[i] -= (args.lr * m_hat) / denom;
  }
}

}  // namespace

namespace detail {
const KernelTable& avx2_table() {
  static const KernelTable table{
      "avx2",          gemm_avx2,
      axpy_avx2,       add_bias_avx2,
      leaky_relu_avx2, leaky_relu_backward_avx2,
      adam_avx2,
  };
  return table;
}
}  // namespace detail

}  // namespace bms::simd
