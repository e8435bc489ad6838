#include <cmath>

#include "bms/simd/kernels.hpp"

namespace bms::simd {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t a_row_stride, std::size_t a_col_stride,
                 const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * a_row_stride + p * a_col_stride] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_bias_scalar(std::size_t rows, std::size_t cols, const double* in,
                     const double* bias, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = in[i * cols + j] + bias[j];
    }
  }
}

void leaky_relu_scalar(std::size_t n, double slope, const double* x,
                       double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_backward_scalar(std::size_t n, double slope, const double* x,
                                const double* g, double* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? g[i] : slope * g[i];
}

void adam_scalar(std::size_t n, const AdamArgs& args, double* param,
                 const double* grad, double* m, double* v) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = args.beta1 * m[i] + (1.0 - args.beta1) * g;
    v[i] = args.beta2 * v[i] + (1.0 - args.beta2) * g * g;
    const double m_hat = m[i] / args.bias_correction1;
    const double v_hat = v[i] / args.bias_correction2;
    param[i] -= args.lr * m_hat / (std::sqrt(v_hat) + args.eps);
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar",          gemm_scalar,
      axpy_scalar,       add_bias_scalar,
      leaky_relu_scalar, leaky_relu_backward_scalar,
      adam_scalar,
  };
  return table;
}

}  // namespace bms::simd
