#pragma once

// Data-parallel inner loops used by the autodiff core and the optimizer.
//
// Every kernel has a scalar reference implementation and, where the CPU
// supports it, an AVX2+FMA variant. The active table is chosen once at
// startup (override with BMS_KERNELS=scalar|avx2). The AVX2 variants compute
// each output element with the same operation order regardless of its
// position in the buffer, so results are independent of batch layout.

#include <cstddef>
#include <string_view>

namespace bms::simd {

/// C[m x n] (+)= A'[m x k] * B[k x n].
/// A' element (i, p) lives at a[i * a_row_stride + p * a_col_stride], which
/// covers both A and A^T without a copy. B and C are dense row-major.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t a_row_stride,
                        std::size_t a_col_stride, const double* b, double* c,
                        bool accumulate);

/// y += alpha * x
using AxpyFn = void (*)(std::size_t n, double alpha, const double* x,
                        double* y);

/// out[i, j] = in[i, j] + bias[j] for a rows x cols matrix.
using AddBiasFn = void (*)(std::size_t rows, std::size_t cols, const double* in,
                           const double* bias, double* out);

/// y = x > 0 ? x : slope * x
using LeakyReluFn = void (*)(std::size_t n, double slope, const double* x,
                             double* y);

/// dx += (x > 0 ? 1 : slope) * g
using LeakyReluBackwardFn = void (*)(std::size_t n, double slope,
                                     const double* x, const double* g,
                                     double* dx);

struct AdamArgs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

/// In-place Adam update of n parameters.
using AdamFn = void (*)(std::size_t n, const AdamArgs& args, double* param,
                        const double* grad, double* m, double* v);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  AxpyFn axpy;
  AddBiasFn add_bias;
  LeakyReluFn leaky_relu;
  LeakyReluBackwardFn leaky_relu_backward;
  AdamFn adam;
};

const KernelTable& scalar_kernels();

/// nullptr when the running CPU lacks AVX2/FMA or the build disabled it.
const KernelTable* avx2_kernels();

/// The table selected for this process.
const KernelTable& kernels();

/// Forces a table by name ("scalar" or "avx2"). Returns false if the
/// requested table is unavailable; the active table is then unchanged.
bool select_kernels(std::string_view name);

}  // namespace bms::simd
