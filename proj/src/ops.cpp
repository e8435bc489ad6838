#include "bms/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bms/simd/kernels.hpp"

namespace bms::ad {
namespace {

std::uint32_t next_id(const Graph& g) { return static_cast<std::uint32_t>(g.size()); }

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw std::logic_error(std::string(op) + ": operands belong to different graphs");
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D operand, got " +
                     to_string(t.shape()));
  }
}

Tensor transpose(const Tensor& t) {
  const std::size_t r = t.shape()[0];
  const std::size_t c = t.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t[i * c + j];
  }
  return out;
}

// Elementwise op: value y = f(x); gradient dx += g * df(x, y).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::uint32_t self = next_id(g);
  return g.record(std::move(y), a.requires_grad(),
                  [a, self, df](Graph& gr, const Tensor& gy) {
                    const Tensor& xv = gr.value(a);
                    const Tensor& yv = gr.value(gr.node(self));
                    Tensor& gx = gr.grad_slot(a);
                    for (std::size_t i = 0; i < xv.size(); ++i) {
                      gx[i] += gy[i] * df(xv[i], yv[i]);
                    }
                  });
}

// Elementwise binary op with one-element broadcast on either side.
// dfa/dfb give the partial derivatives at (x, z).
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA dfa, DB dfb) {
  require_same_graph(a, b, op);
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const bool a_scalar = x.size() == 1 && z.size() != 1;
  const bool b_scalar = z.size() == 1 && x.size() != 1;
  if (!a_scalar && !b_scalar && x.shape() != z.shape()) {
    if (!(x.size() == 1 && z.size() == 1)) {
      throw ShapeError(std::string(op) + ": shape mismatch " +
                       to_string(x.shape()) + " vs " + to_string(z.shape()));
    }
  }
  const Shape& out_shape = a_scalar ? z.shape() : x.shape();
  const std::size_t n = element_count(out_shape);
  Tensor y(out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = f(x[a_scalar ? 0 : i], z[b_scalar ? 0 : i]);
  }
  const bool needs = a.requires_grad() || b.requires_grad();
  return g.record(
      std::move(y), needs,
      [a, b, a_scalar, b_scalar, n, dfa, dfb](Graph& gr, const Tensor& gy) {
        const Tensor& xv = gr.value(a);
        const Tensor& zv = gr.value(b);
        if (a.requires_grad()) {
          Tensor& ga = gr.grad_slot(a);
          for (std::size_t i = 0; i < n; ++i) {
            const double d = gy[i] * dfa(xv[a_scalar ? 0 : i], zv[b_scalar ? 0 : i]);
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (b.requires_grad()) {
          Tensor& gb = gr.grad_slot(b);
          for (std::size_t i = 0; i < n; ++i) {
            const double d = gy[i] * dfb(xv[a_scalar ? 0 : i], zv[b_scalar ? 0 : i]);
            gb[b_scalar ? 0 : i] += d;
          }
        }
      });
}

struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
  Shape reduced;
};

AxisView axis_view(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.ndim()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(t.shape()));
  }
  AxisView v;
  for (std::size_t d = 0; d < t.ndim(); ++d) {
    if (d < axis) v.outer *= t.shape()[d];
    if (d > axis) v.inner *= t.shape()[d];
    if (d != axis) v.reduced.push_back(t.shape()[d]);
  }
  v.len = t.shape()[axis];
  if (v.len == 0) {
    throw ShapeError(std::string(op) + ": reduction over an empty axis");
  }
  return v;
}

// Shared implementation of max/min along an axis. `better(c, best)` decides
// whether candidate c replaces the incumbent; strict comparison keeps the
// lowest index on ties.
template <class Better>
Var select_along(Var a, std::size_t axis, const char* op, Better better) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const AxisView v = axis_view(x, axis, op);
  Tensor y(v.reduced);
  std::vector<std::size_t> chosen(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      std::size_t best = o * v.len * v.inner + in;
      for (std::size_t l = 1; l < v.len; ++l) {
        const std::size_t idx = (o * v.len + l) * v.inner + in;
        if (better(x[idx], x[best])) best = idx;
      }
      chosen[o * v.inner + in] = best;
      y[o * v.inner + in] = x[best];
    }
  }
  return g.record(std::move(y), a.requires_grad(),
                  [a, chosen = std::move(chosen)](Graph& gr, const Tensor& gy) {
                    Tensor& gx = gr.grad_slot(a);
                    for (std::size_t i = 0; i < chosen.size(); ++i) {
                      gx[chosen[i]] += gy[i];
                    }
                  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require_2d(x, "matmul");
  require_2d(w, "matmul");
  const std::size_t m = x.shape()[0];
  const std::size_t k = x.shape()[1];
  const std::size_t n = w.shape()[1];
  if (w.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ: " + to_string(x.shape()) +
                     " * " + to_string(w.shape()));
  }
  Tensor y({m, n});
  if (m && n) simd::kernels().gemm(m, n, k, x.raw(), k, 1, w.raw(), y.raw(), false);
  Graph& g = a.graph();
  const bool needs = a.requires_grad() || b.requires_grad();
  return g.record(std::move(y), needs, [a, b, m, n, k](Graph& gr, const Tensor& gy) {
    const auto& kern = simd::kernels();
    const Tensor& xv = gr.value(a);
    const Tensor& wv = gr.value(b);
    if (m == 0 || n == 0 || k == 0) return;
    if (a.requires_grad()) {
      // dX[m x k] += G[m x n] * W^T
      const Tensor wt = transpose(wv);
      kern.gemm(m, k, n, gy.raw(), n, 1, wt.raw(), gr.grad_slot(a).raw(), true);
    }
    if (b.requires_grad()) {
      // dW[k x n] += X^T * G
      kern.gemm(k, n, m, xv.raw(), 1, k, gy.raw(), gr.grad_slot(b).raw(), true);
    }
  });
}

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double z) { return x + z; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double z) { return x - z; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double z) { return x * z; },
      [](double, double z) { return z; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  for (double d : b.value().data()) {
    if (d == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double z) { return x / z; },
      [](double, double z) { return 1.0 / z; },
      [](double x, double z) { return -x / (z * z); });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(v));
    }
  }
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  simd::kernels().leaky_relu(x.size(), slope, x.raw(), y.raw());
  return g.record(std::move(y), a.requires_grad(), [a, slope](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(a);
    simd::kernels().leaky_relu_backward(xv.size(), slope, xv.raw(), gy.raw(),
                                        gr.grad_slot(a).raw());
  });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_2d(xv, "add_bias");
  const std::size_t rows = xv.shape()[0];
  const std::size_t cols = xv.shape()[1];
  if (bv.size() != cols) {
    throw ShapeError("add_bias: bias " + to_string(bv.shape()) +
                     " does not match " + to_string(xv.shape()));
  }
  Tensor y(xv.shape());
  simd::kernels().add_bias(rows, cols, xv.raw(), bv.raw(), y.raw());
  const bool needs = x.requires_grad() || bias.requires_grad();
  return x.graph().record(std::move(y), needs,
                          [x, bias, rows, cols](Graph& gr, const Tensor& gy) {
                            const auto& kern = simd::kernels();
                            if (x.requires_grad()) {
                              kern.axpy(gy.size(), 1.0, gy.raw(), gr.grad_slot(x).raw());
                            }
                            if (bias.requires_grad()) {
                              Tensor& gb = gr.grad_slot(bias);
                              for (std::size_t r = 0; r < rows; ++r) {
                                kern.axpy(cols, 1.0, gy.raw() + r * cols, gb.raw());
                              }
                            }
                          });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record(Tensor::scalar(s), a.requires_grad(),
                          [a](Graph& gr, const Tensor& gy) {
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
                          });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisView v = axis_view(x, axis, "sum");
  Tensor y(v.reduced);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        y[o * v.inner + in] += x[(o * v.len + l) * v.inner + in];
      }
    }
  }
  return a.graph().record(std::move(y), a.requires_grad(), [a, v](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(a);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t l = 0; l < v.len; ++l) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          gx[(o * v.len + l) * v.inner + in] += gy[o * v.inner + in];
        }
      }
    }
  });
}

Var mean(Var a, std::size_t axis) {
  const AxisView v = axis_view(a.value(), axis, "mean");
  return mul_scalar(sum(a, axis), 1.0 / static_cast<double>(v.len));
}

Var max(Var a, std::size_t axis) {
  return select_along(a, axis, "max", [](double c, double best) { return c > best; });
}

Var min(Var a, std::size_t axis) {
  return select_along(a, axis, "min", [](double c, double best) { return c < best; });
}

Var logsumexp(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisView v = axis_view(x, axis, "logsumexp");
  Tensor y(v.reduced);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) {
        m = std::max(m, x[(o * v.len + l) * v.inner + in]);
      }
      double s = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        s += std::exp(x[(o * v.len + l) * v.inner + in] - m);
      }
      y[o * v.inner + in] = m + std::log(s);
    }
  }
  const std::uint32_t self = next_id(a.graph());
  return a.graph().record(std::move(y), a.requires_grad(),
                          [a, v, self](Graph& gr, const Tensor& gy) {
                            const Tensor& xv = gr.value(a);
                            const Tensor& yv = gr.value(gr.node(self));
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t o = 0; o < v.outer; ++o) {
                              for (std::size_t in = 0; in < v.inner; ++in) {
                                const std::size_t r = o * v.inner + in;
                                for (std::size_t l = 0; l < v.len; ++l) {
                                  const std::size_t idx = (o * v.len + l) * v.inner + in;
                                  gx[idx] += gy[r] * std::exp(xv[idx] - yv[r]);
                                }
                              }
                            }
                          });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.graph().record(std::move(y), a.requires_grad(), [a](Graph& gr, const Tensor& gy) {
    simd::kernels().axpy(gy.size(), 1.0, gy.raw(), gr.grad_slot(a).raw());
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  require_2d(x, "slice_cols");
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  if (begin > end || end > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") outside " + to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.raw() + r * cols + begin, w, y.raw() + r * w);
  }
  return a.graph().record(std::move(y), a.requires_grad(),
                          [a, rows, cols, begin, w](Graph& gr, const Tensor& gy) {
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < w; ++j) {
                                gx[r * cols + begin + j] += gy[r * w + j];
                              }
                            }
                          });
}

Var repeat_rows(Var a, std::size_t times) {
  const Tensor& x = a.value();
  if (x.ndim() == 0) throw ShapeError("repeat_rows: scalar operand");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Shape shape = x.shape();
  shape[0] = rows * times;
  Tensor y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(x.raw() + r * cols, cols, y.raw() + (r * times + t) * cols);
    }
  }
  return a.graph().record(std::move(y), a.requires_grad(),
                          [a, rows, cols, times](Graph& gr, const Tensor& gy) {
                            const auto& kern = simd::kernels();
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t t = 0; t < times; ++t) {
                                kern.axpy(cols, 1.0, gy.raw() + (r * times + t) * cols,
                                          gx.raw() + r * cols);
                              }
                            }
                          });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  if (x.ndim() == 0) throw ShapeError("gather_rows: scalar operand");
  const std::size_t cols = x.cols();
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor y(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) +
                       " out of range for " + to_string(x.shape()));
    }
    std::copy_n(x.raw() + rows[i] * cols, cols, y.raw() + i * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.graph().record(std::move(y), a.requires_grad(),
                          [a, cols, idx = std::move(idx)](Graph& gr, const Tensor& gy) {
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              simd::kernels().axpy(cols, 1.0, gy.raw() + i * cols,
                                                   gx.raw() + idx[i] * cols);
                            }
                          });
}

Var row_norm(Var a, int p) {
  if (p != 1 && p != 2) {
    throw DomainError("row_norm: unsupported norm order " + std::to_string(p));
  }
  const Tensor& x = a.value();
  require_2d(x, "row_norm");
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = x[r * cols + j];
      s += p == 1 ? std::abs(v) : v * v;
    }
    y[r] = p == 1 ? s : std::sqrt(s);
  }
  const std::uint32_t self = next_id(a.graph());
  return a.graph().record(std::move(y), a.requires_grad(),
                          [a, p, rows, cols, self](Graph& gr, const Tensor& gy) {
                            const Tensor& xv = gr.value(a);
                            const Tensor& yv = gr.value(gr.node(self));
                            Tensor& gx = gr.grad_slot(a);
                            for (std::size_t r = 0; r < rows; ++r) {
                              if (yv[r] == 0.0) continue;
                              for (std::size_t j = 0; j < cols; ++j) {
                                const double v = xv[r * cols + j];
                                const double d = p == 1 ? (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0))
                                                        : v / yv[r];
                                gx[r * cols + j] += gy[r] * d;
                              }
                            }
                          });
}

}  // namespace bms::ad
