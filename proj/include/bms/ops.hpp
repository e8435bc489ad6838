#pragma once

// Differentiable operations over graph nodes.
//
// Binary elementwise operations take operands of equal shape or one operand
// holding a single element (scalar broadcast). Domain violations raise
// DomainError naming the operation; shape violations raise ShapeError.

#include <cstddef>
#include <span>

#include "bms/graph.hpp"

namespace bms::ad {

/// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);

Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var softplus(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var sqrt(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

/// [m x n] + [n] broadcast over rows.
Var add_bias(Var x, Var bias);

Var sum(Var a);
Var mean(Var a);
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
/// Gradient routes to the selected element; ties go to the lowest index.
Var max(Var a, std::size_t axis);
Var min(Var a, std::size_t axis);
/// log(sum(exp(a))) along `axis`, shifted by the max for stability.
Var logsumexp(Var a, std::size_t axis);

Var reshape(Var a, Shape shape);
/// Columns [begin, end) of a 2-D node.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Each row repeated `times` times consecutively: row r lands at r*times..r*times+times-1.
Var repeat_rows(Var a, std::size_t times);
Var gather_rows(Var a, std::span<const std::size_t> rows);

/// Per-row L1 (p = 1) or L2 (p = 2) norm of a 2-D node -> [rows].
/// The subgradient at a zero row is zero.
Var row_norm(Var a, int p);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return mul_scalar(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }

}  // namespace bms::ad
