#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bms/graph.hpp"
#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms::testing {

inline Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// |a - b| / max(|a| + |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

using ScalarFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

// Largest relative error between reverse-mode gradients of `f` and central
// differences with step h, over every element of every input.
inline double max_gradient_error(std::vector<Tensor> inputs, const ScalarFn& f, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.variable(t));
    g.backward(f(g, vars));
    for (const ad::Var& v : vars) analytic.push_back(g.grad(v));
  }
  auto eval = [&] {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.constant(t));
    return f(g, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double old = inputs[i][j];
      inputs[i][j] = old + h;
      const double up = eval();
      inputs[i][j] = old - h;
      const double down = eval();
      inputs[i][j] = old;
      worst = std::max(worst, rel_err(analytic[i][j], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace bms::testing
