#include <doctest.h>

#include <cmath>

#include "bms/adam.hpp"
#include "bms/ops.hpp"

using namespace bms;

TEST_SUITE("property") {
  TEST_CASE("hand-executed first step with beta1 = 0") {
    ad::Parameter p("p", Tensor::vector({2.0}));
    optim::Adam adam({&p}, {0.1, 0.0, 0.9, 1e-8});
    p.grad = Tensor::vector({1.0});
    REQUIRE(adam.step());
    // m_hat = 1, v_hat = 0.1 / (1 - 0.9) = 1
    const double expected = 2.0 - 0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
    CHECK(std::abs(p.value[0] - expected) < 1e-9);
    CHECK(adam.steps() == 1);
  }
}

TEST_CASE("second step follows the bias-corrected recursion") {
  ad::Parameter p("p", Tensor::vector({0.0}));
  optim::Adam adam({&p}, {0.01, 0.5, 0.9, 1e-8});
  const double g1 = 2.0, g2 = -1.0;
  p.grad = Tensor::vector({g1});
  adam.step();
  p.grad = Tensor::vector({g2});
  adam.step();
  double m = 0.5 * g1, v = 0.1 * g1 * g1;
  double x = -0.01 * (m / 0.5) / (std::sqrt(v / 0.1) + 1e-8);
  m = 0.5 * m + 0.5 * g2;
  v = 0.9 * v + 0.1 * g2 * g2;
  x -= 0.01 * (m / (1 - 0.25)) / (std::sqrt(v / (1 - 0.81)) + 1e-8);
  CHECK(std::abs(p.value[0] - x) < 1e-15);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  ad::Parameter p("p", Tensor::vector({1.0, -3.0, 0.25}));
  optim::Adam adam({&p}, {});
  for (int i = 0; i < 10; ++i) {
    p.zero_grad();
    REQUIRE(adam.step());
  }
  CHECK(p.value == Tensor::vector({1.0, -3.0, 0.25}));
}

TEST_CASE("first step magnitude is lr for a unit gradient regardless of beta2") {
  for (double beta2 : {0.5, 0.9, 0.999}) {
    ad::Parameter p("p", Tensor::vector({0.0}));
    optim::Adam adam({&p}, {1e-3, 0.0, beta2, 1e-8});
    p.grad = Tensor::vector({1.0});
    adam.step();
    CHECK(std::abs(-p.value[0] - 1e-3) < 1e-9);
  }
}

TEST_CASE("identical states and gradients give identical updates") {
  ad::Parameter a("a", Tensor::vector({0.3, 0.7})), b("b", Tensor::vector({0.3, 0.7}));
  optim::Adam oa({&a}, {}), ob({&b}, {});
  for (int i = 0; i < 20; ++i) {
    a.grad = Tensor::vector({std::sin(i), std::cos(i)});
    b.grad = a.grad;
    oa.step();
    ob.step();
    CHECK(a.value == b.value);
  }
}

TEST_CASE("non-finite gradients are rejected without side effects") {
  ad::Parameter p("p", Tensor::vector({1.0, 2.0}));
  optim::Adam adam({&p}, {});
  p.grad = Tensor::vector({0.5, 0.5});
  adam.step();
  const Tensor value = p.value, m = adam.first_moments()[0], v = adam.second_moments()[0];
  p.grad = Tensor::vector({0.5, std::nan("")});
  CHECK_FALSE(adam.step());
  p.grad = Tensor::vector({INFINITY, 0.5});
  CHECK_FALSE(adam.step());
  CHECK(adam.steps() == 1);
  CHECK(p.value == value);
  CHECK(adam.first_moments()[0] == m);
  CHECK(adam.second_moments()[0] == v);
}

TEST_CASE("converges on x^2 from x = 5") {
  ad::Parameter x("x", Tensor::vector({5.0}));
  optim::Adam adam({&x}, {0.01, 0.0, 0.9, 1e-8});
  int steps = 0;
  while (std::abs(x.value[0]) >= 0.1 && steps < 2000) {
    x.zero_grad();
    ad::Graph g;
    g.backward(ad::sum(ad::square(g.parameter(x))));
    adam.step();
    ++steps;
  }
  CHECK(std::abs(x.value[0]) < 0.1);
}
