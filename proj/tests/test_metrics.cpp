#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bms/metrics.hpp"
#include "support.hpp"

using namespace bms;
using bms::testing::uniform;

namespace {

// q(z | x): coordinate 0 is N(shift + slope |x_0|, sd0^2), the rest N(0, 1)
class ToyEncoder final : public metrics::Encoder {
 public:
  ToyEncoder(std::size_t d, double shift, double slope, double sd0)
      : d_(d), shift_(shift), slope_(slope), sd0_(sd0) {}
  metrics::Posterior encode(const Tensor& x) const override {
    metrics::Posterior p{Tensor({x.rows(), d_}), Tensor({x.rows(), d_})};
    for (std::size_t i = 0; i < x.rows(); ++i) {
      p.mean.at(i, 0) = shift_ + slope_ * std::abs(x.at(i, 0));
      p.log_var.at(i, 0) = 2 * std::log(sd0_);
    }
    return p;
  }

 private:
  std::size_t d_;
  double shift_, slope_, sd0_;
};

metrics::ModeMetrics brute_force(const Tensor& s, const data::MixtureSpec& spec, double k) {
  std::vector<bool> hit(spec.centers.size(), false);
  metrics::ModeMetrics out;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t m = 0; m < spec.centers.size(); ++m) {
      const double dx = s.at(i, 0) - spec.centers[m][0], dy = s.at(i, 1) - spec.centers[m][1];
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist < best_d) {
        best_d = dist;
        best = m;
      }
    }
    if (best_d <= k * spec.sigma) {
      ++out.hq_count;
      hit[best] = true;
    }
  }
  out.modes_captured = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
  out.hq_percent = s.rows() ? 100.0 * static_cast<double>(out.hq_count) / static_cast<double>(s.rows()) : 0.0;
  return out;
}

nn::Mlp constant_generator(std::size_t d, double cx, double cy, Rng& rng) {
  nn::Mlp g("G", {{d, 2}, {}, nn::Activation::linear, false});
  g.init(rng);
  g.layers()[0].weight.value.fill(0.0);
  g.layers()[0].bias.value = Tensor::vector({cx, cy});
  return g;
}

}  // namespace

TEST_CASE("mode_metrics examples") {
  const data::MixtureSpec grid = data::grid_spec();
  Tensor centers({25, 2});
  for (std::size_t m = 0; m < 25; ++m) {
    centers.at(m, 0) = grid.centers[m][0];
    centers.at(m, 1) = grid.centers[m][1];
  }
  const metrics::ModeMetrics all = metrics::mode_metrics(centers, grid);
  CHECK(all.modes_captured == 25);
  CHECK(all.hq_percent == 100.0);

  const Tensor far = Tensor::matrix(2, 2, {1.0, 1.0, -3.0, 3.0});
  const metrics::ModeMetrics none = metrics::mode_metrics(far, grid);
  CHECK(none.modes_captured == 0);
  CHECK(none.hq_count == 0);

  const Tensor one_mode = Tensor::matrix(3, 2, {0.0, 0.0, 0.1, 0.0, 0.0, 0.149});
  CHECK(metrics::mode_metrics(one_mode, grid).modes_captured == 1);
  CHECK(metrics::mode_metrics(one_mode, grid).hq_percent == 100.0);
  CHECK(metrics::mode_metrics(Tensor::matrix(1, 2, {0.0, 0.151}), grid).hq_count == 0);
  CHECK_THROWS(metrics::mode_metrics(Tensor({0, 2}), grid));
}

TEST_SUITE("property") {
  TEST_CASE("mode_metrics matches a brute-force oracle exactly") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
      const data::MixtureSpec spec = trial % 2 ? data::grid_spec() : data::ring_spec();
      const std::size_t n = 1 + rng.index(60);
      Tensor s({n, 2});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = spec.centers[rng.index(spec.centers.size())];
        const double spread = 0.3 * rng.uniform();
        s.at(i, 0) = c[0] + spread * rng.normal();
        s.at(i, 1) = c[1] + spread * rng.normal();
      }
      const double k = 1.0 + 3.0 * rng.uniform();
      const metrics::ModeMetrics got = metrics::mode_metrics(s, spec, k);
      const metrics::ModeMetrics want = brute_force(s, spec, k);
      CHECK(got.modes_captured == want.modes_captured);
      CHECK(got.hq_count == want.hq_count);
      CHECK(got.hq_percent == want.hq_percent);
    }
  }
}

TEST_CASE("mode_metrics invariances") {
  Rng rng(32);
  const data::MixtureSpec grid = data::grid_spec();
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor s = uniform({40, 2}, rng, -4.5, 4.5);
    Tensor shuffled({40, 2});
    std::vector<std::size_t> perm(40);
    for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
    for (std::size_t i = 39; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    for (std::size_t i = 0; i < 40; ++i) {
      shuffled.at(i, 0) = s.at(perm[i], 0);
      shuffled.at(i, 1) = s.at(perm[i], 1);
    }
    const auto a = metrics::mode_metrics(s, grid, 10.0), b = metrics::mode_metrics(shuffled, grid, 10.0);
    CHECK(a.hq_count == b.hq_count);
    CHECK(a.modes_captured == b.modes_captured);
    std::size_t previous_hq = 0, previous_modes = 0;
    for (double k : {0.5, 1.0, 3.0, 6.0, 12.0}) {
      const auto m = metrics::mode_metrics(s, grid, k);
      CHECK(m.hq_count >= previous_hq);
      CHECK(m.modes_captured >= previous_modes);
      previous_hq = m.hq_count;
      previous_modes = m.modes_captured;
    }
  }
}

TEST_CASE("quantile") {
  CHECK(metrics::quantile({5, 1, 3, 2, 4}, 0.5) == 3);
  CHECK(metrics::quantile({5, 1, 3, 2, 4}, 0.0) == 1);
  CHECK(metrics::quantile({5, 1, 3, 2, 4}, 1.0) == 5);
}

TEST_CASE("marginal posterior density") {
  Rng rng(33);
  const metrics::Posterior standard{Tensor({1, 3}), Tensor({1, 3})};
  const Tensor z = rng.normal({20, 3});
  const auto q = metrics::marginal_posterior_logdensity(standard, z);
  const auto p = metrics::prior_logdensity(z);
  for (std::size_t i = 0; i < 20; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < 3; ++k) sq += z.at(i, k) * z.at(i, k);
    const double oracle = -0.5 * sq - 1.5 * std::log(2 * std::numbers::pi);
    CHECK(p[i] == doctest::Approx(oracle).epsilon(1e-13));
    CHECK(q[i] == doctest::Approx(oracle).epsilon(1e-13));
  }

  const Tensor far = Tensor::matrix(1, 3, {100, 0, 0});
  CHECK(metrics::marginal_posterior_logdensity(standard, far)[0] < -1000);

  // three-component mixture against a direct evaluation
  metrics::Posterior mix{Tensor::matrix(3, 2, {0, 0, 2, -1, -1, 1.5}),
                         Tensor::matrix(3, 2, {0, -1, 0.5, 0.2, -2, 0})};
  const Tensor zq = uniform({50, 2}, rng, -3, 3);
  const auto lq = metrics::marginal_posterior_logdensity(mix, zq);
  for (std::size_t i = 0; i < 50; ++i) {
    double dens = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      double comp = 1.0;
      for (std::size_t k = 0; k < 2; ++k) {
        const double var = std::exp(mix.log_var.at(j, k));
        const double dz = zq.at(i, k) - mix.mean.at(j, k);
        comp *= std::exp(-0.5 * dz * dz / var) / std::sqrt(2 * std::numbers::pi * var);
      }
      dens += comp / 3.0;
    }
    CHECK(lq[i] == doctest::Approx(std::log(dens)).epsilon(1e-12));
  }

  // integrates to one on a grid covering +-8 around the components
  const double h = 0.04;
  const int cells = 450;
  Tensor pts({static_cast<std::size_t>(cells) * cells, 2});
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      pts.at(i * cells + j, 0) = -9 + (i + 0.5) * h;
      pts.at(i * cells + j, 1) = -9 + (j + 0.5) * h;
    }
  }
  double mass = 0.0;
  for (double v : metrics::marginal_posterior_logdensity(mix, pts)) mass += std::exp(v) * h * h;
  CHECK(mass == doctest::Approx(1.0).epsilon(0.02));

  // Monte Carlo: fraction of posterior samples in a box vs box mass from the density
  const Tensor draws = metrics::sample_posterior(mix, rng);
  CHECK(draws.shape() == Shape{3, 2});
  std::size_t inside = 0;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const std::size_t j = rng.index(3);
    const metrics::Posterior one{Tensor::matrix(1, 2, {mix.mean.at(j, 0), mix.mean.at(j, 1)}),
                                 Tensor::matrix(1, 2, {mix.log_var.at(j, 0), mix.log_var.at(j, 1)})};
    const Tensor zz = metrics::sample_posterior(one, rng);
    if (zz[0] > -0.5 && zz[0] < 1.0 && zz[1] > -1.0 && zz[1] < 1.0) ++inside;
  }
  double box = 0.0;
  const double hb = 0.01;
  Tensor bp({150 * 200, 2});
  for (int i = 0; i < 150; ++i) {
    for (int j = 0; j < 200; ++j) {
      bp.at(i * 200 + j, 0) = -0.5 + (i + 0.5) * hb;
      bp.at(i * 200 + j, 1) = -1.0 + (j + 0.5) * hb;
    }
  }
  for (double v : metrics::marginal_posterior_logdensity(mix, bp)) box += std::exp(v) * hb * hb;
  CHECK(static_cast<double>(inside) / n == doctest::Approx(box).epsilon(0.05));
}

TEST_CASE("prior mismatch on toy encoders") {
  Rng rng(34);
  const data::MixtureSpec grid = data::grid_spec();
  const std::size_t d = 4;
  const nn::Mlp gen = constant_generator(d, 0.0, 0.0, rng);
  const Tensor ref = data::sample(grid, 1000, rng);
  const Tensor held = data::sample(grid, 1000, rng);

  const ToyEncoder matched(d, 0.0, 0.0, 1.0);
  const double tau_m = metrics::mismatch_threshold(matched, ref, held, 0.01, rng);
  const auto rm = metrics::prior_mismatch(matched, gen, grid, ref, 2000, tau_m, rng);
  CHECK(rm.prior_likely >= 999);
  CHECK(rm.prior_likely <= 1000);
  CHECK(rm.flagged_fraction < 0.01);

  // posteriors confined to z_0 > 0
  const ToyEncoder shifted(d, 0.8, 0.4, 0.3);
  const double tau_s = metrics::mismatch_threshold(shifted, ref, held, 0.01, rng);
  const auto rs = metrics::prior_mismatch(shifted, gen, grid, ref, 2000, tau_s, rng);
  CHECK(rs.flagged_fraction > 0.3);
  CHECK(rs.flagged_z.rows() == rs.mismatch_count);
  CHECK(rs.decoded.rows() == rs.mismatch_count);
  // every flagged probe decodes to the origin, which is a grid center
  CHECK(rs.decoded_non_hq_fraction == 0.0);
}

TEST_CASE("IvOM") {
  Rng rng(35);
  SUBCASE("targets in the generator's range are recovered") {
    nn::Mlp g("G", {{2, 2}, {}, nn::Activation::linear, false});
    g.init(rng);
    g.layers()[0].weight.value = Tensor::matrix(2, 2, {1.0, 0.3, -0.2, 0.8});
    const Tensor targets = g.infer(rng.normal({10, 2}));
    const auto r = metrics::ivom(g, targets, {3, 500, 0.05}, 7);
    CHECK(r.mean_sq_distance < 1e-4);
    CHECK(r.discarded == 0);
  }
  SUBCASE("constant generator has a closed form") {
    const nn::Mlp g = constant_generator(3, 0.5, -1.0, rng);
    const Tensor targets = uniform({20, 2}, rng, -2, 2);
    const auto r = metrics::ivom(g, targets, {2, 20, 0.05}, 7);
    double oracle = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      oracle += std::pow(targets.at(i, 0) - 0.5, 2) + std::pow(targets.at(i, 1) + 1.0, 2);
    }
    CHECK(r.mean_sq_distance == doctest::Approx(oracle / 20).epsilon(1e-12));
  }
  SUBCASE("more restarts never do worse") {
    nn::Mlp g("G", {{2, 16, 2}, {nn::Activation::tanh}, nn::Activation::linear, false});
    g.init(rng);
    const Tensor targets = uniform({15, 2}, rng, -1, 1);
    const auto few = metrics::ivom(g, targets, {2, 50, 0.05}, 11);
    const auto many = metrics::ivom(g, targets, {6, 50, 0.05}, 11);
    for (std::size_t t = 0; t < 15; ++t) CHECK(many.per_target[t] <= few.per_target[t]);
    CHECK(many.mean_sq_distance <= few.mean_sq_distance);
    const auto again = metrics::ivom(g, targets, {6, 50, 0.05}, 11);
    CHECK(again.per_target == many.per_target);
  }
}
