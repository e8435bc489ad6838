#include "bms/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "bms/adam.hpp"
#include "bms/ops.hpp"
#include "bms/simd/kernels.hpp"

namespace bms::metrics {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Tensor transpose(const Tensor& t) {
  const std::size_t r = t.rows();
  const std::size_t c = t.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t[i * c + j];
  }
  return out;
}

}  // namespace

ModeMetrics mode_metrics(const Tensor& samples, const data::MixtureSpec& spec,
                         double threshold_sigmas) {
  if (samples.rows() == 0 || samples.size() == 0) {
    throw std::invalid_argument("mode_metrics: empty sample set");
  }
  if (samples.ndim() != 2 || samples.shape()[1] != 2) {
    throw ShapeError("mode_metrics: samples must be [n x 2], got " + to_string(samples.shape()));
  }
  const double radius = threshold_sigmas * spec.sigma;
  std::vector<bool> captured(spec.centers.size(), false);
  ModeMetrics m;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto a = data::nearest_center(spec, samples[2 * i], samples[2 * i + 1]);
    if (a.distance <= radius) {
      ++m.hq_count;
      captured[a.mode] = true;
    }
  }
  m.modes_captured = static_cast<std::size_t>(std::count(captured.begin(), captured.end(), true));
  m.hq_percent = 100.0 * static_cast<double>(m.hq_count) / static_cast<double>(samples.rows());
  return m;
}

Posterior MlpEncoder::encode(const Tensor& x) const {
  const Tensor trunk = net_->infer(x);
  const std::size_t d = trunk.cols() / 2;
  Posterior p{Tensor({trunk.rows(), d}), Tensor({trunk.rows(), d})};
  for (std::size_t r = 0; r < trunk.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      p.mean[r * d + j] = trunk[r * 2 * d + j];
      p.log_var[r * d + j] =
          deterministic_ ? nn::kLogVarMin
                         : std::clamp(trunk[r * 2 * d + d + j], nn::kLogVarMin, nn::kLogVarMax);
    }
  }
  return p;
}

std::vector<double> marginal_posterior_logdensity(const Posterior& reference,
                                                  const Tensor& z_query) {
  const std::size_t m = reference.mean.rows();
  const std::size_t d = reference.mean.cols();
  const std::size_t n = z_query.rows();
  if (m == 0) throw std::invalid_argument("marginal posterior needs reference points");
  if (z_query.cols() != d) {
    throw ShapeError("marginal_posterior_logdensity: query width " +
                     std::to_string(z_query.cols()) + " vs latent " + std::to_string(d));
  }
  // -1/2 sum_d (z_d - mu_jd)^2 w_jd = -1/2 [z^2 . w_j - 2 z . (mu w)_j + mu_j^2 . w_j]
  Tensor w({m, d});
  Tensor mw({m, d});
  std::vector<double> constant(m);
  for (std::size_t j = 0; j < m; ++j) {
    double c = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double lv = reference.log_var[j * d + k];
      const double mu = reference.mean[j * d + k];
      const double inv = std::exp(-lv);
      w[j * d + k] = inv;
      mw[j * d + k] = mu * inv;
      c += mu * mu * inv + lv + kLog2Pi;
    }
    constant[j] = c;
  }
  const Tensor wt = transpose(w);
  const Tensor mwt = transpose(mw);
  Tensor z2({n, d});
  for (std::size_t i = 0; i < z2.size(); ++i) z2[i] = z_query[i] * z_query[i];
  Tensor quad({n, m});
  Tensor cross({n, m});
  const auto& k = simd::kernels();
  k.gemm(n, m, d, z2.raw(), d, 1, wt.raw(), quad.raw(), false);
  k.gemm(n, m, d, z_query.raw(), d, 1, mwt.raw(), cross.raw(), false);

  std::vector<double> out(n);
  const double log_m = std::log(static_cast<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double e = -0.5 * (quad[i * m + j] - 2.0 * cross[i * m + j] + constant[j]);
      quad[i * m + j] = e;
      peak = std::max(peak, e);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(quad[i * m + j] - peak);
    out[i] = peak + std::log(s) - log_m;
  }
  return out;
}

std::vector<double> marginal_posterior_logdensity(const Encoder& encoder,
                                                  const Tensor& z_query,
                                                  const Tensor& reference_x) {
  return marginal_posterior_logdensity(encoder.encode(reference_x), z_query);
}

std::vector<double> prior_logdensity(const Tensor& z) {
  const std::size_t d = z.cols();
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += z[i * d + k] * z[i * d + k];
    out[i] = -0.5 * (s + static_cast<double>(d) * kLog2Pi);
  }
  return out;
}

Tensor sample_posterior(const Posterior& posterior, Rng& rng) {
  Tensor z = rng.normal(posterior.mean.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = posterior.mean[i] + std::exp(0.5 * posterior.log_var[i]) * z[i];
  }
  return z;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto idx = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
  return values[idx];
}

double mismatch_threshold(const Encoder& encoder, const Tensor& reference_x,
                          const Tensor& encoded_x, double q, Rng& rng) {
  const Posterior reference = encoder.encode(reference_x);
  const Tensor z = sample_posterior(encoder.encode(encoded_x), rng);
  return quantile(marginal_posterior_logdensity(reference, z), q);
}

MismatchReport prior_mismatch(const Encoder& encoder, const nn::Mlp& generator,
                              const data::MixtureSpec& spec, const Tensor& reference_x,
                              std::size_t n_probe, double tau, Rng& rng) {
  const Posterior reference = encoder.encode(reference_x);
  const std::size_t d = reference.mean.cols();
  const Tensor probes = rng.normal({n_probe, d});
  const std::vector<double> prior = prior_logdensity(probes);
  const std::vector<double> posterior = marginal_posterior_logdensity(reference, probes);
  const double median = n_probe ? quantile(prior, 0.5) : 0.0;

  MismatchReport report;
  report.probes = n_probe;
  report.tau = tau;
  std::vector<double> flagged;
  for (std::size_t i = 0; i < n_probe; ++i) {
    if (!(prior[i] > median)) continue;
    ++report.prior_likely;
    if (posterior[i] < tau) {
      ++report.mismatch_count;
      flagged.insert(flagged.end(), probes.raw() + i * d, probes.raw() + (i + 1) * d);
    }
  }
  report.flagged_fraction =
      report.prior_likely ? static_cast<double>(report.mismatch_count) / static_cast<double>(report.prior_likely)
                          : 0.0;
  report.flagged_z = Tensor({report.mismatch_count, d}, std::move(flagged));
  if (report.mismatch_count > 0) {
    report.decoded = generator.infer(report.flagged_z);
    const ModeMetrics mm = mode_metrics(report.decoded, spec);
    report.decoded_non_hq_fraction = 1.0 - mm.hq_percent / 100.0;
  } else {
    report.decoded = Tensor({0, generator.spec().output_dim()});
  }
  return report;
}

IvomResult ivom(const nn::Mlp& generator, const Tensor& targets, const IvomConfig& cfg,
                std::uint64_t seed) {
  const std::size_t k = targets.rows();
  const std::size_t dim = targets.cols();
  const std::size_t d = generator.spec().input_dim();
  const std::size_t r = cfg.restarts;
  if (r == 0) throw std::invalid_argument("ivom: restarts must be >= 1");
  if (dim != generator.spec().output_dim()) {
    throw ShapeError("ivom: target width does not match generator output");
  }
  const std::size_t rows = k * r;

  ad::Parameter z("ivom.z", Tensor({rows, d}));
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t s = 0; s < r; ++s) {
      Rng init(Rng::derive(Rng::derive(seed, t), s));
      init.fill_normal(std::span<double>(z.value.raw() + (t * r + s) * d, d));
    }
  }
  Tensor expanded({rows, dim});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(targets.raw() + (i / r) * dim, dim, expanded.raw() + i * dim);
  }
  std::vector<bool> alive(rows, true);
  optim::Adam opt({&z}, {cfg.lr, 0.9, 0.999, 1e-8});

  auto distances = [&](ad::Graph& g, ad::Var zv) {
    ad::Var out = generator.forward(g, zv);
    return ad::sum(ad::square(ad::sub(out, g.constant(expanded))), 1);
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ad::Graph g;
    ad::Var dist = distances(g, g.parameter(z));
    const Tensor& dv = dist.value();
    for (std::size_t i = 0; i < rows; ++i) {
      if (!std::isfinite(dv[i])) alive[i] = false;
    }
    // Dead rows get zero upstream weight so they cannot poison the sweep.
    Tensor mask({rows});
    for (std::size_t i = 0; i < rows; ++i) mask[i] = alive[i] ? 1.0 : 0.0;
    ad::Var loss = ad::sum(ad::mul(dist, g.constant(mask)));
    if (!std::isfinite(loss.value().item())) break;
    opt.zero_grad();
    g.backward(loss);
    for (std::size_t i = 0; i < rows; ++i) {
      bool finite = true;
      for (std::size_t j = 0; j < d; ++j) finite = finite && std::isfinite(z.grad[i * d + j]);
      if (!finite) {
        alive[i] = false;
        std::fill_n(z.grad.raw() + i * d, d, 0.0);
      }
    }
    opt.step();
  }

  IvomResult result;
  const Tensor out = generator.infer(z.value);
  result.per_target.assign(k, std::numeric_limits<double>::infinity());
  result.closest = Tensor({k, dim});
  for (std::size_t i = 0; i < rows; ++i) {
    double dist = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = out[i * dim + j] - expanded[i * dim + j];
      dist += diff * diff;
    }
    if (!alive[i] || !std::isfinite(dist)) {
      ++result.discarded;
      continue;
    }
    const std::size_t t = i / r;
    if (dist < result.per_target[t]) {
      result.per_target[t] = dist;
      std::copy_n(out.raw() + i * dim, dim, result.closest.raw() + t * dim);
    }
  }
  double total = 0.0;
  for (double v : result.per_target) total += v;
  result.mean_sq_distance = k ? total / static_cast<double>(k) : 0.0;
  return result;
}

}  // namespace bms::metrics
