#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "bms/mixture.hpp"
#include "bms/nn.hpp"
#include "bms/rng.hpp"

namespace bms::metrics {

struct ModeMetrics {
  std::size_t modes_captured = 0;
  std::size_t hq_count = 0;
  double hq_percent = 0.0;
};

/// A sample is high quality when its nearest center lies within
/// `threshold_sigmas` standard deviations; a mode is captured when at least
/// one high-quality sample is assigned to it.
ModeMetrics mode_metrics(const Tensor& samples, const data::MixtureSpec& spec,
                         double threshold_sigmas = 3.0);

/// Diagonal Gaussian posteriors, one row per datum.
struct Posterior {
  Tensor mean;
  Tensor log_var;
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Posterior encode(const Tensor& x) const = 0;
};

/// Wraps a recognition network. Deterministic encoders report the clamp
/// floor as their log-variance.
class MlpEncoder final : public Encoder {
 public:
  MlpEncoder(const nn::Mlp& net, bool deterministic) : net_(&net), deterministic_(deterministic) {}
  Posterior encode(const Tensor& x) const override;

 private:
  const nn::Mlp* net_;
  bool deterministic_;
};

/// log q(z) for q(z) = 1/m sum_j N(z; mean_j, diag exp(log_var_j)).
std::vector<double> marginal_posterior_logdensity(const Posterior& reference,
                                                  const Tensor& z_query);
std::vector<double> marginal_posterior_logdensity(const Encoder& encoder,
                                                  const Tensor& z_query,
                                                  const Tensor& reference_x);

/// log N(z; 0, I) per row.
std::vector<double> prior_logdensity(const Tensor& z);

/// Draws one z from q(z | x) for each row of x.
Tensor sample_posterior(const Posterior& posterior, Rng& rng);

/// Low-density threshold: the `quantile` of log q evaluated at encoded
/// held-out points (z drawn from q(z | x) for x in `encoded_x`).
double mismatch_threshold(const Encoder& encoder, const Tensor& reference_x,
                          const Tensor& encoded_x, double quantile, Rng& rng);

struct MismatchReport {
  std::size_t probes = 0;
  std::size_t prior_likely = 0;     // probes with prior log-density above the median
  std::size_t mismatch_count = 0;   // prior-likely probes with log q below tau
  double flagged_fraction = 0.0;    // mismatch_count / prior_likely
  double decoded_non_hq_fraction = 0.0;
  double tau = 0.0;
  Tensor flagged_z;
  Tensor decoded;
};

/// Probes z ~ p(z) and flags those that are likely under the prior but
/// unlikely under the marginal posterior; flagged z are decoded through the
/// generator and scored against the mixture.
MismatchReport prior_mismatch(const Encoder& encoder, const nn::Mlp& generator,
                              const data::MixtureSpec& spec, const Tensor& reference_x,
                              std::size_t n_probe, double tau, Rng& rng);

struct IvomConfig {
  std::size_t restarts = 10;
  std::size_t steps = 500;
  double lr = 0.05;
};

struct IvomResult {
  double mean_sq_distance = 0.0;
  std::vector<double> per_target;  // best squared distance per target
  Tensor closest;                  // generator output achieving it
  std::size_t discarded = 0;       // restarts dropped for non-finite values
};

/// For every target, runs `restarts` Adam searches over z ~ p(z) initial
/// points minimizing ||G(z) - x||^2 and keeps the best. Restart r of target t
/// starts from a point that depends only on (seed, t, r).
IvomResult ivom(const nn::Mlp& generator, const Tensor& targets, const IvomConfig& cfg,
                std::uint64_t seed);

/// Nearest-rank quantile of a sample.
double quantile(std::vector<double> values, double q);

}  // namespace bms::metrics
