#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bms/adam.hpp"
#include "bms/checkpoint.hpp"
#include "bms/metrics.hpp"
#include "bms/mixture.hpp"
#include "bms/nn.hpp"
#include "bms/objectives.hpp"
#include "bms/rng.hpp"

namespace bms::train {

struct ArchConfig {
  std::size_t latent_dim = 32;
  std::vector<std::size_t> generator_hidden{128, 128, 128};
  std::vector<std::size_t> encoder_hidden{128, 128};
  std::vector<std::size_t> image_disc_hidden{128, 128};
  std::vector<std::size_t> latent_disc_hidden{128, 128, 128};
  bool latent_disc_spectral_norm = false;
};

struct DataConfig {
  std::string kind = "grid";  // grid | ring
  std::size_t grid_side = 5;
  double grid_spacing = 2.0;
  std::size_t ring_modes = 8;
  double ring_radius = 2.0;
  double sigma = 0.05;

  data::MixtureSpec mixture() const;
};

struct LearningRates {
  double encoder = 1e-3;
  double generator = 1e-3;
  double image_disc = 1e-3;
  double latent_disc = 1e-3;
};

struct EvalConfig {
  std::size_t samples = 10000;
  std::size_t probes = 2000;
  std::size_t reference_points = 2000;
  double mismatch_quantile = 0.01;
  bool ivom = false;  // IvOM at every evaluation (slow)
  std::size_t ivom_targets = 200;
  metrics::IvomConfig ivom_config;
};

struct TrainConfig {
  objectives::ObjectiveConfig objective;
  ArchConfig model;
  DataConfig data;
  LearningRates lr;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  std::size_t batch_size = 128;
  std::size_t max_iters = 30000;
  std::size_t eval_every = 1000;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 1;
  EvalConfig eval;

  void validate() const;
};

/// The four networks and one optimizer per network.
class ModelBundle {
 public:
  ModelBundle(const TrainConfig& cfg, Rng& init_rng);
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  std::size_t latent_dim() const { return generator.spec().input_dim(); }

  /// Parameters, spectral-norm state and optimizer moments in checkpoint
  /// naming (`G.0.weight`, `D_I.1.u`, `opt.G.0.weight.m`, `opt.G.step`, ...).
  std::vector<io::NamedTensor> to_tensors() const;
  /// Inverse of to_tensors(); shapes must match this bundle's architecture.
  void load_tensors(const std::vector<io::NamedTensor>& tensors);

  nn::Mlp encoder;      // R
  nn::Mlp generator;    // G
  nn::Mlp image_disc;   // D_I, raw output is log D_I
  nn::Mlp latent_disc;  // D_L, logit of "drawn from the prior"
  optim::Adam encoder_opt;
  optim::Adam generator_opt;
  optim::Adam image_disc_opt;
  optim::Adam latent_disc_opt;
};

/// Thrown when too many consecutive steps produce non-finite losses.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UpdateCounts {
  std::size_t encoder_generator = 0;
  std::size_t image_disc = 0;
  std::size_t latent_disc = 0;
  std::size_t skipped = 0;
};

struct StepDiagnostics {
  double loss_rg = std::numeric_limits<double>::quiet_NaN();
  double loss_di = std::numeric_limits<double>::quiet_NaN();
  double loss_dl = std::numeric_limits<double>::quiet_NaN();
  bool rg_updated = false;
  bool di_updated = false;
  bool dl_updated = false;
  /// Updates that were attempted but rejected for a non-finite loss or gradient.
  std::size_t skipped = 0;
};

/// One iteration: joint R/G update on `batch`, then D_I hinge update (real =
/// `batch`, fakes from the prior), then D_L cross-entropy update. Each update
/// runs on its own graph. Variants without a network skip its update.
StepDiagnostics train_step(ModelBundle& bundle, const Tensor& batch, const TrainConfig& cfg,
                           Rng& rng);

/// z ~ N(0, I) pushed through the generator: [n x data_dim].
Tensor sample_model(const ModelBundle& bundle, std::size_t n, Rng& rng);

struct MetricsRecord {
  std::size_t iteration = 0;
  std::size_t modes_captured = 0;
  double hq_percent = 0.0;
  /// Absent when the variant does not run that update.
  std::optional<double> loss_rg;
  std::optional<double> loss_di;
  std::optional<double> loss_dl;
  std::optional<std::size_t> mismatch_count;
  std::optional<double> ivom;
};

/// Model-quality snapshot; mismatch uses the model's own threshold.
MetricsRecord evaluate(const ModelBundle& bundle, const TrainConfig& cfg, std::size_t iteration,
                       const StepDiagnostics& last);

/// Owns the state of a run: bundle, data/noise stream, iteration counter.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  /// Restores a run written by checkpoint().
  Trainer(TrainConfig cfg, const std::vector<io::NamedTensor>& checkpoint);

  StepDiagnostics step();

  std::size_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  ModelBundle& bundle() { return bundle_; }
  const ModelBundle& bundle() const { return bundle_; }
  const data::MixtureSpec& mixture() const { return mixture_; }
  const UpdateCounts& counts() const { return counts_; }

  std::vector<io::NamedTensor> checkpoint() const;

 private:
  TrainConfig cfg_;
  data::MixtureSpec mixture_;
  Rng rng_;
  ModelBundle bundle_;
  std::size_t iteration_ = 0;
  std::size_t consecutive_skips_ = 0;
  UpdateCounts counts_;
};

inline constexpr std::size_t kMaxConsecutiveSkips = 100;

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_eval;
  std::function<void(const Trainer&)> on_checkpoint;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<MetricsRecord> history;
  UpdateCounts counts;
};

/// Runs max_iters steps from a fresh initialization, evaluating every
/// eval_every steps and at the end.
TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Continues `trainer` until max_iters with the same evaluation schedule.
std::vector<MetricsRecord> run(Trainer& trainer, const TrainHooks& hooks = {});

}  // namespace bms::train
