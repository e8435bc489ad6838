#include "bms/trainer.hpp"

#include <cmath>

#include "bms/ops.hpp"

namespace bms::train {
namespace {

using objectives::KlMode;
using objectives::Variant;

constexpr std::size_t kDataDim = 2;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEvalStream = 0x5EED0000;

nn::MlpSpec make_spec(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                      nn::Activation act, bool spectral) {
  nn::MlpSpec spec;
  spec.layer_sizes.push_back(in);
  spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
  spec.layer_sizes.push_back(out);
  spec.activations.assign(hidden.size(), act);
  spec.final_activation = nn::Activation::linear;
  spec.spectral_norm_all = spectral;
  return spec;
}

optim::AdamConfig adam_config(const TrainConfig& cfg, double lr) {
  return {lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
}

Tensor scalar_tensor(double v) { return Tensor({1}, {v}); }

void append_network(std::vector<io::NamedTensor>& out, const nn::Mlp& net,
                    const optim::Adam& opt) {
  for (const nn::DenseLayer& l : net.layers()) {
    out.push_back({l.weight.name, l.weight.value});
    out.push_back({l.bias.name, l.bias.value});
    if (l.spectral_norm) {
      out.push_back({net.name() + "." + std::to_string(&l - net.layers().data()) + ".u", l.u});
    }
  }
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"opt." + params[i]->name + ".m", opt.first_moments()[i]});
    out.push_back({"opt." + params[i]->name + ".v", opt.second_moments()[i]});
  }
  out.push_back({"opt." + net.name() + ".step", scalar_tensor(static_cast<double>(opt.steps()))});
}

void assign(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw io::CheckpointError("tensor '" + name + "' has shape " + to_string(src.shape()) +
                              ", expected " + to_string(dst.shape()));
  }
  dst = src;
}

void load_network(const std::vector<io::NamedTensor>& in, nn::Mlp& net, optim::Adam& opt) {
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    nn::DenseLayer& l = net.layers()[i];
    assign(l.weight.value, io::find_tensor(in, l.weight.name), l.weight.name);
    assign(l.bias.value, io::find_tensor(in, l.bias.name), l.bias.name);
    if (l.spectral_norm) {
      const std::string name = net.name() + "." + std::to_string(i) + ".u";
      assign(l.u, io::find_tensor(in, name), name);
    }
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string base = "opt." + params[i]->name;
    assign(opt.first_moments()[i], io::find_tensor(in, base + ".m"), base + ".m");
    assign(opt.second_moments()[i], io::find_tensor(in, base + ".v"), base + ".v");
  }
  const std::string step = "opt." + net.name() + ".step";
  opt.set_steps(static_cast<std::uint64_t>(io::find_tensor(in, step).item()));
}

// Row indices of the first posterior sample of every datum.
std::vector<std::size_t> first_sample_rows(std::size_t batch, std::size_t samples) {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * samples;
  return rows;
}

bool finite(double v) { return std::isfinite(v); }

// Applies both optimizers or neither.
bool step_pair(optim::Adam& a, optim::Adam& b) {
  if (!a.grads_finite() || !b.grads_finite()) return false;
  a.step();
  b.step();
  return true;
}

}  // namespace

data::MixtureSpec DataConfig::mixture() const {
  if (kind == "grid") return data::grid_spec(grid_side, grid_spacing, sigma);
  if (kind == "ring") return data::ring_spec(ring_modes, ring_radius, sigma);
  throw std::invalid_argument("data.kind must be 'grid' or 'ring', got '" + kind + "'");
}

void TrainConfig::validate() const {
  objective.validate();
  if (model.latent_dim == 0) throw std::invalid_argument("model.latent_dim must be positive");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  if (eval.samples == 0) throw std::invalid_argument("eval.samples must be positive");
  if (eval.reference_points == 0) throw std::invalid_argument("eval.reference_points must be positive");
  for (double lr_value : {lr.encoder, lr.generator, lr.image_disc, lr.latent_disc}) {
    if (lr_value < 0) throw std::invalid_argument("learning rates must be >= 0");
  }
  data.mixture();
}

ModelBundle::ModelBundle(const TrainConfig& cfg, Rng& init_rng)
    : encoder("R", make_spec(kDataDim, cfg.model.encoder_hidden, 2 * cfg.model.latent_dim,
                             nn::Activation::relu, false)),
      generator("G", make_spec(cfg.model.latent_dim, cfg.model.generator_hidden, kDataDim,
                               nn::Activation::relu, false)),
      image_disc("D_I", make_spec(kDataDim, cfg.model.image_disc_hidden, 1,
                                  nn::Activation::leaky_relu, true)),
      latent_disc("D_L", make_spec(cfg.model.latent_dim, cfg.model.latent_disc_hidden, 1,
                                   nn::Activation::leaky_relu,
                                   cfg.model.latent_disc_spectral_norm)) {
  encoder.init(init_rng);
  generator.init(init_rng);
  image_disc.init(init_rng);
  latent_disc.init(init_rng);
  // warm-up so the first updates already see a near-unit spectral norm
  image_disc.power_iterate(nn::kSpectralWarmup);
  if (cfg.model.latent_disc_spectral_norm) latent_disc.power_iterate(nn::kSpectralWarmup);
  encoder_opt = optim::Adam(encoder.parameters(), adam_config(cfg, cfg.lr.encoder));
  generator_opt = optim::Adam(generator.parameters(), adam_config(cfg, cfg.lr.generator));
  image_disc_opt = optim::Adam(image_disc.parameters(), adam_config(cfg, cfg.lr.image_disc));
  latent_disc_opt = optim::Adam(latent_disc.parameters(), adam_config(cfg, cfg.lr.latent_disc));
}

std::vector<io::NamedTensor> ModelBundle::to_tensors() const {
  std::vector<io::NamedTensor> out;
  append_network(out, encoder, encoder_opt);
  append_network(out, generator, generator_opt);
  append_network(out, image_disc, image_disc_opt);
  append_network(out, latent_disc, latent_disc_opt);
  return out;
}

void ModelBundle::load_tensors(const std::vector<io::NamedTensor>& tensors) {
  load_network(tensors, encoder, encoder_opt);
  load_network(tensors, generator, generator_opt);
  load_network(tensors, image_disc, image_disc_opt);
  load_network(tensors, latent_disc, latent_disc_opt);
}

StepDiagnostics train_step(ModelBundle& b, const Tensor& x, const TrainConfig& cfg, Rng& rng) {
  const objectives::ObjectiveConfig& oc = cfg.objective;
  const Variant variant = oc.variant;
  const std::size_t batch = x.rows();
  const std::size_t d = b.latent_dim();
  const bool adversarial_prior = objectives::uses_encoder(variant) && oc.kl_mode == KlMode::adversarial;
  StepDiagnostics diag;

  // (1) recognition network and generator, jointly
  {
    ad::Graph g;
    ad::Var loss;
    if (objectives::uses_encoder(variant)) {
      const bool deterministic = objectives::deterministic_encoder(variant);
      // identical samples add nothing for a deterministic encoder
      const std::size_t samples = deterministic ? 1 : oc.samples;
      ad::Var xv = g.constant(x);
      const nn::EncoderHeads heads = nn::encoder_heads(b.encoder.forward(g, xv, nn::Mode::train));
      ad::Var z = deterministic
                      ? heads.mean
                      : nn::reparameterize(heads, g.constant(rng.normal({batch * samples, d})), samples);
      ad::Var xhat = b.generator.forward(g, z, nn::Mode::train);
      ad::Var recon = objectives::recon_loglik(xv, xhat, samples, oc.lambda, oc.norm_order);
      ad::Var synth;
      if (objectives::uses_image_discriminator(variant)) {
        synth = ad::reshape(std::as_const(b.image_disc).forward(g, xhat), {batch, samples});
      }
      ad::Var prior;
      if (adversarial_prior) {
        const auto rows = first_sample_rows(batch, samples);
        ad::Var z_enc = samples == 1 ? z : ad::gather_rows(z, rows);
        prior = objectives::adversarial_prior_loss(std::as_const(b.latent_disc).forward(g, z_enc));
      } else {
        prior = objectives::kl_gaussian(heads.mean, heads.log_var);
      }
      loss = objectives::encoder_generator_loss(recon, synth, prior, oc);
    } else {
      ad::Var fake = b.generator.forward(g, g.constant(rng.normal({batch, d})), nn::Mode::train);
      loss = ad::neg(ad::mean(std::as_const(b.image_disc).forward(g, fake)));
    }
    diag.loss_rg = loss.value().item();
    if (finite(diag.loss_rg)) {
      b.encoder_opt.zero_grad();
      b.generator_opt.zero_grad();
      g.backward(loss);
      diag.rg_updated = objectives::uses_encoder(variant)
                            ? step_pair(b.encoder_opt, b.generator_opt)
                            : b.generator_opt.step();
    }
    if (!diag.rg_updated) ++diag.skipped;
  }

  // (2) sample-space discriminator, hinge loss against prior-driven fakes
  if (objectives::uses_image_discriminator(variant)) {
    b.image_disc.power_iterate(1);
    const Tensor fake = b.generator.infer(rng.normal({batch, d}));
    ad::Graph g;
    ad::Var s_real = b.image_disc.forward(g, g.constant(x), nn::Mode::train);
    ad::Var s_fake = b.image_disc.forward(g, g.constant(fake), nn::Mode::train);
    ad::Var loss = objectives::hinge_disc_loss(s_real, s_fake, oc.hinge_a, oc.hinge_b);
    diag.loss_di = loss.value().item();
    if (finite(diag.loss_di)) {
      b.image_disc_opt.zero_grad();
      g.backward(loss);
      diag.di_updated = b.image_disc_opt.step();
    }
    if (!diag.di_updated) ++diag.skipped;
  }

  // (3) latent discriminator, cross-entropy prior vs encoded
  if (adversarial_prior) {
    const Tensor z_prior = rng.normal({batch, d});
    const metrics::Posterior post =
        metrics::MlpEncoder(b.encoder, objectives::deterministic_encoder(variant)).encode(x);
    Tensor z_enc = post.mean;
    if (!objectives::deterministic_encoder(variant)) {
      z_enc = metrics::sample_posterior(post, rng);
    }
    ad::Graph g;
    ad::Var lp = b.latent_disc.forward(g, g.constant(z_prior), nn::Mode::train);
    ad::Var le = b.latent_disc.forward(g, g.constant(z_enc), nn::Mode::train);
    ad::Var loss = objectives::latent_disc_loss(lp, le);
    diag.loss_dl = loss.value().item();
    if (finite(diag.loss_dl)) {
      b.latent_disc_opt.zero_grad();
      g.backward(loss);
      diag.dl_updated = b.latent_disc_opt.step();
    }
    if (!diag.dl_updated) ++diag.skipped;
  }
  return diag;
}

Tensor sample_model(const ModelBundle& bundle, std::size_t n, Rng& rng) {
  return bundle.generator.infer(rng.normal({n, bundle.latent_dim()}));
}

MetricsRecord evaluate(const ModelBundle& bundle, const TrainConfig& cfg, std::size_t iteration,
                       const StepDiagnostics& last) {
  const data::MixtureSpec spec = cfg.data.mixture();
  Rng rng(Rng::derive(cfg.seed, kEvalStream + iteration));
  MetricsRecord rec;
  rec.iteration = iteration;
  const metrics::ModeMetrics mm = metrics::mode_metrics(sample_model(bundle, cfg.eval.samples, rng), spec);
  rec.modes_captured = mm.modes_captured;
  rec.hq_percent = mm.hq_percent;

  const Variant v = cfg.objective.variant;
  rec.loss_rg = last.loss_rg;
  if (objectives::uses_image_discriminator(v)) rec.loss_di = last.loss_di;
  if (objectives::uses_encoder(v) && cfg.objective.kl_mode == KlMode::adversarial) {
    rec.loss_dl = last.loss_dl;
  }
  if (objectives::uses_encoder(v)) {
    const metrics::MlpEncoder enc(bundle.encoder, objectives::deterministic_encoder(v));
    const Tensor reference = data::sample(spec, cfg.eval.reference_points, rng);
    const Tensor held_out = data::sample(spec, cfg.eval.probes, rng);
    const double tau = metrics::mismatch_threshold(enc, reference, held_out, cfg.eval.mismatch_quantile, rng);
    rec.mismatch_count =
        metrics::prior_mismatch(enc, bundle.generator, spec, reference, cfg.eval.probes, tau, rng)
            .mismatch_count;
  }
  if (cfg.eval.ivom) {
    const Tensor targets = data::sample(spec, cfg.eval.ivom_targets, rng);
    rec.ivom = metrics::ivom(bundle.generator, targets, cfg.eval.ivom_config,
                             Rng::derive(cfg.seed, kEvalStream - 1))
                   .mean_sq_distance;
  }
  return rec;
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      mixture_((cfg_.validate(), cfg_.data.mixture())),
      rng_(cfg_.seed),
      bundle_([this] {
        Rng init(Rng::derive(cfg_.seed, kInitStream));
        return ModelBundle(cfg_, init);
      }()) {}

Trainer::Trainer(TrainConfig cfg, const std::vector<io::NamedTensor>& checkpoint)
    : Trainer(std::move(cfg)) {
  bundle_.load_tensors(checkpoint);
  iteration_ = static_cast<std::size_t>(io::find_tensor(checkpoint, "meta.iteration").item());
  const Tensor& state = io::find_tensor(checkpoint, "rng.state");
  std::vector<std::uint32_t> words(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) words[i] = static_cast<std::uint32_t>(state[i]);
  rng_.set_state(words);
}

StepDiagnostics Trainer::step() {
  const Tensor batch = data::sample(mixture_, cfg_.batch_size, rng_);
  StepDiagnostics diag = train_step(bundle_, batch, cfg_, rng_);
  ++iteration_;
  counts_.encoder_generator += diag.rg_updated;
  counts_.image_disc += diag.di_updated;
  counts_.latent_disc += diag.dl_updated;
  counts_.skipped += diag.skipped;
  consecutive_skips_ = diag.skipped ? consecutive_skips_ + 1 : 0;
  if (consecutive_skips_ > kMaxConsecutiveSkips) {
    throw TrainingDiverged("training diverged: " + std::to_string(consecutive_skips_) +
                           " consecutive steps with non-finite losses (iteration " +
                           std::to_string(iteration_) + ")");
  }
  return diag;
}

std::vector<io::NamedTensor> Trainer::checkpoint() const {
  std::vector<io::NamedTensor> out;
  out.push_back({"meta.iteration", scalar_tensor(static_cast<double>(iteration_))});
  out.push_back({"meta.latent_dim", scalar_tensor(static_cast<double>(bundle_.latent_dim()))});
  const auto words = rng_.state();
  Tensor state({words.size()});
  for (std::size_t i = 0; i < words.size(); ++i) state[i] = words[i];
  out.push_back({"rng.state", std::move(state)});
  auto net = bundle_.to_tensors();
  out.insert(out.end(), std::make_move_iterator(net.begin()), std::make_move_iterator(net.end()));
  return out;
}

std::vector<MetricsRecord> run(Trainer& trainer, const TrainHooks& hooks) {
  const TrainConfig& cfg = trainer.config();
  std::vector<MetricsRecord> history;
  StepDiagnostics last;
  while (trainer.iteration() < cfg.max_iters) {
    last = trainer.step();
    const std::size_t it = trainer.iteration();
    if ((cfg.eval_every && it % cfg.eval_every == 0) || it == cfg.max_iters) {
      history.push_back(evaluate(trainer.bundle(), cfg, it, last));
      if (hooks.on_eval) hooks.on_eval(history.back());
    }
    if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(trainer);
    }
  }
  return history;
}

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) {
  Trainer trainer(cfg);
  std::vector<MetricsRecord> history = run(trainer, hooks);
  UpdateCounts counts = trainer.counts();
  return {std::move(trainer.bundle()), std::move(history), counts};
}

}  // namespace bms::train
