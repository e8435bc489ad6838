#include "bms/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "bms/ops.hpp"

namespace bms::objectives {
namespace {

constexpr std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::vae, "VAE"},
    {Variant::wae, "WAE"},
    {Variant::alpha_gan, "ALPHA_GAN"},
    {Variant::ms, "MS"},
    {Variant::bms_vae, "BMS_VAE"},
    {Variant::bms_vae_gan, "BMS_VAE_GAN"},
    {Variant::gan_only, "GAN_ONLY"},
};

std::size_t sample_count(ad::Var per_sample) {
  const Tensor& t = per_sample.value();
  if (t.ndim() != 2) {
    throw ShapeError("objective: expected [batch x T] input, got " + bms::to_string(t.shape()));
  }
  return t.shape()[1];
}

ad::Var clamped_log(ad::Var prob) {
  return ad::log(ad::clamp(prob, kProbClamp, 1.0 - kProbClamp));
}

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [value, name] : kVariantNames) {
    if (value == v) return name;
  }
  return "?";
}

std::string_view to_string(KlMode m) {
  return m == KlMode::analytic ? "analytic" : "adversarial";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [value, n] : kVariantNames) {
    if (n == name) return value;
  }
  throw std::invalid_argument("unknown objective variant '" + std::string(name) + "'");
}

KlMode parse_kl_mode(std::string_view name) {
  if (name == "analytic") return KlMode::analytic;
  if (name == "adversarial") return KlMode::adversarial;
  throw std::invalid_argument("unknown kl_mode '" + std::string(name) + "'");
}

KlMode default_kl_mode(Variant v) {
  switch (v) {
    case Variant::wae:
    case Variant::alpha_gan:
    case Variant::bms_vae_gan:
      return KlMode::adversarial;
    default:
      return KlMode::analytic;
  }
}

bool uses_image_discriminator(Variant v) {
  return v == Variant::alpha_gan || v == Variant::bms_vae_gan || v == Variant::gan_only;
}

bool uses_encoder(Variant v) { return v != Variant::gan_only; }

bool deterministic_encoder(Variant v) { return v == Variant::wae; }

void ObjectiveConfig::validate() const {
  if (samples < 1) throw std::invalid_argument("objective.T must be >= 1");
  if (alpha < 0 || beta < 0 || lambda < 0) {
    throw std::invalid_argument("objective.alpha, beta and lambda must be >= 0");
  }
  if (norm_order != 1 && norm_order != 2) {
    throw std::invalid_argument("objective.norm_order must be 1 or 2");
  }
  if (variant == Variant::bms_vae_gan && !(alpha > 0 && beta > 0)) {
    throw std::invalid_argument("BMS_VAE_GAN requires alpha > 0 and beta > 0");
  }
}

ad::Var recon_loglik(ad::Var x, ad::Var xhat, std::size_t samples, double lambda,
                     int norm_order) {
  if (norm_order != 1 && norm_order != 2) {
    throw DomainError("recon_loglik: norm order must be 1 or 2, got " +
                      std::to_string(norm_order));
  }
  if (samples == 0) throw ShapeError("recon_loglik: T must be >= 1");
  const Tensor& xv = x.value();
  if (xv.ndim() != 2) throw ShapeError("recon_loglik: x must be [batch x D]");
  const std::size_t batch = xv.shape()[0];
  const std::size_t dim = xv.shape()[1];
  if (xhat.value().size() != batch * samples * dim) {
    throw ShapeError("recon_loglik: reconstructions " + bms::to_string(xhat.value().shape()) +
                     " do not match " + std::to_string(batch) + " x " +
                     std::to_string(samples) + " x " + std::to_string(dim));
  }
  ad::Var flat = xhat.value().ndim() == 2 ? xhat : ad::reshape(xhat, {batch * samples, dim});
  ad::Var diff = ad::sub(flat, ad::repeat_rows(x, samples));
  ad::Var dist = ad::row_norm(diff, norm_order);
  return ad::reshape(ad::mul_scalar(dist, -lambda), {batch, samples});
}

ad::Var kl_gaussian(ad::Var mean, ad::Var log_var) {
  if (mean.shape() != log_var.shape()) {
    throw ShapeError("kl_gaussian: mean " + bms::to_string(mean.shape()) + " vs log_var " +
                     bms::to_string(log_var.shape()));
  }
  const double batch = static_cast<double>(mean.value().rows());
  ad::Var terms = ad::sub(ad::add(ad::square(mean), ad::exp(log_var)), log_var);
  ad::Var total = ad::add_scalar(terms, -1.0);
  return ad::mul_scalar(ad::sum(total), 0.5 / batch);
}

ad::Var adversarial_prior_loss(ad::Var dl_logits_encoded) {
  return ad::neg(ad::mean(clamped_log(ad::sigmoid(dl_logits_encoded))));
}

ad::Var latent_disc_loss(ad::Var dl_logits_prior, ad::Var dl_logits_encoded) {
  ad::Var real_term = ad::mean(clamped_log(ad::sigmoid(dl_logits_prior)));
  ad::Var fake_term = ad::mean(clamped_log(ad::sigmoid(ad::neg(dl_logits_encoded))));
  return ad::neg(ad::add(real_term, fake_term));
}

ad::Var hinge_disc_loss(ad::Var s_real, ad::Var s_fake, double a, double b) {
  ad::Var real_term = ad::mean(ad::relu(ad::add_scalar(ad::neg(s_real), a)));
  ad::Var fake_term = ad::mean(ad::relu(ad::add_scalar(s_fake, b)));
  return ad::add(real_term, fake_term);
}

GanLosses gan_only_losses(ad::Var s_real, ad::Var s_fake, double a, double b) {
  return {ad::neg(ad::mean(s_fake)), hinge_disc_loss(s_real, s_fake, a, b)};
}

ad::Var bms_loss(ad::Var recon, ad::Var synth, ad::Var prior, const ObjectiveConfig& cfg) {
  sample_count(recon);
  if (synth.shape() != recon.shape()) {
    throw ShapeError("bms_loss: synthetic term " + bms::to_string(synth.shape()) +
                     " vs reconstruction " + bms::to_string(recon.shape()));
  }
  ad::Var best = ad::mul_scalar(ad::max(recon, 1), cfg.beta);
  ad::Var worst = ad::mul_scalar(ad::min(synth, 1), cfg.alpha);
  return ad::add(ad::neg(ad::mean(ad::add(best, worst))), prior);
}

ad::Var ms_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg) {
  const double log_t = std::log(static_cast<double>(sample_count(recon)));
  ad::Var bound = ad::add_scalar(ad::logsumexp(recon, 1), -log_t);
  return ad::add(ad::neg(ad::mul_scalar(ad::mean(bound), cfg.beta)), prior);
}

ad::Var alpha_gan_loss(ad::Var recon, ad::Var synth, ad::Var prior,
                       const ObjectiveConfig& cfg) {
  sample_count(recon);
  if (synth.shape() != recon.shape()) {
    throw ShapeError("alpha_gan_loss: synthetic term " + bms::to_string(synth.shape()) +
                     " vs reconstruction " + bms::to_string(recon.shape()));
  }
  ad::Var per_sample =
      ad::add(ad::mul_scalar(recon, cfg.beta), ad::mul_scalar(synth, cfg.alpha));
  return ad::add(ad::neg(ad::mean(per_sample)), prior);
}

ad::Var vae_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg) {
  sample_count(recon);
  return ad::add(ad::neg(ad::mul_scalar(ad::mean(recon), cfg.beta)), prior);
}

ad::Var bms_vae_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg) {
  sample_count(recon);
  return ad::add(ad::neg(ad::mul_scalar(ad::mean(ad::max(recon, 1)), cfg.beta)), prior);
}

ad::Var encoder_generator_loss(ad::Var recon, ad::Var synth, ad::Var prior,
                               const ObjectiveConfig& cfg) {
  switch (cfg.variant) {
    case Variant::vae:
    case Variant::wae:
      return vae_loss(recon, prior, cfg);
    case Variant::ms:
      return ms_loss(recon, prior, cfg);
    case Variant::bms_vae:
      return bms_vae_loss(recon, prior, cfg);
    case Variant::alpha_gan:
      return alpha_gan_loss(recon, synth, prior, cfg);
    case Variant::bms_vae_gan:
      return bms_loss(recon, synth, prior, cfg);
    case Variant::gan_only:
      break;
  }
  throw std::invalid_argument("encoder_generator_loss: GAN_ONLY has no encoder objective");
}

}  // namespace bms::objectives
