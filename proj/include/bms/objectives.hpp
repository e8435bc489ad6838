#pragma once

// Training objectives as pure functions of network outputs.
//
// Every function returns a scalar loss to minimize; the maximization
// objectives (evidence bounds, synthetic likelihood terms) appear negated.
// Inputs that vary over posterior samples are [batch x T] matrices whose
// row b holds the T samples drawn for datum b.

#include <cstddef>
#include <string_view>

#include "bms/graph.hpp"

namespace bms::objectives {

enum class Variant { vae, wae, alpha_gan, ms, bms_vae, bms_vae_gan, gan_only };
enum class KlMode { analytic, adversarial };

std::string_view to_string(Variant v);
std::string_view to_string(KlMode m);
Variant parse_variant(std::string_view name);
KlMode parse_kl_mode(std::string_view name);

/// Adversarial (latent discriminator) for WAE, ALPHA_GAN and BMS_VAE_GAN;
/// closed-form Gaussian KL for the others.
KlMode default_kl_mode(Variant v);
/// Whether the variant trains the sample-space discriminator.
bool uses_image_discriminator(Variant v);
/// Whether the variant has a recognition network at all.
bool uses_encoder(Variant v);
/// WAE uses a deterministic encoder: samples collapse onto the mean.
bool deterministic_encoder(Variant v);

struct ObjectiveConfig {
  Variant variant = Variant::bms_vae_gan;
  std::size_t samples = 10;  // T
  double alpha = 1.0;        // synthetic-likelihood weight
  double beta = 1.0;         // reconstruction weight
  double lambda = 10.0;      // reconstruction sharpness
  int norm_order = 2;
  KlMode kl_mode = KlMode::adversarial;
  double hinge_a = 0.1;
  double hinge_b = 0.1;

  /// Throws std::invalid_argument on a violated constraint.
  void validate() const;
};

/// Probability clamp applied before every log of a latent-discriminator output.
inline constexpr double kProbClamp = 1e-7;

/// log p(x | z_i) = -lambda * ||x - xhat_i||_n with the constant dropped.
/// x is [batch x D]; xhat is [batch*T x D] (or [batch x T x D]) with the T
/// reconstructions of datum b in rows b*T..b*T+T-1. Returns [batch x T].
ad::Var recon_loglik(ad::Var x, ad::Var xhat, std::size_t samples, double lambda,
                     int norm_order);

/// 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2), averaged over the batch.
ad::Var kl_gaussian(ad::Var mean, ad::Var log_var);

/// Encoder-side prior term from latent-discriminator logits on encoded z:
/// -mean log D_L(z), D_L = sigmoid(logit) clamped to [1e-7, 1 - 1e-7].
ad::Var adversarial_prior_loss(ad::Var dl_logits_encoded);

/// Latent discriminator cross-entropy:
/// -(mean log D_L(z_prior) + mean log(1 - D_L(z_encoded))).
ad::Var latent_disc_loss(ad::Var dl_logits_prior, ad::Var dl_logits_encoded);

/// mean max(0, a - s_real) + mean max(0, b + s_fake), s = log D_I.
ad::Var hinge_disc_loss(ad::Var s_real, ad::Var s_fake, double a, double b);

struct GanLosses {
  ad::Var generator;
  ad::Var discriminator;
};
/// Generator: -mean log D_I(G(z)); discriminator: the hinge loss.
GanLosses gan_only_losses(ad::Var s_real, ad::Var s_fake, double a, double b);

/// -mean_b [alpha * min_i s_bi + beta * max_i r_bi] + prior
ad::Var bms_loss(ad::Var recon, ad::Var synth, ad::Var prior, const ObjectiveConfig& cfg);

/// -beta * mean_b [logsumexp_i r_bi - log T] + prior
ad::Var ms_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg);

/// -mean_{b,i} [beta * r_bi + alpha * s_bi] + prior
ad::Var alpha_gan_loss(ad::Var recon, ad::Var synth, ad::Var prior,
                       const ObjectiveConfig& cfg);

/// -beta * mean_{b,i} r_bi + prior (the per-sample evidence bound; also the
/// WAE reconstruction objective).
ad::Var vae_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg);

/// -beta * mean_b max_i r_bi + prior
ad::Var bms_vae_loss(ad::Var recon, ad::Var prior, const ObjectiveConfig& cfg);

/// Dispatches on cfg.variant. `synth` is ignored by variants without a
/// synthetic term and may be default-constructed for them.
ad::Var encoder_generator_loss(ad::Var recon, ad::Var synth, ad::Var prior,
                               const ObjectiveConfig& cfg);

}  // namespace bms::objectives
