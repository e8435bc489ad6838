#include <doctest.h>

#include <cstring>

#include "bms/ops.hpp"
#include "bms/trainer.hpp"
#include "support.hpp"

using namespace bms;
using objectives::Variant;

namespace {

train::TrainConfig small_config(Variant v, std::size_t samples = 3) {
  train::TrainConfig c;
  c.objective.variant = v;
  c.objective.samples = v == Variant::alpha_gan ? 1 : samples;
  c.objective.kl_mode = objectives::default_kl_mode(v);
  c.model.latent_dim = 4;
  c.model.generator_hidden = {16, 16};
  c.model.encoder_hidden = {16};
  c.model.image_disc_hidden = {16};
  c.model.latent_disc_hidden = {16};
  c.batch_size = 16;
  c.max_iters = 40;
  c.eval_every = 20;
  c.eval.samples = 300;
  c.eval.probes = 100;
  c.eval.reference_points = 100;
  return c;
}

std::vector<Tensor> values(const nn::Mlp& net) {
  std::vector<Tensor> out;
  for (const auto* p : net.parameters()) out.push_back(p->value);
  return out;
}

bool same_bits(const std::vector<io::NamedTensor>& a, const std::vector<io::NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].value.shape() != b[i].value.shape()) return false;
    if (std::memcmp(a[i].value.raw(), b[i].value.raw(), a[i].value.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

struct Snapshot {
  std::vector<Tensor> r, g, di, dl;
  explicit Snapshot(const train::ModelBundle& b)
      : r(values(b.encoder)), g(values(b.generator)), di(values(b.image_disc)), dl(values(b.latent_disc)) {}
};

const Variant kAll[] = {Variant::vae,     Variant::wae,         Variant::alpha_gan, Variant::ms,
                        Variant::bms_vae, Variant::bms_vae_gan, Variant::gan_only};

}  // namespace

TEST_CASE("zero learning rates leave every parameter unchanged") {
  for (Variant v : kAll) {
    train::TrainConfig c = small_config(v);
    c.lr = {0.0, 0.0, 0.0, 0.0};
    train::Trainer t(c);
    const Snapshot before(t.bundle());
    for (int i = 0; i < 15; ++i) t.step();
    const Snapshot after(t.bundle());
    INFO(objectives::to_string(v));
    CHECK(before.r == after.r);
    CHECK(before.g == after.g);
    CHECK(before.di == after.di);
    CHECK(before.dl == after.dl);
  }
}

TEST_CASE("variant gating and update isolation") {
  for (Variant v : kAll) {
    const train::TrainConfig c = small_config(v);
    const bool encoder = objectives::uses_encoder(v);
    const bool image = objectives::uses_image_discriminator(v);
    const bool latent = encoder && c.objective.kl_mode == objectives::KlMode::adversarial;
    train::Trainer t(c);
    Rng rng(77);
    for (int i = 0; i < 5; ++i) {
      const Tensor batch = data::sample(t.mixture(), c.batch_size, rng);
      train::ModelBundle& b = t.bundle();
      const Snapshot before(b);
      const train::StepDiagnostics d = train::train_step(b, batch, c, rng);
      const Snapshot after(b);
      INFO(objectives::to_string(v));
      CHECK(d.rg_updated);
      CHECK(d.di_updated == image);
      CHECK(d.dl_updated == latent);
      CHECK((before.r != after.r) == encoder);
      CHECK(before.g != after.g);
      CHECK((before.di != after.di) == image);
      CHECK((before.dl != after.dl) == latent);
    }
    for (int i = 0; i < 7; ++i) t.step();
    CHECK(t.counts().encoder_generator == 7);
    CHECK(t.counts().image_disc == (image ? 7u : 0u));
    CHECK(t.counts().latent_disc == (latent ? 7u : 0u));
    CHECK(t.counts().skipped == 0);
  }
}

TEST_CASE("each update touches only its own networks") {
  const train::TrainConfig base = small_config(Variant::bms_vae_gan);
  struct Case {
    train::LearningRates lr;
    bool r, g, di, dl;
  };
  for (const Case& k : {Case{{1e-3, 0, 0, 0}, true, false, false, false},
                        Case{{0, 1e-3, 0, 0}, false, true, false, false},
                        Case{{0, 0, 1e-3, 0}, false, false, true, false},
                        Case{{0, 0, 0, 1e-3}, false, false, false, true}}) {
    train::TrainConfig c = base;
    c.lr = k.lr;
    train::Trainer t(c);
    const Snapshot before(t.bundle());
    t.step();
    const Snapshot after(t.bundle());
    CHECK((before.r != after.r) == k.r);
    CHECK((before.g != after.g) == k.g);
    CHECK((before.di != after.di) == k.di);
    CHECK((before.dl != after.dl) == k.dl);
  }
}

TEST_CASE("best-of-many routes generator gradient through one reconstruction and one synthetic branch") {
  const train::TrainConfig c = small_config(Variant::bms_vae_gan, 5);
  train::Trainer t(c);
  train::ModelBundle& b = t.bundle();
  Rng rng(5);
  const std::size_t n = 8, T = 5, d = b.latent_dim();
  const Tensor x = data::sample(t.mixture(), n, rng);
  ad::Graph g;
  const nn::EncoderHeads heads = nn::encoder_heads(b.encoder.forward(g, g.constant(x), nn::Mode::train));
  ad::Var z = nn::reparameterize(heads, g.constant(rng.normal({n * T, d})), T);
  ad::Var xhat = g.variable(b.generator.infer(z.value()));
  ad::Var recon = objectives::recon_loglik(g.constant(x), xhat, T, c.objective.lambda, 2);
  ad::Var synth = ad::reshape(std::as_const(b.image_disc).forward(g, xhat), {n, T});
  ad::Var prior = objectives::kl_gaussian(heads.mean, heads.log_var);

  SUBCASE("reconstruction branch alone") {
    ad::Var loss = objectives::bms_loss(recon, g.constant(Tensor({n, T})), prior, c.objective);
    g.backward(loss);
  }
  SUBCASE("synthetic branch alone") {
    objectives::ObjectiveConfig oc = c.objective;
    oc.beta = 0.0;
    ad::Var loss = objectives::bms_loss(g.constant(Tensor({n, T})), synth, prior, oc);
    g.backward(loss);
  }
  const Tensor gx = g.grad(xhat);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t live = 0;
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t row = i * T + s;
      if (gx.at(row, 0) != 0.0 || gx.at(row, 1) != 0.0) ++live;
    }
    CHECK(live == 1);
  }
  // the prior term reaches the encoder heads regardless of selection
  const Tensor gm = g.grad(heads.log_var);
  double total = 0.0;
  for (double v : gm.data()) total += std::abs(v);
  CHECK(total > 0.0);
}

TEST_SUITE("property") {
  TEST_CASE("same seed gives bitwise identical runs over 1000 steps") {
    train::TrainConfig c = small_config(Variant::bms_vae_gan);
    c.seed = 12;
    train::Trainer a(c), b(c);
    for (int i = 0; i < 1000; ++i) {
      const train::StepDiagnostics da = a.step(), db = b.step();
      REQUIRE(std::memcmp(&da.loss_rg, &db.loss_rg, sizeof(double)) == 0);
      REQUIRE(std::memcmp(&da.loss_di, &db.loss_di, sizeof(double)) == 0);
      REQUIRE(std::memcmp(&da.loss_dl, &db.loss_dl, sizeof(double)) == 0);
    }
    CHECK(same_bits(a.checkpoint(), b.checkpoint()));

    c.seed = 13;
    train::Trainer other(c);
    for (int i = 0; i < 10; ++i) other.step();
    CHECK_FALSE(same_bits(a.checkpoint(), other.checkpoint()));
  }
}

TEST_CASE("resuming from a checkpoint replays the uninterrupted trajectory") {
  for (Variant v : {Variant::bms_vae_gan, Variant::wae, Variant::gan_only}) {
    const train::TrainConfig c = small_config(v);
    train::Trainer full(c);
    for (int i = 0; i < 60; ++i) full.step();

    train::Trainer first(c);
    for (int i = 0; i < 35; ++i) first.step();
    std::stringstream stream;
    io::write_checkpoint(stream, first.checkpoint());
    train::Trainer resumed(c, io::read_checkpoint(stream));
    CHECK(resumed.iteration() == 35);
    for (int i = 0; i < 25; ++i) resumed.step();
    CHECK(same_bits(resumed.checkpoint(), full.checkpoint()));
  }
}

TEST_CASE("checkpoint shape mismatch is rejected") {
  train::Trainer t(small_config(Variant::bms_vae_gan));
  train::TrainConfig bigger = small_config(Variant::bms_vae_gan);
  bigger.model.latent_dim = 5;
  CHECK_THROWS_AS(train::Trainer(bigger, t.checkpoint()), io::CheckpointError);
}

TEST_CASE("train loop bookkeeping") {
  train::TrainConfig c = small_config(Variant::bms_vae_gan);
  c.max_iters = 0;
  CHECK(train::train(c).history.empty());

  c.max_iters = 45;
  std::size_t evals = 0, last_iter = 0;
  train::TrainHooks hooks;
  hooks.on_eval = [&](const train::MetricsRecord& r) {
    ++evals;
    last_iter = r.iteration;
  };
  const train::TrainResult r = train::train(c, hooks);
  REQUIRE(r.history.size() == 3);
  CHECK(r.history[0].iteration == 20);
  CHECK(r.history[1].iteration == 40);
  CHECK(r.history[2].iteration == 45);
  CHECK(evals == 3);
  CHECK(last_iter == 45);
  for (const auto& rec : r.history) {
    CHECK(rec.modes_captured <= 25);
    CHECK(rec.hq_percent >= 0.0);
    CHECK(rec.hq_percent <= 100.0);
    CHECK(rec.loss_rg.has_value());
    CHECK(rec.loss_di.has_value());
    CHECK(rec.loss_dl.has_value());
    CHECK(rec.mismatch_count.has_value());
    CHECK_FALSE(rec.ivom.has_value());
  }
  CHECK(r.counts.encoder_generator == 45);

  const train::TrainResult g = train::train([&] {
    train::TrainConfig gc = small_config(Variant::gan_only);
    gc.max_iters = 20;
    return gc;
  }());
  CHECK_FALSE(g.history.back().loss_dl.has_value());
  CHECK_FALSE(g.history.back().mismatch_count.has_value());

  train::TrainConfig vc = small_config(Variant::vae);
  vc.max_iters = 20;
  const train::TrainResult vr = train::train(vc);
  CHECK_FALSE(vr.history.back().loss_di.has_value());
  CHECK_FALSE(vr.history.back().loss_dl.has_value());
}

TEST_CASE("sample_model") {
  train::Trainer t(small_config(Variant::bms_vae_gan));
  train::ModelBundle& b = t.bundle();
  for (auto* p : b.generator.parameters()) p->value.fill(0.0);
  b.generator.layers().back().bias.value = Tensor::vector({0.25, -1.5});
  Rng rng(3);
  const Tensor s = train::sample_model(b, 10, rng);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(s.at(i, 0) == 0.25);
    CHECK(s.at(i, 1) == -1.5);
  }
  CHECK(train::sample_model(b, 0, rng).size() == 0);
  Rng r1(9), r2(9);
  train::Trainer u(small_config(Variant::bms_vae_gan));
  CHECK(train::sample_model(u.bundle(), 20, r1) == train::sample_model(u.bundle(), 20, r2));
}

TEST_CASE("configuration errors") {
  train::TrainConfig c = small_config(Variant::bms_vae_gan);
  c.batch_size = 0;
  CHECK_THROWS(train::Trainer{c});
  c = small_config(Variant::bms_vae_gan);
  c.lr.generator = -1;
  CHECK_THROWS(train::Trainer{c});
  c = small_config(Variant::bms_vae_gan);
  c.data.kind = "spiral";
  CHECK_THROWS(train::Trainer{c});
}
