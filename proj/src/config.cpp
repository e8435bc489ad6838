#include "bms/config.hpp"

#include <openssl/sha.h>

#include <array>
#include <cstdio>
#include <fstream>

namespace bms::config {
namespace {

using objectives::KlMode;

json sizes(const std::vector<std::size_t>& v) { return json(v); }

const char* type_label(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const json& def, const json& value) {
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_number_unsigned()) return value.is_number_unsigned();
  if (def.is_number()) return value.is_number();
  if (def.is_string()) return value.is_string();
  if (def.is_array()) {
    if (!value.is_array()) return false;
    for (const json& e : value) {
      if (!e.is_number_unsigned()) return false;
    }
    return true;
  }
  return false;
}

void merge(json& target, const json& def, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError("config section '" + (path.empty() ? std::string("<root>") : path) +
                      "' must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!def.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    const json& d = def.at(key);
    if (d.is_object()) {
      merge(target[key], d, value, full);
    } else if (!compatible(d, value)) {
      throw ConfigError("config key '" + full + "' expects a " + type_label(d) + ", got " +
                        value.dump());
    } else {
      target[key] = value;
    }
  }
}

std::vector<std::size_t> get_sizes(const json& j) { return j.get<std::vector<std::size_t>>(); }

}  // namespace

json defaults() {
  json j = to_json(train::TrainConfig{});
  j["objective"]["kl"] = "auto";
  return j;
}

json to_json(const train::TrainConfig& c) {
  const auto& o = c.objective;
  return json{
      {"objective",
       {{"variant", std::string(objectives::to_string(o.variant))},
        {"T", o.samples},
        {"alpha", o.alpha},
        {"beta", o.beta},
        {"lambda", o.lambda},
        {"norm", static_cast<unsigned>(o.norm_order)},
        {"kl", std::string(objectives::to_string(o.kl_mode))},
        {"hinge_a", o.hinge_a},
        {"hinge_b", o.hinge_b}}},
      {"model",
       {{"latent_dim", c.model.latent_dim},
        {"generator_hidden", sizes(c.model.generator_hidden)},
        {"encoder_hidden", sizes(c.model.encoder_hidden)},
        {"image_disc_hidden", sizes(c.model.image_disc_hidden)},
        {"latent_disc_hidden", sizes(c.model.latent_disc_hidden)},
        {"latent_disc_spectral_norm", c.model.latent_disc_spectral_norm}}},
      {"data",
       {{"kind", c.data.kind},
        {"grid_side", c.data.grid_side},
        {"grid_spacing", c.data.grid_spacing},
        {"ring_modes", c.data.ring_modes},
        {"ring_radius", c.data.ring_radius},
        {"sigma", c.data.sigma}}},
      {"optim",
       {{"lr_encoder", c.lr.encoder},
        {"lr_generator", c.lr.generator},
        {"lr_image_disc", c.lr.image_disc},
        {"lr_latent_disc", c.lr.latent_disc},
        {"beta1", c.adam_beta1},
        {"beta2", c.adam_beta2},
        {"eps", c.adam_eps}}},
      {"train",
       {{"batch_size", c.batch_size},
        {"max_iters", c.max_iters},
        {"eval_every", c.eval_every},
        {"checkpoint_every", c.checkpoint_every},
        {"seed", c.seed}}},
      {"eval",
       {{"samples", c.eval.samples},
        {"probes", c.eval.probes},
        {"reference_points", c.eval.reference_points},
        {"mismatch_quantile", c.eval.mismatch_quantile},
        {"ivom", c.eval.ivom},
        {"ivom_targets", c.eval.ivom_targets},
        {"ivom_restarts", c.eval.ivom_config.restarts},
        {"ivom_steps", c.eval.ivom_config.steps},
        {"ivom_lr", c.eval.ivom_config.lr}}},
  };
}

train::TrainConfig from_json(const json& user) {
  const json def = defaults();
  json j = def;
  merge(j, def, user, "");

  train::TrainConfig c;
  try {
    const json& o = j["objective"];
    c.objective.variant = objectives::parse_variant(o["variant"].get<std::string>());
    c.objective.samples = o["T"].get<std::size_t>();
    c.objective.alpha = o["alpha"].get<double>();
    c.objective.beta = o["beta"].get<double>();
    c.objective.lambda = o["lambda"].get<double>();
    c.objective.norm_order = o["norm"].get<int>();
    const auto kl = o["kl"].get<std::string>();
    c.objective.kl_mode = kl == "auto" ? objectives::default_kl_mode(c.objective.variant)
                                       : objectives::parse_kl_mode(kl);
    c.objective.hinge_a = o["hinge_a"].get<double>();
    c.objective.hinge_b = o["hinge_b"].get<double>();

    const json& m = j["model"];
    c.model.latent_dim = m["latent_dim"].get<std::size_t>();
    c.model.generator_hidden = get_sizes(m["generator_hidden"]);
    c.model.encoder_hidden = get_sizes(m["encoder_hidden"]);
    c.model.image_disc_hidden = get_sizes(m["image_disc_hidden"]);
    c.model.latent_disc_hidden = get_sizes(m["latent_disc_hidden"]);
    c.model.latent_disc_spectral_norm = m["latent_disc_spectral_norm"].get<bool>();

    const json& d = j["data"];
    c.data.kind = d["kind"].get<std::string>();
    c.data.grid_side = d["grid_side"].get<std::size_t>();
    c.data.grid_spacing = d["grid_spacing"].get<double>();
    c.data.ring_modes = d["ring_modes"].get<std::size_t>();
    c.data.ring_radius = d["ring_radius"].get<double>();
    c.data.sigma = d["sigma"].get<double>();

    const json& p = j["optim"];
    c.lr.encoder = p["lr_encoder"].get<double>();
    c.lr.generator = p["lr_generator"].get<double>();
    c.lr.image_disc = p["lr_image_disc"].get<double>();
    c.lr.latent_disc = p["lr_latent_disc"].get<double>();
    c.adam_beta1 = p["beta1"].get<double>();
    c.adam_beta2 = p["beta2"].get<double>();
    c.adam_eps = p["eps"].get<double>();

    const json& t = j["train"];
    c.batch_size = t["batch_size"].get<std::size_t>();
    c.max_iters = t["max_iters"].get<std::size_t>();
    c.eval_every = t["eval_every"].get<std::size_t>();
    c.checkpoint_every = t["checkpoint_every"].get<std::size_t>();
    c.seed = t["seed"].get<std::uint64_t>();

    const json& e = j["eval"];
    c.eval.samples = e["samples"].get<std::size_t>();
    c.eval.probes = e["probes"].get<std::size_t>();
    c.eval.reference_points = e["reference_points"].get<std::size_t>();
    c.eval.mismatch_quantile = e["mismatch_quantile"].get<double>();
    c.eval.ivom = e["ivom"].get<bool>();
    c.eval.ivom_targets = e["ivom_targets"].get<std::size_t>();
    c.eval.ivom_config.restarts = e["ivom_restarts"].get<std::size_t>();
    c.eval.ivom_config.steps = e["ivom_steps"].get<std::size_t>();
    c.eval.ivom_config.lr = e["ivom_lr"].get<double>();

    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("invalid config: ") + ex.what());
  }
  return c;
}

json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ConfigError("cannot parse config file '" + path.string() + "': " + ex.what());
  }
}

void apply_override(json& user, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &user;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  // validates the key path and type right away
  json probe = defaults();
  merge(probe, defaults(), user, "");
}

train::TrainConfig resolve(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides) {
  json user = path.empty() ? json::object() : load_file(path);
  for (const std::string& o : overrides) apply_override(user, o);
  return from_json(user);
}

std::string content_hash(const json& j) {
  const std::string body = j.dump();
  const std::string blob = "blob " + std::to_string(body.size()) + '\0' + body;
  std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest.data());
  std::string hex;
  hex.reserve(2 * digest.size());
  char buf[3];
  for (unsigned char b : digest) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    hex += buf;
  }
  return hex;
}

}  // namespace bms::config
