#include "bms/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "bms/ops.hpp"
#include "bms/simd/kernels.hpp"

namespace bms::nn {
namespace {

constexpr double kSigmaFloor = 1e-12;

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

// W u for W [in x out], u [out] -> [in]
Tensor apply(const Tensor& w, const Tensor& u) {
  const std::size_t in = w.shape()[0];
  const std::size_t out = w.shape()[1];
  Tensor r({in});
  for (std::size_t i = 0; i < in; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < out; ++j) s += w[i * out + j] * u[j];
    r[i] = s;
  }
  return r;
}

// W^T v for W [in x out], v [in] -> [out]
Tensor apply_transposed(const Tensor& w, const Tensor& v) {
  const std::size_t in = w.shape()[0];
  const std::size_t out = w.shape()[1];
  Tensor r({out});
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) r[j] += w[i * out + j] * v[i];
  }
  return r;
}

bool relu_family(Activation a) {
  return a == Activation::relu || a == Activation::leaky_relu ||
         a == Activation::softplus;
}

ad::Var activate(ad::Var h, Activation a) {
  switch (a) {
    case Activation::linear: return h;
    case Activation::relu: return ad::relu(h);
    case Activation::leaky_relu: return ad::leaky_relu(h, kLeakySlope);
    case Activation::tanh: return ad::tanh(h);
    case Activation::softplus: return ad::softplus(h);
  }
  return h;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (Activation a : {Activation::linear, Activation::relu, Activation::leaky_relu,
                       Activation::tanh, Activation::softplus}) {
    if (name == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("MlpSpec: need at least input and output sizes");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
  }
  if (activations.size() != layer_sizes.size() - 2) {
    throw std::invalid_argument("MlpSpec: " + std::to_string(layer_sizes.size() - 2) +
                                " hidden layers but " +
                                std::to_string(activations.size()) + " activations");
  }
}

DenseLayer::DenseLayer(std::string name, std::size_t in, std::size_t out,
                       Activation act, bool sn)
    : weight(name + ".weight", Tensor({in, out})),
      bias(name + ".bias", Tensor({out})),
      activation(act),
      spectral_norm(sn) {
  if (spectral_norm) {
    u = Tensor({out}, 1.0 / std::sqrt(static_cast<double>(out)));
  }
}

void DenseLayer::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_dim());
  const double fan_out = static_cast<double>(out_dim());
  const double stddev = relu_family(activation) ? std::sqrt(2.0 / fan_in)
                                                : std::sqrt(2.0 / (fan_in + fan_out));
  rng.fill_normal(weight.value.data());
  for (double& w : weight.value.data()) w *= stddev;
  bias.value.fill(0.0);
  weight.zero_grad();
  bias.zero_grad();
  if (spectral_norm) {
    rng.fill_normal(u.data());
    const double n = norm(u);
    for (double& x : u.data()) x /= n;
  }
}

double DenseLayer::power_iterate(std::size_t steps) {
  if (!spectral_norm) throw std::logic_error("power_iterate on a layer without spectral norm");
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor v = apply(weight.value, u);
    const double nv = norm(v);
    if (nv < kSigmaFloor) break;
    for (double& x : v.data()) x /= nv;
    Tensor next = apply_transposed(weight.value, v);
    const double nu = norm(next);
    if (nu < kSigmaFloor) break;
    for (double& x : next.data()) x /= nu;
    u = std::move(next);
  }
  return sigma_estimate();
}

double DenseLayer::sigma_estimate() const {
  // v = W u / |W u| makes v^T W u = |W u|.
  return norm(apply(weight.value, u));
}

Tensor DenseLayer::effective_weight() const {
  if (!spectral_norm) return weight.value;
  const double sigma = sigma_estimate();
  degenerate = sigma < kSigmaFloor;
  if (degenerate) return weight.value;
  Tensor w = weight.value;
  for (double& x : w.data()) x /= sigma;
  return w;
}

ad::Var DenseLayer::spectral_weight(ad::Graph& g, ad::Var w) const {
  Tensor v = apply(weight.value, u);
  const double sigma = norm(v);
  degenerate = sigma < kSigmaFloor;
  if (degenerate) return w;
  for (double& x : v.data()) x /= sigma;
  // sigma(W) = v^T W u with u, v held fixed; d sigma / dW = v u^T.
  const std::size_t in = in_dim();
  const std::size_t out = out_dim();
  Tensor outer({in, out});
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) outer[i * out + j] = v[i] * u[j];
  }
  ad::Var sig = ad::sum(ad::mul(w, g.constant(std::move(outer))));
  return ad::div(w, sig);
}

ad::Var DenseLayer::forward(ad::Graph& g, ad::Var x, Mode mode) {
  if (mode == Mode::frozen) return std::as_const(*this).forward(g, x);
  check_input(x);
  ad::Var w = g.parameter(weight);
  ad::Var b = g.parameter(bias);
  if (spectral_norm) w = spectral_weight(g, w);
  return activate(ad::add_bias(ad::matmul(x, w), b), activation);
}

ad::Var DenseLayer::forward(ad::Graph& g, ad::Var x) const {
  check_input(x);
  ad::Var w = g.constant(effective_weight());
  ad::Var b = g.constant(bias.value);
  return activate(ad::add_bias(ad::matmul(x, w), b), activation);
}

void DenseLayer::check_input(ad::Var x) const {
  if (x.value().ndim() != 2 || x.value().shape()[1] != in_dim()) {
    throw ShapeError(weight.name + ": input " + bms::to_string(x.value().shape()) +
                     " does not match layer input width " + std::to_string(in_dim()));
  }
}

Mlp::Mlp(std::string name, MlpSpec spec) : name_(std::move(name)), spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t n = spec_.layer_sizes.size() - 1;
  layers_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Activation act = i + 1 == n ? spec_.final_activation : spec_.activations[i];
    layers_.emplace_back(name_ + "." + std::to_string(i), spec_.layer_sizes[i],
                         spec_.layer_sizes[i + 1], act, spec_.spectral_norm_all);
  }
}

void Mlp::init(Rng& rng) {
  for (DenseLayer& l : layers_) l.init(rng);
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x, Mode mode) {
  ad::Var h = x;
  for (DenseLayer& l : layers_) h = l.forward(g, h, mode);
  return h;
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x) const {
  ad::Var h = x;
  for (const DenseLayer& l : layers_) h = l.forward(g, h);
  return h;
}

Tensor Mlp::infer(const Tensor& x) const {
  ad::Graph g;
  return forward(g, g.constant(x)).value();
}

void Mlp::power_iterate(std::size_t steps) {
  for (DenseLayer& l : layers_) {
    if (l.spectral_norm) l.power_iterate(steps);
  }
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

EncoderHeads encoder_heads(ad::Var trunk) {
  const Tensor& t = trunk.value();
  if (t.ndim() != 2 || t.shape()[1] % 2 != 0) {
    throw ShapeError("encoder_heads: trunk width must be even, got " + bms::to_string(t.shape()));
  }
  const std::size_t d = t.shape()[1] / 2;
  return {ad::slice_cols(trunk, 0, d),
          ad::clamp(ad::slice_cols(trunk, d, 2 * d), kLogVarMin, kLogVarMax)};
}

ad::Var reparameterize(const EncoderHeads& heads, ad::Var eps, std::size_t samples) {
  ad::Var mean = ad::repeat_rows(heads.mean, samples);
  ad::Var stddev = ad::repeat_rows(ad::exp(ad::mul_scalar(heads.log_var, 0.5)), samples);
  return ad::add(mean, ad::mul(stddev, eps));
}

}  // namespace bms::nn
