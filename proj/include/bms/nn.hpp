#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "bms/graph.hpp"
#include "bms/rng.hpp"

namespace bms::nn {

enum class Activation { linear, relu, leaky_relu, tanh, softplus };

inline constexpr double kLeakySlope = 0.2;

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Whether a forward pass exposes the parameters to the gradient sweep.
/// Frozen networks still pass gradients through to their inputs.
enum class Mode { train, frozen };

struct MlpSpec {
  /// input width, hidden widths..., output width
  std::vector<std::size_t> layer_sizes;
  /// one per hidden layer
  std::vector<Activation> activations;
  Activation final_activation = Activation::linear;
  bool spectral_norm_all = false;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  void validate() const;
};

/// Power iterations run on freshly initialized spectral layers. Square layers
/// with a small singular-value gap need tens of steps to settle within 5%.
inline constexpr std::size_t kSpectralWarmup = 50;

class DenseLayer {
 public:
  DenseLayer(std::string name, std::size_t in, std::size_t out,
             Activation activation, bool spectral_norm);

  std::size_t in_dim() const { return weight.value.shape()[0]; }
  std::size_t out_dim() const { return weight.value.shape()[1]; }

  /// He scaling for the relu family, Xavier otherwise; zero bias. Spectral
  /// layers also draw a fresh unit u vector.
  void init(Rng& rng);

  /// Advances the persistent power iteration by `steps` and returns the
  /// current largest-singular-value estimate.
  double power_iterate(std::size_t steps = 1);

  /// Rayleigh-quotient estimate of sigma_max(W) at the current u vector.
  double sigma_estimate() const;

  /// W / sigma_hat for spectral layers, W otherwise. A vanishing estimate
  /// (below 1e-12) leaves W unchanged and sets `degenerate`.
  Tensor effective_weight() const;

  ad::Var forward(ad::Graph& g, ad::Var x, Mode mode);
  /// Frozen forward pass.
  ad::Var forward(ad::Graph& g, ad::Var x) const;

  ad::Parameter weight;  // [in x out]
  ad::Parameter bias;    // [out]
  Activation activation;
  bool spectral_norm;
  Tensor u;  // [out], present iff spectral_norm
  mutable bool degenerate = false;

 private:
  ad::Var spectral_weight(ad::Graph& g, ad::Var w) const;
  void check_input(ad::Var x) const;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, MlpSpec spec);

  void init(Rng& rng);
  ad::Var forward(ad::Graph& g, ad::Var x, Mode mode);
  ad::Var forward(ad::Graph& g, ad::Var x) const;
  /// Forward pass outside of any training graph.
  Tensor infer(const Tensor& x) const;
  void power_iterate(std::size_t steps = 1);

  const std::string& name() const { return name_; }
  const MlpSpec& spec() const { return spec_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  std::string name_;
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
};

/// Posterior parameters from the recognition trunk.
struct EncoderHeads {
  ad::Var mean;     // [batch x d_z]
  ad::Var log_var;  // [batch x d_z], clamped to [-10, 10]
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Splits a [batch x 2 d_z] trunk output into mean and clamped log-variance.
EncoderHeads encoder_heads(ad::Var trunk);

/// z = mean + exp(log_var / 2) * eps, with every row of mean/log_var repeated
/// `samples` times; eps is [batch * samples x d_z].
ad::Var reparameterize(const EncoderHeads& heads, ad::Var eps, std::size_t samples);

}  // namespace bms::nn
