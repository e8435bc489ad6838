#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bms/graph.hpp"

namespace bms::optim {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction on both moments over a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ad::Parameter*> params, AdamConfig config);

  /// Applies one update from the parameters' accumulated gradients. A
  /// non-finite gradient rejects the whole step: nothing changes and the step
  /// counter does not advance.
  bool step();
  void zero_grad();
  bool grads_finite() const;

  std::uint64_t steps() const noexcept { return step_; }
  void set_steps(std::uint64_t s) noexcept { step_ = s; }
  const AdamConfig& config() const noexcept { return config_; }
  AdamConfig& config() noexcept { return config_; }

  const std::vector<ad::Parameter*>& params() const noexcept { return params_; }
  std::vector<Tensor>& first_moments() noexcept { return m_; }
  std::vector<Tensor>& second_moments() noexcept { return v_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
};

}  // namespace bms::optim
