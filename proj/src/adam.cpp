#include "bms/adam.hpp"

#include <cmath>

#include "bms/simd/kernels.hpp"

namespace bms::optim {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const ad::Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

bool Adam::grads_finite() const {
  for (const ad::Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape() || !p->grad.all_finite()) return false;
  }
  return true;
}

bool Adam::step() {
  if (!grads_finite()) return false;
  ++step_;
  const double t = static_cast<double>(step_);
  const simd::AdamArgs args{
      config_.lr,
      config_.beta1,
      config_.beta2,
      config_.eps,
      1.0 - std::pow(config_.beta1, t),
      1.0 - std::pow(config_.beta2, t),
  };
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    k.adam(p.value.size(), args, p.value.raw(), p.grad.raw(), m_[i].raw(), v_[i].raw());
  }
  return true;
}

void Adam::zero_grad() {
  for (ad::Parameter* p : params_) p->zero_grad();
}

}  // namespace bms::optim
