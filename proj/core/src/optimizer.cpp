// SPDX-License-Identifier: Apache-2.0
#include "bgic/optimizer.hpp"

#include <cmath>

#include "bgic/errors.hpp"

namespace bgic {

AdamW::AdamW(std::vector<ad::Parameter*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr <= 0.0) throw ConfigError("adamw: learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ad::Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void AdamW::step(const ad::Gradients& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Parameter& p = *params_[k];
    const ad::Tensor g = grads.at(p);
    g.check_finite("gradient");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                                  config_.weight_decay * p.value[i]);
    }
  }
}

double PlateauScheduler::update(double loss, double current_lr) {
  if (!has_best_ || loss < best_ - 1e-12) {
    best_ = loss;
    has_best_ = true;
    bad_epochs_ = 0;
    return current_lr;
  }
  if (++bad_epochs_ > patience_) {
    bad_epochs_ = 0;
    const double next = current_lr * factor_;
    return next < min_lr_ ? min_lr_ : next;
  }
  return current_lr;
}

void PlateauScheduler::reset() {
  has_best_ = false;
  best_ = 0.0;
  bad_epochs_ = 0;
}

}  // namespace bgic
