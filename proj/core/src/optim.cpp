#include "regen/optim.hpp"

#include <cmath>

namespace regen::optim {

Adam::Adam(std::vector<ad::Var> params, AdamOptions opt)
    : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_value();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

Sgd::Sgd(std::vector<ad::Var> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_value();
    auto& vel = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = g[i] + weight_decay_ * w[i];
      vel[i] = momentum_ * vel[i] + d;
      w[i] -= lr * vel[i];
    }
  }
}

double poly_lr(double base_lr, long iter, long max_iter, double power) {
  if (max_iter <= 0 || iter >= max_iter) return 0.0;
  if (iter <= 0) return base_lr;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

}  // namespace regen::optim
