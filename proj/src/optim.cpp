#include "vslot/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vslot::nn {

Adam::Adam(ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, p] : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i].second;
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
        p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

Sgd::Sgd(ParamList params, double momentum) : params_(std::move(params)), momentum_(momentum) {
    for (const auto& [name, p] : params_) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
}

void Sgd::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i].second;
        velocity_[i] = momentum_ * velocity_[i] + p.grad;
        p.value -= lr * velocity_[i];
    }
}

double warmup_exponential_lr(int step, double base, int warmup, double decay_rate, int decay_steps) {
    const double ramp = warmup > 0 ? std::min(1.0, static_cast<double>(step + 1) / warmup) : 1.0;
    const double decay = decay_steps > 0 ? std::pow(decay_rate, static_cast<double>(step) / decay_steps) : 1.0;
    return base * ramp * decay;
}

double cosine_lr(int step, double base, int total) {
    if (total <= 0) return base;
    const double frac = std::clamp(static_cast<double>(step) / total, 0.0, 1.0);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace vslot::nn
