#include "mccl/optim.hpp"

#include "mccl/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mccl::optim {

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(const nn::ParamList& params, double lr) {
  if (state_.m.empty()) {
    for (const auto* p : params) {
      state_.m.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      state_.v.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state_.m.size() != params.size()) throw ConfigError("optimizer state does not match the parameter list");
  ++state_.step;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value *= 1.0 - lr * weight_decay_;
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
}

namespace {

double cos_anneal(double start, double end, double pct) {
  return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
}

}  // namespace

OneCycleSchedule::OneCycleSchedule(double max_lr, long total_steps, double warmup, double div_factor,
                                   double final_div_factor)
    : max_lr_(max_lr),
      total_(std::max(total_steps, 1L)),
      peak_(std::max(1L, std::lround(warmup * static_cast<double>(total_ - 1)))),
      initial_(max_lr / div_factor),
      final_(max_lr / (div_factor * final_div_factor)) {}

double OneCycleSchedule::lr(long step) const {
  step = std::clamp(step, 0L, total_ - 1);
  if (step <= peak_) return cos_anneal(initial_, max_lr_, static_cast<double>(step) / static_cast<double>(peak_));
  const long down = std::max(1L, total_ - 1 - peak_);
  return cos_anneal(max_lr_, final_, static_cast<double>(step - peak_) / static_cast<double>(down));
}

Ema::Ema(const nn::ParamList& params, double decay) : decay_(decay) {
  for (const auto* p : params) shadow_.push_back(p->value);
}

void Ema::update(const nn::ParamList& params) {
  if (decay_ == 1.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * params[i]->value;
}

std::vector<Eigen::MatrixXd> Ema::swap_in(const nn::ParamList& params) const {
  std::vector<Eigen::MatrixXd> saved;
  for (std::size_t i = 0; i < params.size(); ++i) {
    saved.push_back(params[i]->value);
    params[i]->value = shadow_[i];
  }
  return saved;
}

void Ema::restore(const nn::ParamList& params, const std::vector<Eigen::MatrixXd>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
}

}  // namespace mccl::optim
