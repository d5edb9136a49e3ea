#pragma once

#include "mccl/autograd.hpp"
#include "mccl/nn.hpp"

#include <vector>

namespace mccl::optim {

/// Adam with decoupled weight decay.
class AdamW {
 public:
  struct State {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    long step = 0;
  };

  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const nn::ParamList& params, double lr);

  const State& state() const { return state_; }
  void set_state(State s) { state_ = std::move(s); }

 private:
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  State state_;
};

/// 1-cycle policy with cosine annealing: max_lr/div_factor up to max_lr over
/// the first `warmup` fraction of steps, then down to
/// max_lr/(div_factor*final_div_factor).
class OneCycleSchedule {
 public:
  OneCycleSchedule(double max_lr, long total_steps, double warmup = 0.3, double div_factor = 25.0,
                   double final_div_factor = 1e4);

  double lr(long step) const;
  long peak_step() const { return peak_; }
  double initial_lr() const { return initial_; }
  double final_lr() const { return final_; }

 private:
  double max_lr_;
  long total_;
  long peak_;
  double initial_;
  double final_;
};

/// Exponential moving average of parameter values:
/// shadow <- decay * shadow + (1 - decay) * param.
class Ema {
 public:
  Ema(const nn::ParamList& params, double decay);

  void update(const nn::ParamList& params);
  /// Copies the shadow values into `params`, returning the displaced values.
  std::vector<Eigen::MatrixXd> swap_in(const nn::ParamList& params) const;
  static void restore(const nn::ParamList& params, const std::vector<Eigen::MatrixXd>& saved);

  const std::vector<Eigen::MatrixXd>& shadow() const { return shadow_; }
  void set_shadow(std::vector<Eigen::MatrixXd> s) { shadow_ = std::move(s); }
  double decay() const { return decay_; }

 private:
  double decay_;
  std::vector<Eigen::MatrixXd> shadow_;
};

}  // namespace mccl::optim
