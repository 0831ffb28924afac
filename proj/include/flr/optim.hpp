#pragma once

#include <vector>

#include "flr/params.hpp"

namespace flr {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global gradient-norm clip; 0 disables.
  double max_grad_norm = 1.0;
};

// Decoupled-weight-decay Adam over a fixed parameter set. Parameters
// without a gradient are skipped for that step.
class AdamW {
 public:
  AdamW(ParamSet params, AdamWConfig config);

  // Applies one update from the current gradients and returns the
  // pre-clip global gradient norm.
  double step();
  void zero_grad() { params_.zero_grad(); }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }
  long steps() const { return t_; }

 private:
  ParamSet params_;
  AdamWConfig config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace flr
