// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bgic/tape.hpp"

namespace bgic {

struct AdamWConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

class AdamW {
 public:
  AdamW(std::vector<ad::Parameter*> params, AdamWConfig config);

  void step(const ad::Gradients& grads);
  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Cuts the learning rate by `factor` after `patience` epochs without
// improvement. State resets per training stage.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.1, int patience = 5, double min_lr = 1e-7)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}

  double update(double loss, double current_lr);
  void reset();

 private:
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = 0.0;
  bool has_best_ = false;
  int bad_epochs_ = 0;
};

}  // namespace bgic
