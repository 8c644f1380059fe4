#pragma once

#include "tvdb/autodiff.hpp"

#include <vector>

namespace tvdb {

// Adaptive-moment optimiser with decoupled weight decay (AdamW).
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
  };

  explicit AdamW(Options options) : options_(options) {}

  // Updates `params[i]` in place from `grads[i]`. Slots are matched by position,
  // so callers must pass parameters in a stable order.
  void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const Options& options() const { return options_; }
  long steps_taken() const { return step_; }

 private:
  Options options_;
  long step_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

}  // namespace tvdb
