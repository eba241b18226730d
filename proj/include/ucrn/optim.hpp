#pragma once

#include <unordered_map>
#include <vector>

#include "ucrn/tensor.hpp"

namespace ucrn {

// SGD / Adam over an explicit parameter list. Moment buffers are keyed by the
// parameter's storage, so the same state object can be reused across steps as
// long as the parameter tensors stay alive.
class Optimizer {
 public:
  enum class Kind { sgd, adam };

  Optimizer(Kind kind, double lr) : kind_(kind), lr_(lr) {}

  // applies one update from accumulated grads, then clears them
  void step(const std::vector<Tensor>& params);

  long step_count() const { return step_count_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  Kind kind_;
  double lr_;
  long step_count_ = 0;
  std::unordered_map<TensorData*, Moments> moments_;
};

}  // namespace ucrn
