#pragma once

#include <vector>

#include "sam/nn/autograd.hpp"

namespace sam::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over groups of leaves with per-group learning rates.
class Adam {
 public:
  void add_group(std::vector<Var> params, AdamOptions options);
  void zero_grad();
  /// Applies one update from the gradients currently held by the leaves.
  void step();
  int steps_taken() const noexcept { return t_; }

 private:
  struct Slot {
    Var param;
    Tensor m;
    Tensor v;
  };
  struct Group {
    AdamOptions options;
    std::vector<Slot> slots;
  };
  std::vector<Group> groups_;
  int t_ = 0;
};

}  // namespace sam::nn
