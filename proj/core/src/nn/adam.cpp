#include "sam/nn/adam.hpp"

#include <cmath>

namespace sam::nn {

void Adam::add_group(std::vector<Var> params, AdamOptions options) {
  Group g{options, {}};
  for (Var& p : params) {
    Tensor zeros(p.shape());
    g.slots.push_back({std::move(p), zeros, zeros});
  }
  groups_.push_back(std::move(g));
}

void Adam::zero_grad() {
  for (Group& g : groups_)
    for (Slot& s : g.slots) s.param.zero_grad();
}

void Adam::step() {
  ++t_;
  for (Group& g : groups_) {
    const AdamOptions& o = g.options;
    const double c1 = 1.0 - std::pow(o.beta1, t_);
    const double c2 = 1.0 - std::pow(o.beta2, t_);
    for (Slot& s : g.slots) {
      if (!s.param.has_grad()) continue;
      const Tensor& grad = s.param.grad();
      Tensor& value = s.param.mutable_value();
      for (std::size_t i = 0; i < value.size(); ++i) {
        s.m[i] = o.beta1 * s.m[i] + (1 - o.beta1) * grad[i];
        s.v[i] = o.beta2 * s.v[i] + (1 - o.beta2) * grad[i] * grad[i];
        value[i] -= o.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + o.eps);
      }
    }
  }
}

}  // namespace sam::nn
