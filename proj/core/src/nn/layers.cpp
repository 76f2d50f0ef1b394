#include "sam/nn/layers.hpp"

#include <cmath>
#include <memory>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam::nn {

Var ParameterSet::add(const std::string& name, Tensor init) {
  Var v = Var::leaf(std::move(init));
  params_.emplace_back(name, v);
  return v;
}

BatchNormState& ParameterSet::add_batch_norm(const std::string& name, int channels) {
  auto state = std::make_unique<BatchNormState>();
  state->running_mean = Tensor({channels}, 0.0);
  state->running_var = Tensor({channels}, 1.0);
  bn_.emplace_back(name, std::move(state));
  return *bn_.back().second;
}

std::vector<Var> ParameterSet::trainable() const {
  std::vector<Var> out;
  for (const auto& [name, v] : params_) out.push_back(v);
  return out;
}

void ParameterSet::save_to(SambContainer& c, const std::string& prefix) const {
  for (const auto& [name, v] : params_) c.put(prefix + name, v.value());
  for (const auto& [name, s] : bn_) {
    c.put(prefix + name + ".running_mean", s->running_mean);
    c.put(prefix + name + ".running_var", s->running_var);
  }
}

void ParameterSet::load_from(const SambContainer& c, const std::string& prefix) {
  auto fetch = [&](const std::string& name, const Shape& shape) {
    Tensor t = c.tensor(prefix + name);
    if (t.shape() != shape) {
      throw LoadError(fmt::format("array '{}' is {}, expected {}", prefix + name, shape_str(t.shape()), shape_str(shape)));
    }
    return t;
  };
  for (auto& [name, v] : params_) v.mutable_value() = fetch(name, v.shape());
  for (auto& [name, s] : bn_) {
    s->running_mean = fetch(name + ".running_mean", s->running_mean.shape());
    s->running_var = fetch(name + ".running_var", s->running_var.shape());
  }
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().size();
  return n;
}

Conv make_conv(ParameterSet& ps, const std::string& name, int ci, int co, int k, int stride,
               std::mt19937_64& rng, double gain, double bias) {
  const double he = gain * std::sqrt(2.0 / (ci * k * k));
  Conv c;
  c.weight = ps.add(name + ".weight", gain == 0 ? Tensor({co, ci, k, k}) : Tensor::randn({co, ci, k, k}, rng, he));
  c.bias = ps.add(name + ".bias", Tensor({co}, bias));
  c.stride = stride;
  c.padding = k / 2;
  return c;
}

Linear make_linear(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng, double gain) {
  Linear l;
  const double std = gain * std::sqrt(1.0 / in);
  l.weight = ps.add(name + ".weight", gain == 0 ? Tensor({out, in}) : Tensor::randn({out, in}, rng, std));
  l.bias = ps.add(name + ".bias", Tensor({out}));
  return l;
}

}  // namespace sam::nn
