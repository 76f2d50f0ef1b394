#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sam/nn/autograd.hpp"
#include "sam/nn/ops.hpp"
#include "sam/samb.hpp"

namespace sam::nn {

/// Named trainable tensors plus non-trainable buffers of a model.
class ParameterSet {
 public:
  Var add(const std::string& name, Tensor init);
  BatchNormState& add_batch_norm(const std::string& name, int channels);

  std::vector<Var> trainable() const;
  void save_to(SambContainer& c, const std::string& prefix = "") const;
  /// Overwrites values from `c`; shapes must match. Throws LoadError naming the array.
  void load_from(const SambContainer& c, const std::string& prefix = "");
  std::size_t parameter_count() const;

 private:
  std::vector<std::pair<std::string, Var>> params_;
  // Stable addresses: layers keep pointers to their state.
  std::vector<std::pair<std::string, std::unique_ptr<BatchNormState>>> bn_;
};

struct Conv {
  Var weight;
  Var bias;
  int stride = 1;
  int padding = 1;

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, {stride, padding}); }
};

/// He-initialised k x k convolution; `gain` scales the init (0 gives zeros).
Conv make_conv(ParameterSet& ps, const std::string& name, int ci, int co, int k, int stride,
               std::mt19937_64& rng, double gain = 1.0, double bias = 0.0);

struct Linear {
  Var weight;
  Var bias;

  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

Linear make_linear(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng,
                   double gain = 1.0);

}  // namespace sam::nn
