#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sam/image.hpp"
#include "sam/nn/autograd.hpp"

namespace sam {

/// VGG-style feature pyramid with per-tap linear weights, the backbone of the
/// LPIPS distance. Stages are separated by 2x max pooling; the activation at
/// the end of every stage is a tap.
class PerceptualNet {
 public:
  struct Stage {
    std::vector<int> channels;  // output channels of each 3x3 conv + ReLU
  };

  /// Small randomly initialised (but fixed) network for 32x32 fixtures.
  static std::shared_ptr<const PerceptualNet> toy(std::uint64_t seed = 0x1e5a11);
  /// VGG16 trunk with linear calibration weights from a SAMB checkpoint
  /// (`conv.{i}.weight/bias`, `lin.{t}`).
  static std::shared_ptr<const PerceptualNet> load(const std::filesystem::path& path);
  /// "toy" or a checkpoint path.
  static std::shared_ptr<const PerceptualNet> from_source(const std::string& source);

  const std::string& id() const { return id_; }
  std::size_t tap_count() const { return lin_.size(); }

  /// Unit-normalised tap features of a [3,H,W] image in [-1,1].
  std::vector<nn::Var> normalized_taps(const nn::Var& image) const;
  /// Per-tap maps sum_c w_c (a_c - b_c)^2, each resized to (h, w), summed.
  nn::Var distance_map(const std::vector<nn::Var>& a, const std::vector<nn::Var>& b, int h,
                       int w) const;

 private:
  PerceptualNet() = default;

  std::string id_;
  std::vector<Stage> stages_;
  std::vector<nn::Var> weights_;
  std::vector<nn::Var> biases_;
  std::vector<nn::Tensor> lin_;
};

using PerceptualHandle = std::shared_ptr<const PerceptualNet>;

/// Process-wide default network used when none is given explicitly.
PerceptualHandle default_perceptual_net();

struct LpipsResult {
  double value = 0.0;
  nn::Tensor map;  // [H,W]
};

/// LPIPS distance between two images: the spatial map and its mean.
LpipsResult lpips_vgg(const Image& x, const Image& y, const PerceptualNet& net);
LpipsResult lpips_vgg(const Image& x, const Image& y);

/// Differentiable LPIPS against a fixed target whose features are cached.
class LpipsTarget {
 public:
  LpipsTarget(PerceptualHandle net, const Image& target);
  /// [1,H,W] spatial distance map of `image` to the target.
  nn::Var map(const nn::Var& image) const;
  const Image& target() const { return target_; }

 private:
  PerceptualHandle net_;
  Image target_;
  std::vector<nn::Var> taps_;
};

}  // namespace sam
