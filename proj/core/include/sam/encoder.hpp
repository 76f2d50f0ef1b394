#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sam/inversion.hpp"
#include "sam/nn/layers.hpp"

namespace sam {

struct EncoderSpec {
  int space = 0;               // ordinal; 0 is the code space
  int input_channels = 4;      // RGB plus the space's region mask
  int truncation_resolution;   // spatial side where the backbone stops
  int output_channels;         // feature channels, or rows * dim for the code space

  nlohmann::json to_json() const;
  static EncoderSpec from_json(const nlohmann::json& j);
};

/// Residual convolutional backbone that halves resolution until it reaches the
/// target layer's side, then projects. The projection starts at zero, so an
/// untrained encoder reproduces the optimizer's starting point.
class Encoder {
 public:
  Encoder(const LayeredGenerator& g, int space, std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }
  /// [4,H,W] input -> codes [rows,dim] for the code space, otherwise a feature delta.
  nn::Var forward(const nn::Var& input) const;
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

 private:
  struct Block {
    nn::Conv down;  // stride 2; unused (empty) for the first block
    nn::Conv a, b;
  };

  EncoderSpec spec_;
  nn::Shape out_shape_;
  nn::Tensor code_offset_;  // generator's initial codes, code-space encoder only
  nn::ParameterSet params_;
  nn::Conv stem_;
  std::vector<Block> blocks_;
  nn::Conv head_conv_;
  nn::Linear head_linear_;
};

struct EncoderTrainConfig {
  int epochs = 8;
  int batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  LossWeights weights;
};

/// One training item: the image with the segmentation and assignment its
/// masks come from.
struct EncoderSample {
  Image image;
  SegmentMap segments;
  LayerAssignment assignment;
};

class EncoderSet {
 public:
  EncoderSet() = default;
  explicit EncoderSet(std::string generator_id) : generator_id_(std::move(generator_id)) {}

  const std::string& generator_id() const { return generator_id_; }
  bool has(int space) const { return encoders_.count(space) != 0; }
  const Encoder& at(int space) const;
  Encoder& add(std::unique_ptr<Encoder> e);
  std::vector<int> spaces() const;

  void save(const std::filesystem::path& path) const;
  static EncoderSet load(const LayeredGenerator& g, const std::filesystem::path& path);

 private:
  std::string generator_id_;
  std::map<int, std::unique_ptr<Encoder>> encoders_;
};

struct EncoderTrainingResult {
  EncoderSet encoders;
  std::map<int, std::vector<double>> loss_history;  // per space, mean loss per epoch
};

/// The code-space encoder is trained first on whole-image reconstruction;
/// each feature-space encoder is then trained with it frozen, on the samples
/// that assign that space somewhere. The loss is the inversion objective
/// evaluated on predicted latents.
EncoderTrainingResult train_encoders(const std::vector<EncoderSample>& samples, const LayeredGenerator& g,
                                     const LatentPrior& prior, const EncoderTrainConfig& cfg);

/// Bundle from a single forward pass of each needed encoder.
LatentBundle encode_bundle(const Image& x, const LayerAssignment& a, const SegmentMap& seg, const MaskSet& masks,
                           const LayeredGenerator& g, const EncoderSet& encoders);

/// [4,H,W] tensor: the image followed by `mask`.
nn::Tensor encoder_input(const Image& x, const nn::Tensor& mask);

}  // namespace sam
