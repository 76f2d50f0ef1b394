#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sam/nn/autograd.hpp"
#include "sam/nn/tensor.hpp"

namespace sam {

/// A generator whose synthesis network is split at labelled layer boundaries
/// into slices g_{i->j}, each modulated by rows of a per-layer code matrix.
/// Boundary 0 is the code space itself; interior boundaries are feature spaces.
class LayeredGenerator {
 public:
  virtual ~LayeredGenerator() = default;

  virtual const std::string& id() const = 0;
  virtual const std::vector<int>& boundaries() const = 0;
  virtual int code_rows() const = 0;
  virtual int code_dim() const = 0;
  virtual int output_resolution() const = 0;
  /// [C,H,W] of the activation at a boundary; the final boundary is the image.
  virtual nn::Shape feature_shape(int layer) const = 0;
  /// Runs g_{from->to}. `input` is ignored when `from` is 0.
  virtual nn::Var run_slices(int from, int to, const nn::Var& input, const nn::Var& codes) const = 0;
  /// Code matrix used to start an inversion (mean of the code distribution).
  virtual const nn::Tensor& initial_codes() const = 0;

  /// Interior boundaries, i.e. the feature spaces F_l in synthesis order.
  std::vector<int> feature_layers() const;
  /// Code rows consumed by the slices between `from` and `to`.
  virtual std::vector<int> rows_used(int from, int to) const = 0;
  /// Display name of the code space ("W+" for style generators).
  virtual std::string code_space_name() const { return "W+"; }
};

struct StyleLayerSpec {
  int out_channels = 0;
  int kernel = 3;
  bool upsample = false;
  int style_row = 0;
  bool demodulate = true;
  bool activate = true;
  bool noise = true;
};

struct SliceSpec {
  int to_layer = 0;
  std::vector<StyleLayerSpec> layers;
};

/// Layout of a skip-free style generator: mapping MLP, constant input and
/// a chain of modulated convolutions grouped into slices.
struct GeneratorArchitecture {
  std::string family = "toy";
  int style_dim = 64;
  int num_style_rows = 8;
  int mapping_layers = 2;
  nn::Shape constant_shape{32, 4, 4};
  std::vector<SliceSpec> slices;
  double rgb_gain = 1.0;
  double noise_strength = 0.1;

  /// 32x32 fixture: boundaries {0,4,6,8,10,16}, D = 64, N = 8.
  static GeneratorArchitecture toy();
  /// StyleGAN2 synthesis layout (conv k feeds style row k; F4 sits at 16x16).
  static GeneratorArchitecture stylegan2(int resolution, int style_dim = 512,
                                         int channel_base = 32768, int channel_max = 512);

  std::vector<int> boundaries() const;
  nn::Shape feature_shape(int layer) const;
  int output_resolution() const;
  void validate() const;

  nlohmann::json to_json() const;
  static GeneratorArchitecture from_json(const nlohmann::json& j);
};

struct ExtendedStyle {
  nn::Tensor w_plus;  // [N,D]
  int rows() const { return w_plus.dim(0); }
  int dim() const { return w_plus.dim(1); }
};

struct FeatureTensor {
  nn::Tensor values;  // [C,H,W]
  int layer = 0;
};

struct StyleStatistics {
  nn::Tensor mu;             // [D]
  nn::Tensor sigma;          // [D,D]
  nn::Tensor sigma_inv_reg;  // [D,D], inverse of (sigma + ridge I)
  double ridge = 1e-6;
  int sample_count = 0;
  std::uint64_t seed = 0;
};

/// Immutable style generator. Per-layer noise is drawn once from the seed.
class StyleGenerator final : public LayeredGenerator {
 public:
  static std::shared_ptr<const StyleGenerator> random(const GeneratorArchitecture& arch,
                                                      std::uint64_t seed, std::string id);

  const std::string& id() const override { return id_; }
  const std::vector<int>& boundaries() const override { return boundaries_; }
  int code_rows() const override { return arch_.num_style_rows; }
  int code_dim() const override { return arch_.style_dim; }
  int output_resolution() const override { return arch_.output_resolution(); }
  nn::Shape feature_shape(int layer) const override;
  nn::Var run_slices(int from, int to, const nn::Var& input, const nn::Var& codes) const override;
  const nn::Tensor& initial_codes() const override { return mean_style_; }
  std::vector<int> rows_used(int from, int to) const override;

  const GeneratorArchitecture& architecture() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  const nn::Tensor& constant_input() const { return constant_.value(); }

  /// Maps one latent z ([D]) to w ([D]); z is pixel-normalized first.
  nn::Tensor map(const nn::Tensor& z) const;

  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<const StyleGenerator> load(const std::filesystem::path& path);

 private:
  struct Layer {
    StyleLayerSpec spec;
    nn::Var weight;
    nn::Var bias;
    nn::Var affine_weight;
    nn::Var affine_bias;
    nn::Var noise;  // pre-scaled and broadcast to [C,H,W]
    nn::Tensor noise_map;
  };
  struct Slice {
    int from = 0;
    int to = 0;
    std::vector<Layer> layers;
  };

  StyleGenerator() = default;
  void finalize();
  void calibrate_output(std::mt19937_64& rng);
  nn::Var apply_layer(const Layer& layer, nn::Var x, const nn::Var& codes) const;
  const Slice& slice_from(int from) const;

  GeneratorArchitecture arch_;
  std::string id_;
  std::uint64_t seed_ = 0;
  std::vector<int> boundaries_;
  nn::Var constant_;
  std::vector<nn::Tensor> mapping_weights_;
  std::vector<nn::Tensor> mapping_biases_;
  std::vector<Slice> slices_;
  nn::Tensor mean_style_;
};

using GeneratorHandle = std::shared_ptr<const StyleGenerator>;

/// "toy" builds the fixture from `seed`; anything else is a SAMB checkpoint path.
GeneratorHandle load_generator(const std::string& source, std::uint64_t seed);

/// Runs g_{i->j} without recording a graph.
FeatureTensor run_slice(const LayeredGenerator& g, int i, int j, const FeatureTensor* input,
                        const ExtendedStyle& w);
nn::Shape feature_shape(const LayeredGenerator& g, int layer);
/// Full synthesis g_{0->last}; returns the [3,R,R] image.
nn::Tensor synthesize(const LayeredGenerator& g, const nn::Tensor& codes);

ExtendedStyle sample_style(const StyleGenerator& g, std::uint64_t seed);
/// Leaky rectifier with slope 5 on negatives, the inverse of the mapping
/// network's final 0.2-slope activation.
double gaussianize(double w);
StyleStatistics estimate_style_statistics(const StyleGenerator& g, int n, std::uint64_t seed);
/// Fits mean/covariance to rows of `samples` ([n,D]) with the given ridge.
StyleStatistics fit_statistics(const nn::Tensor& samples, double ridge, std::uint64_t seed);

}  // namespace sam
