#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sam/generator.hpp"
#include "sam/image.hpp"
#include "sam/inversion.hpp"

namespace sam {

class ClassBoundGenerator;

/// Class-conditional generator with one Gaussian code row per injection
/// site (z+) and a class embedding that enters every layer's modulation.
/// Boundaries are {0, 2, 4, 6}: spaces Z+, F2, F4.
class ConditionalGenerator : public std::enable_shared_from_this<ConditionalGenerator> {
 public:
  /// 32x32 fixture with 8 classes; each class also carries a distinct colour cast.
  static std::shared_ptr<const ConditionalGenerator> toy(std::uint64_t seed);

  const std::string& id() const { return id_; }
  int num_classes() const { return classes_; }
  int code_rows() const { return 4; }
  int code_dim() const { return z_dim_; }

  /// Class-fixed view usable wherever a LayeredGenerator is expected.
  std::shared_ptr<const ClassBoundGenerator> bind(int label) const;

  /// One z drawn from N(0, I) and cloned to every row.
  nn::Tensor sample_codes(std::uint64_t seed) const;
  Image sample(int label, std::uint64_t seed) const;
  /// Mean/covariance of raw z samples; no nonlinearity is involved.
  StyleStatistics code_statistics(int n, std::uint64_t seed) const;

 private:
  friend class ClassBoundGenerator;
  struct Layer {
    nn::Var weight;         // conv [Co,Ci,3,3]
    nn::Var bias;           // [Co]
    nn::Var affine_weight;  // [Ci, Dz]
    nn::Tensor affine_bias;   // [Ci]
    nn::Tensor embed_weight;  // [Ci, E]
  };

  ConditionalGenerator() = default;

  std::string id_;
  std::uint64_t seed_ = 0;
  int classes_ = 8;
  int z_dim_ = 32;
  int embed_dim_ = 16;
  nn::Tensor embeddings_;  // [classes, E]
  nn::Var input_weight_;   // [32*4*4, Dz]
  nn::Tensor input_bias_;
  nn::Tensor input_embed_;  // [32*4*4, E]
  std::vector<Layer> layers_;  // rows 1..3
  nn::Var rgb_weight_;         // [3,16,1,1]
  nn::Tensor rgb_bias_;        // [3]
  nn::Tensor class_colours_;   // [classes, 3]
};

class ClassBoundGenerator final : public LayeredGenerator {
 public:
  ClassBoundGenerator(std::shared_ptr<const ConditionalGenerator> parent, int label);

  const std::string& id() const override { return id_; }
  const std::vector<int>& boundaries() const override { return boundaries_; }
  int code_rows() const override { return parent_->code_rows(); }
  int code_dim() const override { return parent_->code_dim(); }
  int output_resolution() const override { return 32; }
  nn::Shape feature_shape(int layer) const override;
  nn::Var run_slices(int from, int to, const nn::Var& input, const nn::Var& codes) const override;
  const nn::Tensor& initial_codes() const override { return initial_; }
  std::vector<int> rows_used(int from, int to) const override;
  std::string code_space_name() const override { return "Z+"; }

  int label() const { return label_; }
  const ConditionalGenerator& parent() const { return *parent_; }

 private:
  nn::Var run_one(int from, const nn::Var& x, const nn::Var& codes) const;

  std::shared_ptr<const ConditionalGenerator> parent_;
  int label_;
  std::string id_;
  std::vector<int> boundaries_{0, 2, 4, 6};
  nn::Tensor initial_;
  nn::Var input_bias_;               // class-specific bias of the input projection
  std::vector<nn::Var> style_bias_;  // class-specific affine bias per layer
  nn::Var rgb_bias_;
};

/// Linear discriminant on 8x8 pooled colour, fitted to images sampled per
/// class from the fixture.
class ClassMeanClassifier {
 public:
  ClassMeanClassifier(const ConditionalGenerator& g, int samples_per_class = 64, std::uint64_t seed = 0xc1a55);
  int predict(const Image& x) const;
  const std::string& id() const { return id_; }

 private:
  struct Model;
  std::shared_ptr<const Model> model_;
  std::string id_;
};

/// Resolves a classifier id ("oracle" is the only built-in) and predicts.
int predict_class(const Image& x, const ConditionalGenerator& g, const std::string& classifier_id = "oracle");

/// sum_n [(z_n - mu)^T Sigma_reg^-1 (z_n - mu) + ||z_n - z_0||^2].
double zplus_regularizer(const nn::Tensor& z_plus, const StyleStatistics& s);

struct ConditionalInversion {
  InversionResult result;
  int class_label = 0;
};

/// Predicts the class once, then inverts with it held fixed; deltas live at F2/F4.
ConditionalInversion invert_class_conditional(const Image& x, const ConditionalGenerator& g,
                                              const LayerAssignment& a, const SegmentMap& seg,
                                              const OptimizationConfig& cfg, const StyleStatistics& z_stats,
                                              const std::string& classifier_id = "oracle");

}  // namespace sam
