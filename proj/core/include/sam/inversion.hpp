#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sam/generator.hpp"
#include "sam/image.hpp"
#include "sam/invertibility.hpp"
#include "sam/perceptual.hpp"
#include "sam/samb.hpp"

namespace sam {

/// Optimised variables: per-row codes plus masked feature deltas keyed by
/// space ordinal (only spaces whose region is nonempty carry a delta).
struct LatentBundle {
  ExtendedStyle w_plus;
  std::map<int, nn::Tensor> delta_f;
  MaskSet masks;
  LayerAssignment assignment;
  SegmentMap segments;
  std::string generator_id;
  std::string optimizer_state_hash;
  std::optional<int> class_label;

  /// Throws ShapeError/UsageError when inconsistent with `g`.
  void validate(const LayeredGenerator& g) const;
};

/// Zero deltas for every space with a nonempty region.
LatentBundle make_bundle(const LayeredGenerator& g, const nn::Tensor& codes, const LayerAssignment& a,
                         const SegmentMap& seg, const MaskSet& masks);

SambContainer bundle_to_samb(const LayeredGenerator& g, const LatentBundle& b);
LatentBundle bundle_from_samb(const LayeredGenerator& g, const SambContainer& c);

struct LossWeights {
  double lambda_lpips = 1.0;
  double lambda_w = 1e-5;
  double lambda_f = 1e-3;

  void validate() const;
};

/// Mahalanobis-type prior over code rows. `slope` is applied to negative
/// entries before the quadratic form (5 for W+, 1 for Gaussian codes).
struct LatentPrior {
  StyleStatistics stats;
  double slope = 5.0;
  /// Use sigma itself in the quadratic form instead of its inverse.
  bool literal_sigma = false;
};

struct OptimizationConfig {
  int steps = 300;
  double lr_codes = 0.03;
  double lr_delta = 0.003;
  std::uint64_t seed = 0;
  /// Stop once the best loss has improved by less than this (relative) over `patience` steps.
  double early_stop_tolerance = 0.0;
  int patience = 50;
  LossWeights weights;
  bool literal_sigma = false;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizationConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double l2 = 0.0;
  double lpips = 0.0;
  double reconstruction = 0.0;  // l2 + lambda_lpips * lpips
  double latent = 0.0;          // unweighted prior term
  double fspace = 0.0;          // unweighted delta energy
  double total = 0.0;           // reconstruction + lambda_w * latent + lambda_f * fspace

  /// Terms that add up to `total`.
  std::map<std::string, double> weighted_terms(const LossWeights& w) const;
};

struct InversionResult {
  LatentBundle bundle;
  Image reconstruction;
  std::vector<LossBreakdown> trace;
  double seconds = 0.0;
  int best_step = 0;
  bool diverged = false;
  std::string divergence_term;
};

using ProgressCallback = std::function<void(int step, int steps, const LossBreakdown&)>;

// --- image formation --------------------------------------------------------

/// Differentiable image formation: each slice output at a space with a delta
/// receives m (.) delta before the next slice runs.
nn::Var form_image_var(const LayeredGenerator& g, const nn::Var& codes,
                       const std::map<int, nn::Var>& deltas, const MaskSet& masks);
Image form_image(const LayeredGenerator& g, const LatentBundle& b);

// --- losses -----------------------------------------------------------------

struct ReconstructionLoss {
  double value = 0.0;
  double l2 = 0.0;
  double lpips = 0.0;
  nn::Tensor map;  // [H,W] spatial LPIPS
};

ReconstructionLoss reconstruction_loss(const Image& x, const Image& x_hat, double lambda_lpips,
                                       const PerceptualNet& net);
ReconstructionLoss reconstruction_loss(const Image& x, const Image& x_hat, double lambda_lpips);

/// sum_n [(c_n^ - mu)^T S (c_n^ - mu) + ||c_n - c_0||^2] with S = sigma_inv_reg
/// (or sigma when literal), c^ the slope conversion of c.
nn::Var latent_prior_var(const nn::Var& codes, const LatentPrior& prior);
double wplus_regularizer(const ExtendedStyle& w, const StyleStatistics& s, bool literal_sigma = false);
double fspace_regularizer(const LatentBundle& b);

class Objective {
 public:
  Objective(const LayeredGenerator& g, const Image& target, const LatentPrior& prior,
            const LossWeights& weights, PerceptualHandle net = default_perceptual_net());

  struct Evaluation {
    nn::Var total;
    LossBreakdown breakdown;
    nn::Var image;
  };
  /// Builds the graph of the full objective for the given variables.
  Evaluation evaluate(const nn::Var& codes, const std::map<int, nn::Var>& deltas, const MaskSet& masks) const;

  const LossWeights& weights() const { return weights_; }

 private:
  const LayeredGenerator& g_;
  Image target_;
  LatentPrior prior_;
  LossWeights weights_;
  LpipsTarget lpips_;
};

/// Full objective and its breakdown; throws NonFiniteError naming a non-finite term.
LossBreakdown total_objective(const Image& x, const LatentBundle& b, const LayeredGenerator& g,
                              const LossWeights& weights, const LatentPrior& prior);

/// Optimises codes and deltas from the generator's initial codes and zero deltas.
InversionResult invert(const Image& x, const LayeredGenerator& g, const LayerAssignment& a,
                       const SegmentMap& seg, const MaskSet& masks, const OptimizationConfig& cfg,
                       const LatentPrior& prior, const ProgressCallback& progress = {});

/// 64-bit FNV-1a digest rendered as 16 hex digits.
std::string digest_hex(const std::string& bytes);

}  // namespace sam
