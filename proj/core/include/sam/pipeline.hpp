#pragma once

#include <string>

#include "sam/error_dataset.hpp"
#include "sam/inversion.hpp"
#include "sam/invertibility.hpp"
#include "sam/predictor.hpp"

namespace sam {

struct SamConfig {
  double tau = 0.1;
  std::string segmenter = "graph";
  OptimizationConfig optimization;
  /// Steps of the single-space probe inversions used when no predictor is given.
  int probe_steps = 100;

  void validate() const;
  /// Flat object: the optimization keys plus tau, segmenter and probe_steps.
  nlohmann::json to_json() const;
  static SamConfig from_json(const nlohmann::json& j);
};

/// Everything the spatially adaptive pipeline decided on the way to the bundle.
struct SamResult {
  InversionResult inversion;
  ErrorMap raw_maps;
  ErrorMap refined_maps;
  SegmentMap segments;
  LayerAssignment assignment;
};

/// Maps from the predictor when one is given, otherwise measured by short
/// single-space inversions of `x` itself.
ErrorMap invertibility_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                            const PredictorModel* predictor);

/// Segment, refine, select per-segment spaces at tau, then optimize.
SamResult invert_sam(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                     const PredictorModel* predictor = nullptr, const ProgressCallback& progress = {});

/// Same as invert_sam but starting from maps the caller already has.
SamResult invert_with_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                           const ErrorMap& maps, const ProgressCallback& progress = {});

}  // namespace sam
