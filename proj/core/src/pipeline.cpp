#include "sam/pipeline.hpp"

#include <cmath>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/spaces.hpp"

namespace sam {

void SamConfig::validate() const {
  if (!std::isfinite(tau) || tau < 0) throw UsageError(fmt::format("tau must be finite and >= 0, got {}", tau));
  if (probe_steps < 1) throw UsageError("probe_steps must be >= 1");
  optimization.validate();
}

nlohmann::json SamConfig::to_json() const {
  nlohmann::json j = optimization.to_json();
  j["tau"] = tau;
  j["segmenter"] = segmenter;
  j["probe_steps"] = probe_steps;
  return j;
}

SamConfig SamConfig::from_json(const nlohmann::json& j) {
  SamConfig c;
  try {
    c.tau = j.value("tau", c.tau);
    c.segmenter = j.value("segmenter", c.segmenter);
    c.probe_steps = j.value("probe_steps", c.probe_steps);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad SAM config: ") + e.what());
  }
  c.optimization = OptimizationConfig::from_json(j);
  c.validate();
  return c;
}

ErrorMap invertibility_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                            const PredictorModel* predictor) {
  if (predictor) {
    if (predictor->spaces() != space_count(g)) {
      throw UsageError(fmt::format("predictor has {} heads, generator has {} spaces", predictor->spaces(), space_count(g)));
    }
    return predict_error_maps(*predictor, x);
  }
  OptimizationConfig probe = cfg.optimization;
  probe.steps = cfg.probe_steps;
  MeasuredMaps measured = measure_error_maps(x, g, prior, probe);
  // A diverged probe says nothing about the space; treat it as uninvertible.
  for (int s : measured.failed) {
    measured.maps.maps[static_cast<std::size_t>(s)] = nn::Tensor({image_height(x), image_width(x)}, 1e3);
  }
  return measured.maps;
}

SamResult invert_with_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                           const ErrorMap& maps, const ProgressCallback& progress) {
  cfg.validate();
  SamResult out;
  out.raw_maps = maps;
  out.segments = segment_image(x, cfg.segmenter);
  out.refined_maps = refine_map(maps, out.segments);
  out.assignment = select_assignment(out.refined_maps, out.segments, cfg.tau);
  const MaskSet masks = build_masks(out.assignment, out.segments, g);
  out.inversion = invert(x, g, out.assignment, out.segments, masks, cfg.optimization, prior, progress);
  return out;
}

SamResult invert_sam(const Image& x, const LayeredGenerator& g, const LatentPrior& prior, const SamConfig& cfg,
                     const PredictorModel* predictor, const ProgressCallback& progress) {
  cfg.validate();
  return invert_with_maps(x, g, prior, cfg, invertibility_maps(x, g, prior, cfg, predictor), progress);
}

}  // namespace sam
