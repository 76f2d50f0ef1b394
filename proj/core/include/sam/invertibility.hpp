#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sam/generator.hpp"
#include "sam/image.hpp"

namespace sam {

enum class ErrorSource { Measured, Predicted, Refined };

const char* to_string(ErrorSource s);
ErrorSource error_source_from_string(const std::string& s);

/// Spatial reconstruction error per latent space, indexed by space ordinal.
/// Low error means the region is well invertible in that space.
struct ErrorMap {
  std::vector<nn::Tensor> maps;  // each [H,W], non-negative
  ErrorSource source = ErrorSource::Measured;

  int spaces() const { return static_cast<int>(maps.size()); }
  int height() const { return maps.empty() ? 0 : maps.front().dim(0); }
  int width() const { return maps.empty() ? 0 : maps.front().dim(1); }
};

struct SegmentMap {
  int height = 0;
  int width = 0;
  int segment_count = 0;
  std::vector<int> labels;  // row-major, each in [0, segment_count)

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::vector<int> segment_sizes() const;
  void validate() const;
};

/// Per-segment choice of latent space (ordinal) for a threshold tau.
struct LayerAssignment {
  std::vector<int> spaces;
  double tau = 0.0;
};

/// Region maps at image resolution plus their feature-resolution versions.
struct MaskSet {
  std::vector<nn::Tensor> regions;        // per space ordinal, binary [H,W]
  std::vector<nn::Tensor> feature_masks;  // per space ordinal >= 1, [h_l,w_l] in [0,1]; empty at 0

  bool has_region(int space) const;
};

// --- segmentation ------------------------------------------------------------

/// Graph-based oversegmentation parameters (Felzenszwalb-Huttenlocher).
struct GraphSegmenterParams {
  double sigma = 0.5;  // Gaussian pre-smoothing
  double k = 1.5;      // merge threshold scale, in [-1,1] colour units
  int min_size = 12;   // components smaller than this are merged into a neighbour
};

using Segmenter = std::function<SegmentMap(const Image&)>;

SegmentMap segment_graph(const Image& image, const GraphSegmenterParams& params = {});

/// Registered backends: "graph" (default parameters), "graph:k=<v>,min=<n>,sigma=<s>",
/// "single" (one segment), "grid:<n>" (n x n blocks) and "labels:<path>" (PNG whose
/// gray/palette values are semantic labels, e.g. from an external segmentation model).
SegmentMap segment_image(const Image& image, const std::string& backend);
void register_segmenter(const std::string& prefix,
                        std::function<Segmenter(const std::string& args)> factory);

/// Relabels so segments are numbered in raster order of first appearance.
SegmentMap compact_labels(int height, int width, const std::vector<int>& raw);

// --- refinement and selection -----------------------------------------------

/// Replaces every space's map by its per-segment mean.
ErrorMap refine_map(const ErrorMap& e, const SegmentMap& seg);
/// Mean error per [segment][space].
std::vector<std::vector<double>> segment_means(const ErrorMap& e, const SegmentMap& seg);
/// Earliest space whose segment-mean error is <= tau; the deepest space if none is.
LayerAssignment select_assignment(const ErrorMap& e, const SegmentMap& seg, double tau);
/// Same rule applied to one row of segment means.
int select_space(const std::vector<double>& means, double tau);
/// Whole image assigned to one space.
LayerAssignment uniform_assignment(const SegmentMap& seg, int space, double tau = 0.0);
MaskSet build_masks(const LayerAssignment& a, const SegmentMap& seg, const LayeredGenerator& g);
/// Per-pixel space ordinal, for the indexed visualization.
std::vector<std::uint8_t> assignment_pixels(const LayerAssignment& a, const SegmentMap& seg);
/// Indexed PNG with palette index = space ordinal.
std::string encode_assignment_png(const LayerAssignment& a, const SegmentMap& seg);

}  // namespace sam
