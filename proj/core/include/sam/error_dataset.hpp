#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sam/inversion.hpp"

namespace sam {

struct LabeledImage {
  std::string id;
  Image image;
};

/// Spatial LPIPS error of single-space inversions: for each space the whole
/// image is assigned to it, inverted, and compared with the input.
/// Spaces whose inversion diverges are reported in `failed` and left empty.
struct MeasuredMaps {
  ErrorMap maps;
  std::vector<int> failed;
  std::vector<InversionResult> runs;
};

MeasuredMaps measure_error_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior,
                                const OptimizationConfig& cfg);

/// Key under which dataset records are cached.
std::string dataset_config_hash(const LayeredGenerator& g, const OptimizationConfig& cfg);

struct DatasetRecord {
  std::string id;
  Image image;
  ErrorMap maps;
};

struct DatasetBuildReport {
  int computed = 0;
  int reused = 0;
  int flagged = 0;
};

/// Writes one directory per image (`input.png`, `meta.json`, `maps.samb`).
/// Records already present with the same configuration hash are reused, and
/// records with a diverged space are flagged and skipped. Images are processed
/// by `workers` threads.
DatasetBuildReport build_error_dataset(const std::vector<LabeledImage>& images, const LayeredGenerator& g,
                                       const LatentPrior& prior, const OptimizationConfig& cfg,
                                       const std::filesystem::path& dir, int workers = 1);

/// Loads every complete, unflagged record under `dir`, sorted by id.
std::vector<DatasetRecord> load_error_dataset(const std::filesystem::path& dir);

}  // namespace sam
