#pragma once

#include <string>
#include <vector>

#include "sam/generator.hpp"

namespace sam {

/// Latent spaces of a style generator in editability order. Ordinals are
/// also used for generators with other layouts, where ordinal 0 is always
/// the code space and ordinal k the k-th interior boundary.
enum class LatentSpaceId : int { WPlus = 0, F4 = 1, F6 = 2, F8 = 3, F10 = 4 };

inline int ordinal(LatentSpaceId id) { return static_cast<int>(id); }

/// Number of spaces: the code space plus one per interior boundary.
int space_count(const LayeredGenerator& g);
/// Generator layer at which a space's delta is injected (0 for the code space).
int space_layer(const LayeredGenerator& g, int space);
/// "W+", "F4", ... for the given generator.
std::string space_name(const LayeredGenerator& g, int space);
std::vector<std::string> space_names(const LayeredGenerator& g);
/// Inverse of space_name; throws UsageError for unknown names.
int space_from_name(const LayeredGenerator& g, const std::string& name);

}  // namespace sam
