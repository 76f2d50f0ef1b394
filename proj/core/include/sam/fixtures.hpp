#pragma once

#include <cstdint>
#include <vector>

#include "sam/generator.hpp"
#include "sam/image.hpp"

namespace sam {

/// Image synthesized from a random style of `g`; exactly representable in W+.
Image generated_target(const StyleGenerator& g, std::uint64_t seed);

/// Generated image with one to three flat-coloured rectangles or discs pasted
/// on top, i.e. content the generator cannot express through its styles alone.
Image overlay_target(const StyleGenerator& g, std::uint64_t seed);

/// Pastes the overlay shapes used by overlay_target onto any image.
Image with_overlays(Image img, std::uint64_t seed);

/// `count` overlay targets with seeds seed, seed+1, ...
std::vector<Image> overlay_targets(const StyleGenerator& g, int count, std::uint64_t seed);

}  // namespace sam
