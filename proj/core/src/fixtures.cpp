#include "sam/fixtures.hpp"

#include <algorithm>
#include <random>

namespace sam {

Image generated_target(const StyleGenerator& g, std::uint64_t seed) {
  return synthesize(g, sample_style(g, seed).w_plus);
}

Image overlay_target(const StyleGenerator& g, std::uint64_t seed) {
  return with_overlays(generated_target(g, seed), seed);
}

Image with_overlays(Image img, std::uint64_t seed) {
  const int h = image_height(img);
  const int w = image_width(img);
  std::mt19937_64 rng(seed ^ 0x0a7e51a5ULL);
  std::uniform_real_distribution<double> colour(-0.9, 0.9);
  std::uniform_int_distribution<int> count(1, 3);
  const int shapes = count(rng);
  for (int k = 0; k < shapes; ++k) {
    const double c[3] = {colour(rng), colour(rng), colour(rng)};
    const bool disc = rng() % 2 == 0;
    const int size_h = std::uniform_int_distribution<int>(h / 5, h / 2)(rng);
    const int size_w = std::uniform_int_distribution<int>(w / 5, w / 2)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, h - size_h)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, w - size_w)(rng);
    const double cy = y0 + 0.5 * (size_h - 1);
    const double cx = x0 + 0.5 * (size_w - 1);
    for (int y = y0; y < y0 + size_h; ++y)
      for (int x = x0; x < x0 + size_w; ++x) {
        if (disc) {
          const double dy = (y - cy) / (0.5 * size_h);
          const double dx = (x - cx) / (0.5 * size_w);
          if (dy * dy + dx * dx > 1.0) continue;
        }
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
      }
  }
  return img;
}

std::vector<Image> overlay_targets(const StyleGenerator& g, int count, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) out.push_back(overlay_target(g, seed + static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace sam
