#include "sam/spaces.hpp"

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam {

int space_count(const LayeredGenerator& g) { return static_cast<int>(g.boundaries().size()) - 1; }

int space_layer(const LayeredGenerator& g, int space) {
  if (space < 0 || space >= space_count(g)) {
    throw UsageError(fmt::format("space ordinal {} out of range [0, {})", space, space_count(g)));
  }
  return g.boundaries()[static_cast<std::size_t>(space)];
}

std::string space_name(const LayeredGenerator& g, int space) {
  const int layer = space_layer(g, space);
  return layer == 0 ? g.code_space_name() : fmt::format("F{}", layer);
}

std::vector<std::string> space_names(const LayeredGenerator& g) {
  std::vector<std::string> names;
  for (int s = 0; s < space_count(g); ++s) names.push_back(space_name(g, s));
  return names;
}

int space_from_name(const LayeredGenerator& g, const std::string& name) {
  for (int s = 0; s < space_count(g); ++s)
    if (space_name(g, s) == name) return s;
  throw UsageError(fmt::format("unknown latent space '{}' for generator {}", name, g.id()));
}

}  // namespace sam
