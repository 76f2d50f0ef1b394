#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sam/inversion.hpp"

namespace sam {

/// A named offset in code space with the latent spaces it may be applied from.
struct EditDirection {
  std::string name;
  std::string dataset;
  nn::Tensor delta;                 // [rows, dim]
  std::vector<bool> capability;     // per space ordinal, code space first

  /// Throws UsageError when capability is not monotone along editability order.
  void validate() const;
  /// Deepest space ordinal the edit still applies from (-1 if none).
  int deepest_capable() const;
};

SambContainer direction_to_samb(const EditDirection& d, const std::vector<std::string>& space_names);
EditDirection direction_from_samb(const SambContainer& c, const std::vector<std::string>& space_names);

class DirectionRegistry {
 public:
  void add(EditDirection d);
  bool has(const std::string& name) const { return directions_.count(name) != 0; }
  /// Throws NotFoundError for unknown names.
  const EditDirection& at(const std::string& name) const;
  /// All directions, optionally restricted to one dataset tag, sorted by name.
  std::vector<const EditDirection*> list(const std::string& dataset = "") const;
  std::size_t size() const { return directions_.size(); }

 private:
  std::map<std::string, EditDirection> directions_;
};

/// Loads a single direction file or every *.samb file in a directory. Every
/// direction must match the generator's code shape; violations are LoadErrors.
DirectionRegistry load_directions(const std::filesystem::path& path, const LayeredGenerator& g);
void save_direction(const std::filesystem::path& path, const EditDirection& d, const LayeredGenerator& g);

/// Directions for a style generator named after the edit table of the four
/// reference datasets. Each is a principal component of sampled styles
/// confined to the code rows that remain active behind its deepest space.
std::vector<EditDirection> synthesize_table_directions(const StyleGenerator& g, int samples = 4000,
                                                       std::uint64_t seed = 0xd1ec);

struct Applicability {
  std::vector<bool> segment_ok;       // per segment
  std::vector<int> failing_segments;  // indices where segment_ok is false
  bool ok() const { return failing_segments.empty(); }
};

Applicability check_applicability(const EditDirection& d, const LayerAssignment& a);

/// Edited render: code-space regions follow the fully edited stream; a region
/// injected at F_l keeps the unedited codes up to layer l and the edited ones
/// after it. Inapplicable edits throw UsageError unless `force`, which warns.
Image apply_edit(const LayeredGenerator& g, const LatentBundle& b, const EditDirection& d, double magnitude,
                 bool force = false);

/// Inversion followed by one edited frame per magnitude, side by side.
Image render_comparison(const LayeredGenerator& g, const LatentBundle& b, const EditDirection& d,
                        const std::vector<double>& magnitudes, bool force = false);

}  // namespace sam
