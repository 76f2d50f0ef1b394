#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sam/invertibility.hpp"
#include "sam/samb.hpp"

namespace sam::service {

/// What the service keeps per inverted image.
struct StoredBundle {
  SambContainer bundle;     // bundle_to_samb output
  std::string render_png;   // 8-bit render of the inversion
  ErrorMap refined_maps;    // cached for threshold previews
};

/// Directory-per-bundle persistence under `<root>/bundles/<id>/`. Files are
/// written atomically and `meta.json` last, so a bundle is visible only once
/// complete.
class BundleStore {
 public:
  explicit BundleStore(std::filesystem::path root);

  std::string new_id() const;
  void save(const std::string& id, const StoredBundle& b, const std::vector<std::string>& space_names) const;
  /// Throws NotFoundError when the bundle does not exist.
  StoredBundle load(const std::string& id) const;
  std::string render_png(const std::string& id) const;
  bool exists(const std::string& id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path dir(const std::string& id) const;

  std::filesystem::path root_;
};

}  // namespace sam::service
