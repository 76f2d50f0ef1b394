#include "sam/service/store.hpp"

#include <random>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam::service {

namespace fs = std::filesystem;

BundleStore::BundleStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "bundles"); }

std::string BundleStore::new_id() const {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  return fmt::format("b{:016x}", rng());
}

fs::path BundleStore::dir(const std::string& id) const {
  const bool valid = !id.empty() && id.size() <= 64 &&
                     id.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789-_") == std::string::npos;
  if (!valid) throw NotFoundError("unknown bundle '" + id + "'");
  return root_ / "bundles" / id;
}

bool BundleStore::exists(const std::string& id) const {
  try {
    return fs::exists(dir(id) / "meta.json");
  } catch (const NotFoundError&) {
    return false;
  }
}

void BundleStore::save(const std::string& id, const StoredBundle& b, const std::vector<std::string>& space_names) const {
  const fs::path d = dir(id);
  fs::create_directories(d);
  write_samb(d / "bundle.samb", b.bundle);
  write_file_atomic(d / "render.png", b.render_png);
  SambContainer maps;
  maps.meta = {{"kind", "refined_maps"}, {"source", to_string(b.refined_maps.source)}, {"spaces", space_names}};
  for (std::size_t s = 0; s < b.refined_maps.maps.size() && s < space_names.size(); ++s) {
    maps.put("refined." + space_names[s], b.refined_maps.maps[s]);
  }
  write_samb(d / "maps.samb", maps);
  write_file_atomic(d / "meta.json", nlohmann::json{{"id", id}, {"generator_id", b.bundle.meta.value("generator_id", "")}}.dump(2));
}

StoredBundle BundleStore::load(const std::string& id) const {
  if (!exists(id)) throw NotFoundError("unknown bundle '" + id + "'");
  const fs::path d = dir(id);
  StoredBundle out;
  out.bundle = read_samb(d / "bundle.samb");
  out.render_png = read_file(d / "render.png");
  const SambContainer maps = read_samb(d / "maps.samb");
  out.refined_maps.source = error_source_from_string(maps.meta.value("source", "refined"));
  for (const std::string& name : maps.meta.value("spaces", std::vector<std::string>{})) {
    out.refined_maps.maps.push_back(maps.tensor("refined." + name));
  }
  return out;
}

std::string BundleStore::render_png(const std::string& id) const {
  if (!exists(id)) throw NotFoundError("unknown bundle '" + id + "'");
  return read_file(dir(id) / "render.png");
}

}  // namespace sam::service
