#include "sam/error_dataset.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/spaces.hpp"

namespace sam {

namespace fs = std::filesystem;

MeasuredMaps measure_error_maps(const Image& x, const LayeredGenerator& g, const LatentPrior& prior,
                                const OptimizationConfig& cfg) {
  const int h = image_height(x);
  const int w = image_width(x);
  const SegmentMap whole{h, w, 1, std::vector<int>(static_cast<std::size_t>(h) * w, 0)};
  MeasuredMaps out;
  out.maps.source = ErrorSource::Measured;
  for (int s = 0; s < space_count(g); ++s) {
    const LayerAssignment a = uniform_assignment(whole, s);
    InversionResult r = invert(x, g, a, whole, build_masks(a, whole, g), cfg, prior);
    if (r.diverged) {
      out.failed.push_back(s);
      out.maps.maps.emplace_back();
    } else {
      out.maps.maps.push_back(lpips_vgg(x, r.reconstruction).map);
    }
    out.runs.push_back(std::move(r));
  }
  return out;
}

std::string dataset_config_hash(const LayeredGenerator& g, const OptimizationConfig& cfg) {
  return digest_hex(g.id() + "|" + default_perceptual_net()->id() + "|" + cfg.to_json().dump());
}

namespace {

struct RecordState {
  nlohmann::json meta;
  SambContainer maps;
};

bool load_state(const fs::path& rec, RecordState& st) {
  if (!fs::exists(rec / "meta.json")) return false;
  try {
    st.meta = nlohmann::json::parse(read_file(rec / "meta.json"));
    if (fs::exists(rec / "maps.samb")) st.maps = read_samb(rec / "maps.samb");
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

DatasetBuildReport build_error_dataset(const std::vector<LabeledImage>& images, const LayeredGenerator& g,
                                       const LatentPrior& prior, const OptimizationConfig& cfg, const fs::path& dir,
                                       int workers) {
  cfg.validate();
  fs::create_directories(dir);
  const std::string hash = dataset_config_hash(g, cfg);
  const std::vector<std::string> names = space_names(g);
  DatasetBuildReport report;
  std::mutex report_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;

  auto work = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        const LabeledImage& item = images[i];
        if (item.id.empty() || item.id.find('/') != std::string::npos) {
          throw UsageError(fmt::format("invalid image id '{}'", item.id));
        }
        const fs::path rec = dir / item.id;
        RecordState st;
        const bool have = load_state(rec, st) && st.meta.value("cfg_hash", "") == hash;
        std::vector<int> todo;
        for (int s = 0; s < static_cast<int>(names.size()); ++s) {
          if (!have || !st.maps.has("error." + names[static_cast<std::size_t>(s)])) todo.push_back(s);
        }
        if (have && st.meta.value("flagged", false)) {
          std::lock_guard lock(report_mutex);
          ++report.flagged;
          continue;
        }
        if (todo.empty()) {
          std::lock_guard lock(report_mutex);
          ++report.reused;
          continue;
        }
        // Maps are measured against the 8-bit image that is stored on disk.
        const Image x = quantize_8bit(item.image);
        if (!have) {
          st = {};
          st.meta = {{"id", item.id}, {"cfg_hash", hash}, {"generator_id", g.id()}, {"spaces", names}};
        }
        fs::create_directories(rec);
        write_file_atomic(rec / "input.png", encode_png(x));

        const int h = image_height(x);
        const int w = image_width(x);
        const SegmentMap whole{h, w, 1, std::vector<int>(static_cast<std::size_t>(h) * w, 0)};
        bool flagged = false;
        for (int s : todo) {
          const LayerAssignment a = uniform_assignment(whole, s);
          const InversionResult r = invert(x, g, a, whole, build_masks(a, whole, g), cfg, prior);
          if (r.diverged) {
            flagged = true;
            st.meta["diverged_space"] = names[static_cast<std::size_t>(s)];
            st.meta["divergence_term"] = r.divergence_term;
            break;
          }
          st.maps.put("error." + names[static_cast<std::size_t>(s)], lpips_vgg(x, r.reconstruction).map);
          st.maps.meta = {{"kind", "error_maps"}, {"cfg_hash", hash}};
          write_samb(rec / "maps.samb", st.maps);
        }
        st.meta["flagged"] = flagged;
        write_file_atomic(rec / "meta.json", st.meta.dump(2));
        std::lock_guard lock(report_mutex);
        ++(flagged ? report.flagged : report.computed);
      } catch (...) {
        std::lock_guard lock(report_mutex);
        if (!failure) failure = std::current_exception();
        next = images.size();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(images.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return report;
}

std::vector<DatasetRecord> load_error_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("dataset directory not found: " + dir.string());
  std::vector<DatasetRecord> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    RecordState st;
    if (!load_state(entry.path(), st) || st.meta.value("flagged", false)) continue;
    const auto names = st.meta.value("spaces", std::vector<std::string>{});
    DatasetRecord r;
    r.id = st.meta.value("id", entry.path().filename().string());
    bool complete = !names.empty() && fs::exists(entry.path() / "input.png");
    for (const std::string& n : names) {
      if (!st.maps.has("error." + n)) {
        complete = false;
        break;
      }
      r.maps.maps.push_back(st.maps.tensor("error." + n));
    }
    if (!complete) continue;
    r.maps.source = ErrorSource::Measured;
    r.image = read_png(entry.path() / "input.png");
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; });
  return out;
}

}  // namespace sam
