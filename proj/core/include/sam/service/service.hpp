#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "sam/edit.hpp"
#include "sam/pipeline.hpp"
#include "sam/service/jobs.hpp"
#include "sam/service/store.hpp"

namespace httplib {
class Server;
}

namespace sam::service {

struct ServiceConfig {
  std::filesystem::path data_dir = "sam-data";
  int workers = 1;
  int port = 8080;
  std::size_t queue_capacity = 8;
  std::string generator = "toy";
  std::uint64_t generator_seed = 7;
  int statistics_samples = 10000;
  std::filesystem::path predictor;   // empty: probe inversions measure the maps
  std::filesystem::path directions;  // empty: directions synthesized for the generator
  std::filesystem::path static_dir;  // optional web console build
  SamConfig sam;

  /// Defaults, then the JSON file (if any), then SAM_DATA_DIR / SAM_WORKERS / SAM_PORT.
  static ServiceConfig load(const std::optional<std::filesystem::path>& file);
  static ServiceConfig from_json(const nlohmann::json& j);
};

/// Transport-independent service: every HTTP route is a thin wrapper over one
/// of these methods.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();

  const ServiceConfig& config() const { return cfg_; }
  const StyleGenerator& generator() const { return *generator_; }

  /// Queues an inversion of an encoded PNG. Decoding happens in the job, so a
  /// bad payload yields a failed job. `params` may override SamConfig keys.
  std::string submit_inversion(std::string image_png, const nlohmann::json& params);
  std::optional<JobRecord> job(const std::string& id) const;
  void wait_idle();

  std::string render(const std::string& bundle_id) const;
  nlohmann::json invertibility(const std::string& bundle_id, std::optional<double> tau) const;
  nlohmann::json directions(const std::string& dataset) const;

  struct EditOutcome {
    nlohmann::json body;
    std::string png;  // empty when nothing was rendered
  };
  /// Request keys: direction, magnitude, force (default false), tau_override.
  EditOutcome edit(const std::string& bundle_id, const nlohmann::json& request) const;

 private:
  std::string run_inversion(const std::string& image_png, const SamConfig& cfg, const JobQueue::Report& report);

  ServiceConfig cfg_;
  GeneratorHandle generator_;
  LatentPrior prior_;
  std::unique_ptr<PredictorModel> predictor_;
  DirectionRegistry directions_;
  BundleStore store_;
  std::unique_ptr<JobQueue> queue_;  // last: workers stop before the rest is torn down
};

/// Registers the /v1 routes (and the static console, if configured).
void register_routes(httplib::Server& server, Service& service);

std::string base64_encode(const std::string& bytes);
/// Throws UsageError on malformed input.
std::string base64_decode(const std::string& text);

}  // namespace sam::service
