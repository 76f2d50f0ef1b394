#include "sam/service/service.hpp"

#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "sam/errors.hpp"
#include "sam/spaces.hpp"

namespace sam::service {

namespace fs = std::filesystem;

// --- configuration -----------------------------------------------------------

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  ServiceConfig c;
  try {
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.workers = j.value("workers", c.workers);
    c.port = j.value("port", c.port);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.generator = j.value("generator", c.generator);
    c.generator_seed = j.value("generator_seed", c.generator_seed);
    c.statistics_samples = j.value("statistics_samples", c.statistics_samples);
    c.predictor = j.value("predictor", std::string());
    c.directions = j.value("directions", std::string());
    c.static_dir = j.value("static_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("service config: ") + e.what());
  }
  c.sam = SamConfig::from_json(j);
  if (c.workers < 1) throw UsageError("workers must be >= 1");
  if (c.port < 1 || c.port > 65535) throw UsageError(fmt::format("port {} is out of range", c.port));
  if (c.queue_capacity < 1) throw UsageError("queue_capacity must be >= 1");
  if (c.statistics_samples < 2) throw UsageError("statistics_samples must be >= 2");
  return c;
}

namespace {

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n <= 0 || n > 65535) throw UsageError(fmt::format("{}='{}' is not a positive integer", name, v));
  return static_cast<int>(n);
}

}  // namespace

ServiceConfig ServiceConfig::load(const std::optional<fs::path>& file) {
  ServiceConfig c;
  if (file) {
    try {
      c = from_json(nlohmann::json::parse(read_file(*file)));
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(fmt::format("{}: {}", file->string(), e.what()));
    }
  }
  if (const char* d = std::getenv("SAM_DATA_DIR"); d && *d) c.data_dir = d;
  c.workers = env_int("SAM_WORKERS", c.workers);
  c.port = env_int("SAM_PORT", c.port);
  return c;
}

// --- base64 ------------------------------------------------------------------

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) clean += ch;
  // Accept data URLs as sent by browsers.
  if (clean.rfind("data:", 0) == 0) {
    const auto comma = clean.find(',');
    clean = comma == std::string::npos ? std::string() : clean.substr(comma + 1);
  }
  if (clean.size() % 4 != 0) throw UsageError("base64 payload length is not a multiple of 4");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw UsageError("malformed base64 payload");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// --- service -----------------------------------------------------------------

Service::Service(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      generator_(load_generator(cfg_.generator, cfg_.generator_seed)),
      prior_{estimate_style_statistics(*generator_, cfg_.statistics_samples, cfg_.generator_seed), 5.0,
             cfg_.sam.optimization.literal_sigma},
      store_(cfg_.data_dir) {
  cfg_.sam.validate();
  if (!cfg_.predictor.empty()) predictor_ = PredictorModel::load(cfg_.predictor);
  if (!cfg_.directions.empty()) {
    directions_ = load_directions(cfg_.directions, *generator_);
  } else {
    for (EditDirection& d : synthesize_table_directions(*generator_)) directions_.add(std::move(d));
  }
  queue_ = std::make_unique<JobQueue>(cfg_.workers, cfg_.queue_capacity);
  spdlog::info("service ready: generator {}, {} directions, data in {}", generator_->id(), directions_.size(),
               cfg_.data_dir.string());
}

Service::~Service() { queue_.reset(); }

std::string Service::submit_inversion(std::string image_png, const nlohmann::json& params) {
  if (!params.is_object()) throw UsageError("inversion parameters must be a JSON object");
  nlohmann::json merged = cfg_.sam.to_json();
  merged.update(params);
  const SamConfig cfg = SamConfig::from_json(merged);
  return queue_->submit([this, png = std::move(image_png), cfg](const JobQueue::Report& report) {
    return run_inversion(png, cfg, report);
  });
}

std::string Service::run_inversion(const std::string& image_png, const SamConfig& cfg, const JobQueue::Report& report) {
  Image x = decode_png(image_png);
  const int res = generator_->output_resolution();
  if (image_height(x) != res || image_width(x) != res) {
    spdlog::warn("resampling {}x{} upload to {}x{}", image_height(x), image_width(x), res, res);
    x = resize_image(x, res, res);
  }
  const SamResult r = invert_sam(x, *generator_, prior_, cfg, predictor_.get(),
                                 [&](int step, int steps, const LossBreakdown&) { report(double(step) / steps); });
  StoredBundle stored;
  stored.bundle = bundle_to_samb(*generator_, r.inversion.bundle);
  stored.render_png = encode_png(r.inversion.reconstruction);
  stored.refined_maps = r.refined_maps;
  const std::string id = store_.new_id();
  store_.save(id, stored, space_names(*generator_));
  return id;
}

std::optional<JobRecord> Service::job(const std::string& id) const { return queue_->get(id); }

void Service::wait_idle() { queue_->wait_idle(); }

std::string Service::render(const std::string& bundle_id) const { return store_.render_png(bundle_id); }

namespace {

nlohmann::json assignment_json(const LayeredGenerator& g, const LayerAssignment& a) {
  nlohmann::json segs = nlohmann::json::array();
  for (int s : a.spaces) segs.push_back({{"space", s}, {"name", space_name(g, s)}});
  return segs;
}

}  // namespace

nlohmann::json Service::invertibility(const std::string& bundle_id, std::optional<double> tau) const {
  const StoredBundle stored = store_.load(bundle_id);
  const LatentBundle b = bundle_from_samb(*generator_, stored.bundle);
  LayerAssignment a = b.assignment;
  const bool preview = tau.has_value() && *tau != b.assignment.tau;
  if (tau) {
    if (!std::isfinite(*tau) || *tau < 0) throw UsageError("tau must be finite and >= 0");
    a = select_assignment(stored.refined_maps, b.segments, *tau);
  }
  return {{"bundle_id", bundle_id},
          {"tau", a.tau},
          {"inverted_tau", b.assignment.tau},
          {"spaces", space_names(*generator_)},
          {"segment_count", b.segments.segment_count},
          {"segments", assignment_json(*generator_, a)},
          {"preview", preview},
          {"requires_reinversion", preview},
          {"overlay_png", base64_encode(encode_assignment_png(a, b.segments))}};
}

nlohmann::json Service::directions(const std::string& dataset) const {
  const std::vector<std::string> names = space_names(*generator_);
  nlohmann::json list = nlohmann::json::array();
  for (const EditDirection* d : directions_.list(dataset)) {
    nlohmann::json cap = nlohmann::json::object();
    for (std::size_t s = 0; s < names.size(); ++s) cap[names[s]] = s < d->capability.size() && d->capability[s];
    list.push_back({{"name", d->name}, {"dataset", d->dataset}, {"capability", cap}});
  }
  return {{"spaces", names}, {"directions", list}};
}

Service::EditOutcome Service::edit(const std::string& bundle_id, const nlohmann::json& request) const {
  std::string name;
  double magnitude = 0;
  bool force = false;
  std::optional<double> tau_override;
  try {
    name = request.at("direction").get<std::string>();
    magnitude = request.value("magnitude", 0.0);
    force = request.value("force", false);
    if (request.contains("tau_override") && !request.at("tau_override").is_null()) {
      tau_override = request.at("tau_override").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("edit request: ") + e.what());
  }
  const EditDirection& d = directions_.at(name);
  const StoredBundle stored = store_.load(bundle_id);
  const LatentBundle b = bundle_from_samb(*generator_, stored.bundle);

  EditOutcome out;
  if (tau_override) {
    out.body = invertibility(bundle_id, tau_override);
    out.body["direction"] = name;
    out.body["rendered"] = false;
    const Applicability v = check_applicability(d, select_assignment(stored.refined_maps, b.segments, *tau_override));
    out.body["applicable"] = v.ok();
    out.body["failing_segments"] = v.failing_segments;
    return out;
  }
  const Applicability v = check_applicability(d, b.assignment);
  out.body = {{"bundle_id", bundle_id},
              {"direction", name},
              {"magnitude", magnitude},
              {"applicable", v.ok()},
              {"failing_segments", v.failing_segments},
              {"segments", assignment_json(*generator_, b.assignment)},
              {"forced", force && !v.ok()},
              {"rendered", false}};
  if (!v.ok() && !force) return out;
  out.png = encode_png(apply_edit(*generator_, b, d, magnitude, force));
  out.body["rendered"] = true;
  out.body["image_png"] = base64_encode(out.png);
  return out;
}

// --- HTTP --------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const QueueFullError& e) {
      res.set_header("Retry-After", "5");
      send_json(res, 503, {{"error", std::string("queue full: ") + e.what()}, {"retry_after_seconds", 5}});
    } catch (const UsageError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const LoadError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json job_json(const JobRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"state", to_string(r.state)}, {"progress", r.progress}};
  if (r.state == JobState::Done) j["bundle_id"] = r.bundle_id;
  if (r.state == JobState::Failed) j["error"] = r.error;
  return j;
}

}  // namespace

void register_routes(httplib::Server& server, Service& service) {
  server.Get("/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"status", "ok"}});
             }));

  server.Post("/v1/invert", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                std::string image;
                nlohmann::json params = nlohmann::json::object();
                if (req.is_multipart_form_data()) {
                  if (!req.has_file("image")) throw UsageError("multipart upload needs an 'image' part");
                  image = req.get_file_value("image").content;
                  if (req.has_file("params")) params = nlohmann::json::parse(req.get_file_value("params").content);
                } else {
                  nlohmann::json body = nlohmann::json::parse(req.body);
                  if (!body.is_object() || !body.contains("image")) throw UsageError("body needs an 'image' field");
                  image = base64_decode(body.at("image").get<std::string>());
                  body.erase("image");
                  params = std::move(body);
                }
                const std::string id = service.submit_inversion(std::move(image), params);
                send_json(res, 202, job_json(*service.job(id)));
              }));

  server.Get(R"(/v1/jobs/([A-Za-z0-9_\-]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const auto r = service.job(req.matches[1]);
               if (!r) throw NotFoundError("unknown job '" + std::string(req.matches[1]) + "'");
               send_json(res, 200, job_json(*r));
             }));

  server.Get(R"(/v1/bundles/([A-Za-z0-9_\-]+)/render)",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               res.set_content(service.render(req.matches[1]), "image/png");
             }));

  server.Get(R"(/v1/bundles/([A-Za-z0-9_\-]+)/invertibility)",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               std::optional<double> tau;
               if (req.has_param("tau")) {
                 try {
                   tau = std::stod(req.get_param_value("tau"));
                 } catch (const std::exception&) {
                   throw UsageError("tau must be a number");
                 }
               }
               send_json(res, 200, service.invertibility(req.matches[1], tau));
             }));

  server.Get("/v1/directions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.directions(req.has_param("dataset") ? req.get_param_value("dataset") : ""));
             }));

  server.Post(R"(/v1/bundles/([A-Za-z0-9_\-]+)/edit)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, service.edit(req.matches[1], nlohmann::json::parse(req.body)).body);
              }));

  if (!service.config().static_dir.empty() && fs::is_directory(service.config().static_dir)) {
    server.set_mount_point("/", service.config().static_dir.string());
  }
}

}  // namespace sam::service
