#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "sam/errors.hpp"
#include "sam/fixtures.hpp"
#include "sam/service/jobs.hpp"
#include "sam/service/service.hpp"
#include "sam/service/store.hpp"

using namespace sam;
using namespace sam::service;
using json = nlohmann::json;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

ServiceConfig small_config(const fs::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  c.statistics_samples = 500;
  c.sam.optimization.steps = 20;
  c.sam.probe_steps = 10;
  return c;
}

}  // namespace

TEST(JobQueue, RunsTasksAndRecordsOutcomes) {
  JobQueue q(2, 8);
  const std::string ok = q.submit([](const JobQueue::Report& report) {
    report(0.5);
    report(0.25);
    return std::string("b1");
  });
  const std::string bad = q.submit([](const JobQueue::Report&) -> std::string { throw std::runtime_error("decode failed"); });
  q.wait_idle();
  const auto a = q.get(ok);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->state, JobState::Done);
  EXPECT_EQ(a->bundle_id, "b1");
  EXPECT_EQ(a->progress, 1.0);
  const auto b = q.get(bad);
  EXPECT_EQ(b->state, JobState::Failed);
  EXPECT_EQ(b->error, "decode failed");
  EXPECT_FALSE(q.get("job-missing"));
  EXPECT_STREQ(to_string(JobState::Queued), "queued");
}

TEST(JobQueue, RejectsWhenFull) {
  JobQueue q(1, 1);
  std::promise<void> release;
  std::shared_future<void> gate = release.get_future().share();
  std::atomic<bool> started{false};
  q.submit([&](const JobQueue::Report&) {
    started = true;
    gate.wait();
    return std::string("x");
  });
  while (!started) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  q.submit([&](const JobQueue::Report&) { return std::string("y"); });
  EXPECT_EQ(q.queued(), 1u);
  EXPECT_THROW(q.submit([](const JobQueue::Report&) { return std::string("z"); }), QueueFullError);
  release.set_value();
  q.wait_idle();
  EXPECT_EQ(q.queued(), 0u);
}

TEST(BundleStore, RoundTripAndIdValidation) {
  const fs::path dir = fresh_dir("sam-test-store");
  BundleStore store(dir);
  const std::string id = store.new_id();
  EXPECT_FALSE(store.exists(id));
  StoredBundle b;
  b.bundle.meta = {{"kind", "bundle"}};
  b.bundle.put("x", nn::Tensor({2}, {1.0, 2.0}));
  b.render_png = encode_png(make_image(4, 4, 0.5));
  b.refined_maps.maps = {nn::Tensor({4, 4}, 0.1), nn::Tensor({4, 4}, 0.2)};
  store.save(id, b, {"W+", "F4"});
  EXPECT_TRUE(store.exists(id));
  const StoredBundle back = store.load(id);
  EXPECT_EQ(back.render_png, b.render_png);
  EXPECT_EQ(back.refined_maps.spaces(), 2);
  EXPECT_NEAR(back.refined_maps.maps[1][3], 0.2, 1e-7);
  EXPECT_EQ(store.render_png(id), b.render_png);
  EXPECT_THROW(store.load("b0000000000000000"), NotFoundError);
  EXPECT_THROW(store.load("../etc/passwd"), NotFoundError);
  fs::remove_all(dir);
}

TEST(ServiceConfig, FileThenEnvironment) {
  const fs::path dir = fresh_dir("sam-test-config");
  fs::create_directories(dir);
  write_file_atomic(dir / "c.json", R"({"workers": 3, "port": 9000, "tau": 0.2, "steps": 50})");
  ::setenv("SAM_PORT", "9100", 1);
  const ServiceConfig c = ServiceConfig::load(dir / "c.json");
  ::unsetenv("SAM_PORT");
  EXPECT_EQ(c.workers, 3);
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.sam.tau, 0.2);
  EXPECT_EQ(c.sam.optimization.steps, 50);
  EXPECT_THROW(ServiceConfig::from_json({{"workers", 0}}), UsageError);
  fs::remove_all(dir);
}

TEST(Base64, RoundTripAndDataUrls) {
  const std::string bytes("\x00\x01\xfe\xffhello", 9);
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_EQ(base64_encode("abc"), "YWJj");
  EXPECT_EQ(base64_decode("data:image/png;base64,YWJj"), "abc");
  EXPECT_THROW(base64_decode("***"), UsageError);
}

class HttpService : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("sam-test-http");
    service_ = std::make_unique<Service>(small_config(dir_));
    server_ = std::make_unique<httplib::Server>();
    register_routes(*server_, *service_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }
  static void TearDownTestSuite() {
    server_->stop();
    thread_.join();
    server_.reset();
    service_.reset();
    fs::remove_all(dir_);
  }

  static json get_json(const std::string& path, int expect_status = 200) {
    httplib::Client c("127.0.0.1", port_);
    const auto r = c.Get(path);
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, expect_status) << path << ": " << r->body;
    return json::parse(r->body);
  }

  static std::string invert_and_wait(const std::string& png, json params = json::object()) {
    httplib::Client c("127.0.0.1", port_);
    params["image"] = base64_encode(png);
    const auto r = c.Post("/v1/invert", params.dump(), "application/json");
    EXPECT_EQ(r->status, 202);
    const std::string job = json::parse(r->body).at("id");
    service_->wait_idle();
    const json j = get_json("/v1/jobs/" + job);
    EXPECT_EQ(j.at("state"), "done") << j.dump();
    EXPECT_EQ(j.at("progress"), 1.0);
    return j.value("bundle_id", "");
  }

  static inline fs::path dir_;
  static inline std::unique_ptr<Service> service_;
  static inline std::unique_ptr<httplib::Server> server_;
  static inline std::thread thread_;
  static inline int port_ = 0;
};

TEST_F(HttpService, HealthAndDirections) {
  EXPECT_EQ(get_json("/v1/health").at("status"), "ok");
  const json all = get_json("/v1/directions");
  EXPECT_EQ(all.at("directions").size(), 16u);
  EXPECT_EQ(all.at("spaces").size(), 5u);
  const json cars = get_json("/v1/directions?dataset=cars");
  EXPECT_EQ(cars.at("directions").size(), 4u);
}

TEST_F(HttpService, InvertPreviewAndEdit) {
  const std::string png = encode_png(overlay_target(service_->generator(), 5));
  const std::string id = invert_and_wait(png);
  ASSERT_FALSE(id.empty());

  httplib::Client c("127.0.0.1", port_);
  const auto render = c.Get("/v1/bundles/" + id + "/render");
  ASSERT_TRUE(render);
  EXPECT_EQ(render->status, 200);
  EXPECT_EQ(render->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(image_width(decode_png(render->body)), 32);

  const json stored = get_json("/v1/bundles/" + id + "/invertibility");
  EXPECT_FALSE(stored.at("preview"));
  // Toy error maps are bounded by 1, so tau = 1 puts every segment in W+.
  const json all_w = get_json("/v1/bundles/" + id + "/invertibility?tau=1");
  EXPECT_TRUE(all_w.at("requires_reinversion"));
  for (const json& s : all_w.at("segments")) EXPECT_EQ(s.at("name"), "W+");
  // Raising tau never deepens a segment.
  std::vector<int> previous(all_w.at("segments").size(), 99);
  for (double tau : {0.0, 0.05, 0.1, 0.3, 1.0}) {
    const json p = get_json("/v1/bundles/" + id + "/invertibility?tau=" + std::to_string(tau));
    for (std::size_t k = 0; k < previous.size(); ++k) {
      const int s = p.at("segments")[k].at("space");
      EXPECT_LE(s, previous[k]);
      previous[k] = s;
    }
  }
  get_json("/v1/bundles/" + id + "/invertibility?tau=abc", 400);

  const auto zero = c.Post("/v1/bundles/" + id + "/edit", json{{"direction", "car color (red)"}, {"magnitude", 0.0}}.dump(),
                           "application/json");
  ASSERT_EQ(zero->status, 200);
  const json zb = json::parse(zero->body);
  EXPECT_TRUE(zb.at("applicable"));
  EXPECT_TRUE(zb.at("rendered"));
  EXPECT_EQ(base64_decode(zb.at("image_png")), render->body);

  const json size = json::parse(
      c.Post("/v1/bundles/" + id + "/edit", json{{"direction", "car size"}, {"magnitude", 1.0}}.dump(), "application/json")
          ->body);
  const bool has_deep = std::any_of(stored.at("segments").begin(), stored.at("segments").end(),
                                    [](const json& s) { return s.at("space") != 0; });
  EXPECT_EQ(size.at("applicable"), !has_deep);
  EXPECT_EQ(size.at("rendered"), !has_deep);

  const json preview = json::parse(c.Post("/v1/bundles/" + id + "/edit",
                                          json{{"direction", "car size"}, {"tau_override", 1.0}}.dump(), "application/json")
                                       ->body);
  EXPECT_TRUE(preview.at("applicable"));
  EXPECT_FALSE(preview.at("rendered"));
}

TEST_F(HttpService, ErrorStatuses) {
  get_json("/v1/jobs/job-nope", 404);
  get_json("/v1/bundles/b0123456789abcdef/invertibility", 404);
  httplib::Client c("127.0.0.1", port_);
  EXPECT_EQ(c.Post("/v1/invert", "{not json", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/v1/invert", R"({"other": 1})", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/v1/invert", json{{"image", "YWJj"}, {"tau", -1}}.dump(), "application/json")->status, 400);
  EXPECT_EQ(c.Post("/v1/bundles/b0123456789abcdef/edit", json{{"direction", "car size"}}.dump(), "application/json")->status,
            404);

  // A payload that is not a PNG fails inside the job, not at submission.
  const auto r = c.Post("/v1/invert", json{{"image", base64_encode("not a png")}}.dump(), "application/json");
  ASSERT_EQ(r->status, 202);
  service_->wait_idle();
  const json j = get_json("/v1/jobs/" + json::parse(r->body).at("id").get<std::string>());
  EXPECT_EQ(j.at("state"), "failed");
  EXPECT_FALSE(j.at("error").get<std::string>().empty());
}

TEST_F(HttpService, MultipartUploadWithParams) {
  const std::string png = encode_png(generated_target(service_->generator(), 9));
  httplib::Client c("127.0.0.1", port_);
  httplib::MultipartFormDataItems items{{"image", png, "x.png", "image/png"},
                                        {"params", R"({"tau": 1.0})", "", "application/json"}};
  const auto r = c.Post("/v1/invert", items);
  ASSERT_EQ(r->status, 202);
  service_->wait_idle();
  const json j = get_json("/v1/jobs/" + json::parse(r->body).at("id").get<std::string>());
  ASSERT_EQ(j.at("state"), "done");
  const json inv = get_json("/v1/bundles/" + j.at("bundle_id").get<std::string>() + "/invertibility");
  EXPECT_EQ(inv.at("tau"), 1.0);
  for (const json& s : inv.at("segments")) EXPECT_EQ(s.at("space"), 0);
}
