#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "../support/toy.hpp"
#include "sam/bench.hpp"
#include "sam/errors.hpp"
#include "sam/fixtures.hpp"
#include "sam/metrics.hpp"
#include "sam/pipeline.hpp"
#include "sam/predictor.hpp"
#include "sam/spaces.hpp"

using namespace sam;
using testing_support::toy;
using testing_support::toy_prior;

TEST(Psnr, AnalyticValues) {
  Image x = make_image(8, 8, 0.2);
  Image y = make_image(8, 8, 0.3);
  EXPECT_NEAR(psnr(x, y, 1.0), 20.0, 1e-9);
  EXPECT_EQ(psnr(x, x), kPsnrCap);
}

TEST(EvalReport, CsvHasMeanRow) {
  EvalReport r;
  r.method = "sam";
  r.add({"a", "sam", 20.0, 0.1, 1.0});
  r.add({"b", "sam", 30.0, 0.3, 3.0});
  EXPECT_DOUBLE_EQ(r.mean_psnr(), 25.0);
  EXPECT_DOUBLE_EQ(r.mean_lpips(), 0.2);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("image_id,method,psnr_db,lpips,seconds\n", 0), 0u);
  EXPECT_NE(csv.find("\nmean,sam,25"), std::string::npos);
}

TEST(SamConfig, JsonRoundTripAndValidation) {
  SamConfig c;
  c.tau = 0.3;
  c.segmenter = "grid:4";
  c.optimization.steps = 17;
  const SamConfig back = SamConfig::from_json(c.to_json());
  EXPECT_EQ(back.tau, 0.3);
  EXPECT_EQ(back.segmenter, "grid:4");
  EXPECT_EQ(back.optimization.steps, 17);
  c.tau = -0.1;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_THROW(SamConfig::from_json({{"tau", "high"}}), UsageError);
}

TEST(SamPipeline, MeasuredMapsDriveTheAssignment) {
  const auto g = toy();
  const Image x = overlay_target(*g, 21);
  SamConfig cfg;
  cfg.optimization.steps = 30;
  cfg.probe_steps = 20;
  int calls = 0;
  const SamResult r = invert_sam(x, *g, toy_prior(), cfg, nullptr, [&](int, int, const LossBreakdown&) { ++calls; });
  EXPECT_EQ(calls, 30);
  EXPECT_EQ(r.raw_maps.spaces(), space_count(*g));
  EXPECT_EQ(r.raw_maps.source, ErrorSource::Measured);
  EXPECT_EQ(r.refined_maps.source, ErrorSource::Refined);
  EXPECT_EQ(static_cast<int>(r.assignment.spaces.size()), r.segments.segment_count);
  EXPECT_EQ(r.assignment.spaces, select_assignment(r.refined_maps, r.segments, cfg.tau).spaces);
  EXPECT_EQ(r.inversion.bundle.assignment.spaces, r.assignment.spaces);
}

TEST(SamPipeline, PredictorHeadCountMustMatch) {
  const auto g = toy();
  const PredictorModel wrong(3, 32, 1);
  EXPECT_THROW(invertibility_maps(overlay_target(*g, 1), *g, toy_prior(), {}, &wrong), UsageError);
  const PredictorModel right(5, 32, 1);
  EXPECT_EQ(invertibility_maps(overlay_target(*g, 1), *g, toy_prior(), {}, &right).source, ErrorSource::Predicted);
}

TEST(Bench, CurvesTrackBestSoFarWithinBudgets) {
  const std::vector<Image> images(2, make_image(4, 4));
  std::vector<RuntimeMethod> methods{
      {"fast", [](const Image&, const CheckpointSink& sink) { sink(30.0); }},
      {"slow", [](const Image&, const CheckpointSink& sink) {
         sink(10.0);
         std::this_thread::sleep_for(std::chrono::milliseconds(30));
         sink(25.0);
         sink(20.0);
       }},
      {"crash", [](const Image&, const CheckpointSink& sink) {
         sink(5.0);
         throw std::runtime_error("boom");
       }},
  };
  const auto curves = benchmark_runtime(methods, images, {0.01, 0.1, 1.0});
  ASSERT_EQ(curves.size(), 3u);
  EXPECT_DOUBLE_EQ(curves[0].points.front().psnr_db, 30.0);
  EXPECT_DOUBLE_EQ(curves[1].points.front().psnr_db, 10.0);
  EXPECT_DOUBLE_EQ(curves[1].points.back().psnr_db, 25.0);
  for (std::size_t i = 1; i < curves[1].points.size(); ++i)
    EXPECT_GE(curves[1].points[i].psnr_db, curves[1].points[i - 1].psnr_db);
  EXPECT_TRUE(curves[2].flagged);
  EXPECT_EQ(curves[2].error, "boom");
  EXPECT_FALSE(curves[0].flagged);
  const std::string csv = curves_to_csv(curves);
  EXPECT_EQ(csv.rfind("method,seconds,psnr_db\n", 0), 0u);
  EXPECT_NE(curves_to_svg(curves).find("<svg"), std::string::npos);
  const auto budgets = log_budgets(10.0, 2);
  EXPECT_TRUE(std::is_sorted(budgets.begin(), budgets.end()));
  EXPECT_NEAR(budgets.back(), 10.0, 1e-9);
}
