#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "../support/toy.hpp"
#include "sam/edit.hpp"
#include "sam/errors.hpp"
#include "sam/fixtures.hpp"
#include "sam/spaces.hpp"

using namespace sam;
using testing_support::toy;

namespace fs = std::filesystem;

namespace {

LatentBundle mixed_bundle(const LayeredGenerator& g, std::vector<int> spaces, std::uint64_t seed) {
  const SegmentMap seg = segment_image(make_image(32, 32), "grid:2");
  LayerAssignment a;
  a.spaces = std::move(spaces);
  std::mt19937_64 rng(seed);
  LatentBundle b = make_bundle(g, g.initial_codes(), a, seg, build_masks(a, seg, g));
  for (auto& [s, d] : b.delta_f) d = nn::Tensor::randn(d.shape(), rng, 0.2);
  return b;
}

EditDirection direction_up_to(const LayeredGenerator& g, int deepest, double fill = 0.1) {
  EditDirection d{"test", "toy", nn::Tensor({g.code_rows(), g.code_dim()}, fill), {}};
  d.capability.assign(static_cast<std::size_t>(space_count(g)), false);
  for (int s = 0; s <= deepest; ++s) d.capability[static_cast<std::size_t>(s)] = true;
  return d;
}

}  // namespace

TEST(EditDirection, CapabilityMustBeMonotone) {
  const auto g = toy();
  EditDirection d = direction_up_to(*g, 2);
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.deepest_capable(), 2);
  d.capability[1] = false;
  EXPECT_THROW(d.validate(), UsageError);
  d = direction_up_to(*g, 2);
  d.delta[3] = std::nan("");
  EXPECT_THROW(d.validate(), UsageError);
}

TEST(EditDirection, TableDirectionsCoverTheAppendix) {
  const auto g = toy();
  const auto dirs = synthesize_table_directions(*g, 500);
  ASSERT_EQ(dirs.size(), 16u);
  DirectionRegistry reg;
  for (const auto& d : dirs) reg.add(d);
  EXPECT_EQ(reg.size(), 16u);
  EXPECT_EQ(reg.list("cars").size(), 4u);
  EXPECT_EQ(reg.at("car size").deepest_capable(), 0);
  EXPECT_EQ(reg.at("car color (red)").deepest_capable(), 4);
  EXPECT_EQ(reg.at("change pose (horses)").dataset, "horses");
  EXPECT_THROW(reg.at("no such edit"), NotFoundError);
  for (const auto& d : dirs) EXPECT_GT(nn::squared_norm(d.delta), 0.0) << d.name;
}

TEST(EditDirection, SambRoundTripAndDirectoryLoad) {
  const auto g = toy();
  const fs::path dir = fs::temp_directory_path() / "sam-test-directions";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EditDirection d = direction_up_to(*g, 3, 0.25);
  d.name = "sky";
  save_direction(dir / "sky.samb", d, *g);
  d.name = "grass";
  d.capability = {true, false, false, false, false};
  save_direction(dir / "grass.samb", d, *g);
  const DirectionRegistry reg = load_directions(dir, *g);
  EXPECT_EQ(reg.size(), 2u);
  EXPECT_EQ(reg.at("sky").deepest_capable(), 3);
  EXPECT_EQ(reg.at("grass").deepest_capable(), 0);
  EXPECT_TRUE(nn::bitwise_equal(reg.at("sky").delta, d.delta));

  SambContainer wrong = direction_to_samb(d, space_names(*g));
  wrong.put("delta", nn::Tensor({2, 3}));
  write_samb(dir / "wrong.samb", wrong);
  EXPECT_THROW(load_directions(dir, *g), LoadError);
  fs::remove_all(dir);
}

TEST(Applicability, ReportsFailingSegments) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 1, 3, 4}, 1);
  const Applicability v = check_applicability(direction_up_to(*g, 1), b.assignment);
  EXPECT_FALSE(v.ok());
  EXPECT_EQ(v.failing_segments, (std::vector<int>{2, 3}));
  EXPECT_TRUE(check_applicability(direction_up_to(*g, 4), b.assignment).ok());
}

TEST(ApplyEdit, RefusesInapplicableUnlessForced) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 1, 3, 4}, 2);
  const EditDirection d = direction_up_to(*g, 1);
  EXPECT_THROW(apply_edit(*g, b, d, 1.0), UsageError);
  const Image forced = apply_edit(*g, b, d, 1.0, true);
  EXPECT_TRUE(forced.all_finite());
  EXPECT_GT(nn::max_abs_diff(forced, form_image(*g, b)), 0.0);
}

TEST(ApplyEdit, ZeroMagnitudeIsBitIdentical) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 2, 3, 4}, 3);
  EXPECT_TRUE(nn::bitwise_equal(apply_edit(*g, b, direction_up_to(*g, 4), 0.0), form_image(*g, b)));
}

TEST(ApplyEdit, WPlusOnlyMatchesShiftedSynthesis) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 0, 0, 0}, 4);
  const EditDirection d = direction_up_to(*g, 0, 0.3);
  nn::Tensor shifted = b.w_plus.w_plus;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = b.w_plus.w_plus[i] + -2.0 * d.delta[i];
  EXPECT_TRUE(nn::bitwise_equal(apply_edit(*g, b, d, -2.0), synthesize(*g, shifted)));
}

TEST(ApplyEdit, NonFiniteMagnitudeAndShapeErrors) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 0, 0, 0}, 5);
  EditDirection d = direction_up_to(*g, 4);
  EXPECT_THROW(apply_edit(*g, b, d, std::nan("")), UsageError);
  d.delta = nn::Tensor({2, 2});
  EXPECT_THROW(apply_edit(*g, b, d, 1.0), ShapeError);
}

TEST(RenderComparison, StripLayout) {
  const auto g = toy();
  const LatentBundle b = mixed_bundle(*g, {0, 1, 2, 0}, 6);
  const EditDirection d = direction_up_to(*g, 2);
  const Image only = render_comparison(*g, b, d, {});
  EXPECT_EQ(image_width(only), 32);
  const Image strip = render_comparison(*g, b, d, {0.0, 1.0, -1.0});
  EXPECT_EQ(image_width(strip), 4 * 32);
  EXPECT_EQ(image_height(strip), 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) EXPECT_EQ(strip.at(c, y, x), strip.at(c, y, x + 32));
}
