#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "../support/toy.hpp"
#include "sam/errors.hpp"
#include "sam/fixtures.hpp"
#include "sam/invertibility.hpp"
#include "sam/samb.hpp"

using namespace sam;
using testing_support::toy;

TEST(Samb, ArrayHeaderLayout) {
  SambArray a;
  a.dims = {2, 3};
  a.values = {1, 2, 3, 4, 5, 6};
  const std::string blob = encode_array(a);
  ASSERT_EQ(blob.size(), 16u + 2 * 4 + 6 * 4);
  EXPECT_EQ(blob.substr(0, 4), "SAMB");
  EXPECT_EQ(blob[4], 1);
  EXPECT_EQ(blob[5], 1);
  EXPECT_EQ(blob[6], 2);
  EXPECT_EQ(static_cast<unsigned char>(blob[16]), 2);
  const SambArray back = decode_array(blob);
  EXPECT_EQ(back.dims, a.dims);
  EXPECT_EQ(back.values, a.values);
}

TEST(Samb, CorruptBlobsAreLoadErrors) {
  SambArray a;
  a.dims = {4};
  a.values = {1, 2, 3, 4};
  std::string blob = encode_array(a);
  EXPECT_THROW(decode_array(blob.substr(0, blob.size() - 1)), LoadError);
  EXPECT_THROW(decode_array(blob.substr(0, 10)), LoadError);
  std::string bad = blob;
  bad[0] = 'X';
  EXPECT_THROW(decode_array(bad), LoadError);
  bad = blob;
  bad[5] = 7;
  EXPECT_THROW(decode_array(bad), LoadError);
  EXPECT_THROW(SambContainer::from_bytes("not a zip"), LoadError);
  EXPECT_THROW(read_samb("/nonexistent/file.samb"), LoadError);
  EXPECT_THROW(SambContainer{}.tensor("missing"), LoadError);
}

TEST(Samb, BundleRoundTrip) {
  const auto g = toy();
  const SegmentMap seg = segment_image(overlay_target(*g, 1), "graph");
  LayerAssignment a;
  for (int k = 0; k < seg.segment_count; ++k) a.spaces.push_back(k % 5);
  a.tau = 0.1;
  std::mt19937_64 rng(3);
  LatentBundle b = make_bundle(*g, sample_style(*g, 2).w_plus, a, seg, build_masks(a, seg, *g));
  for (auto& [s, d] : b.delta_f) {
    d = nn::Tensor::randn(d.shape(), rng);
    nn::round_to_float(d);
  }
  nn::round_to_float(b.w_plus.w_plus);
  b.class_label = 5;
  const auto path = std::filesystem::temp_directory_path() / "sam-test-bundle.samb";
  write_samb(path, bundle_to_samb(*g, b));
  const LatentBundle back = bundle_from_samb(*g, read_samb(path));
  std::filesystem::remove(path);
  EXPECT_TRUE(nn::bitwise_equal(back.w_plus.w_plus, b.w_plus.w_plus));
  ASSERT_EQ(back.delta_f.size(), b.delta_f.size());
  for (const auto& [s, d] : b.delta_f) EXPECT_TRUE(nn::bitwise_equal(back.delta_f.at(s), d));
  EXPECT_EQ(back.segments.labels, b.segments.labels);
  EXPECT_EQ(back.assignment.spaces, b.assignment.spaces);
  EXPECT_EQ(back.assignment.tau, 0.1);
  EXPECT_EQ(back.generator_id, g->id());
  EXPECT_EQ(back.class_label, 5);
  EXPECT_TRUE(nn::bitwise_equal(form_image(*g, back), form_image(*g, b)));
}

TEST(Samb, BundleForAnotherGeneratorIsRejected) {
  const auto g = toy();
  const auto other = load_generator("toy", 8);
  const SegmentMap seg = segment_image(make_image(32, 32), "single");
  const LayerAssignment a = uniform_assignment(seg, 0);
  const SambContainer c = bundle_to_samb(*g, make_bundle(*g, g->initial_codes(), a, seg, build_masks(a, seg, *g)));
  EXPECT_THROW(bundle_from_samb(*other, c), UsageError);
}
