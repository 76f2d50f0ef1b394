#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "../support/toy.hpp"
#include "sam/conditional.hpp"
#include "sam/encoder.hpp"
#include "sam/errors.hpp"
#include "sam/error_dataset.hpp"
#include "sam/fixtures.hpp"
#include "sam/metrics.hpp"
#include "sam/predictor.hpp"
#include "sam/spaces.hpp"

using namespace sam;
using testing_support::toy;
using testing_support::toy_prior;

namespace fs = std::filesystem;

namespace {

std::vector<DatasetRecord> synthetic_records(int n) {
  // Maps that depend on the image: brighter pixels are harder to invert.
  const auto g = toy();
  std::vector<DatasetRecord> out;
  for (int i = 0; i < n; ++i) {
    DatasetRecord r{"r" + std::to_string(i), overlay_target(*g, 100 + i), {}};
    for (int s = 0; s < space_count(*g); ++s) {
      nn::Tensor m({32, 32});
      for (int p = 0; p < 32 * 32; ++p) m[p] = 0.05 * (1.0 + r.image[p]) / (1.0 + s);
      r.maps.maps.push_back(m);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST(Predictor, SaveLoadReproducesOutputs) {
  const PredictorModel model(5, 32, 3);
  const auto path = fs::temp_directory_path() / "sam-test-predictor.samb";
  model.save(path);
  const auto back = PredictorModel::load(path);
  fs::remove(path);
  EXPECT_EQ(back->checkpoint_id(), model.checkpoint_id());
  const Image x = overlay_target(*toy(), 4);
  const ErrorMap a = predict_error_maps(model, x);
  const ErrorMap b = predict_error_maps(*back, x);
  ASSERT_EQ(a.spaces(), 5);
  EXPECT_EQ(a.source, ErrorSource::Predicted);
  for (int s = 0; s < 5; ++s) {
    EXPECT_EQ(a.maps[s].shape(), (nn::Shape{32, 32}));
    EXPECT_LT(nn::max_abs_diff(a.maps[s], b.maps[s]), 1e-5);
    for (double v : a.maps[s].values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Predictor, ResamplesOrRejectsOtherSizes) {
  const PredictorModel model(5, 32, 3);
  const Image big = resize_image(overlay_target(*toy(), 5), 48, 40);
  const ErrorMap m = predict_error_maps(model, big);
  EXPECT_EQ(m.height(), 48);
  EXPECT_EQ(m.width(), 40);
  EXPECT_THROW(predict_error_maps(model, big, true), ShapeError);
}

TEST(Predictor, TrainingReducesLossAndRejectsEmptyData) {
  EXPECT_THROW(train_predictor({}, {}), UsageError);
  PredictorTrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 3e-3;
  const auto records = synthetic_records(16);
  const TrainedPredictor t = train_predictor(records, cfg);
  ASSERT_EQ(t.history.train_loss.size(), 15u);
  EXPECT_LT(t.history.train_loss.back(), t.history.train_loss.front());
  EXPECT_FALSE(t.validation_ids.empty());
  EXPECT_LT(predictor_l2(*t.model, records), constant_baseline_l2(std::vector<nn::Tensor>(5, nn::Tensor({32, 32})), records));
}

TEST(ErrorDataset, BuildIsResumableAndLoadsSorted) {
  const auto g = toy();
  const fs::path dir = fs::temp_directory_path() / "sam-test-dataset";
  fs::remove_all(dir);
  OptimizationConfig cfg;
  cfg.steps = 5;
  std::vector<LabeledImage> items{{"b", overlay_target(*g, 1)}, {"a", generated_target(*g, 2)}};
  const DatasetBuildReport first = build_error_dataset(items, *g, toy_prior(), cfg, dir);
  EXPECT_EQ(first.computed, 2);
  const DatasetBuildReport second = build_error_dataset(items, *g, toy_prior(), cfg, dir);
  EXPECT_EQ(second.reused, 2);
  EXPECT_EQ(second.computed, 0);
  cfg.steps = 6;
  EXPECT_EQ(build_error_dataset({items[0]}, *g, toy_prior(), cfg, dir).computed, 1);
  const auto records = load_error_dataset(dir);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].id, "a");
  EXPECT_EQ(records[0].maps.spaces(), 5);
  fs::remove_all(dir);
}

TEST(Encoder, UntrainedEncoderReturnsStartingPoint) {
  const auto g = toy();
  EncoderSet set(g->id());
  for (int s = 0; s < space_count(*g); ++s) set.add(std::make_unique<Encoder>(*g, s, 10 + s));
  const Image x = overlay_target(*g, 7);
  const SegmentMap seg = segment_image(x, "grid:2");
  LayerAssignment a;
  a.spaces = {0, 1, 2, 4};
  const LatentBundle b = encode_bundle(x, a, seg, build_masks(a, seg, *g), *g, set);
  nn::Tensor init = g->initial_codes();
  nn::round_to_float(init);
  EXPECT_TRUE(nn::bitwise_equal(b.w_plus.w_plus, init));
  for (const auto& [s, d] : b.delta_f) EXPECT_EQ(nn::squared_norm(d), 0.0);
  EXPECT_EQ(b.delta_f.size(), 3u);
}

TEST(Encoder, SaveLoadAndGeneratorCheck) {
  const auto g = toy();
  EncoderSet set(g->id());
  set.add(std::make_unique<Encoder>(*g, 0, 1));
  set.add(std::make_unique<Encoder>(*g, 3, 2));
  const auto path = fs::temp_directory_path() / "sam-test-encoders.samb";
  set.save(path);
  const EncoderSet back = EncoderSet::load(*g, path);
  EXPECT_EQ(back.spaces(), (std::vector<int>{0, 3}));
  EXPECT_EQ(back.at(3).spec().truncation_resolution, g->feature_shape(space_layer(*g, 3))[1]);
  const auto other = load_generator("toy", 9);
  EXPECT_THROW(EncoderSet::load(*other, path), LoadError);
  fs::remove(path);
}

TEST(Encoder, TrainingLowersHeldOutLoss) {
  const auto g = toy();
  std::vector<EncoderSample> samples;
  for (int i = 0; i < 10; ++i) {
    EncoderSample s{overlay_target(*g, 300 + i), {}, {}};
    s.segments = segment_image(s.image, "grid:2");
    s.assignment.spaces = {0, i % 2 == 0 ? 2 : 0, 0, 0};
    samples.push_back(std::move(s));
  }
  EncoderTrainConfig cfg;
  cfg.epochs = 3;
  const EncoderTrainingResult r = train_encoders(samples, *g, toy_prior(), cfg);
  EXPECT_TRUE(r.encoders.has(0));
  EXPECT_TRUE(r.encoders.has(2));
  EXPECT_FALSE(r.encoders.has(4));
  const auto& h = r.loss_history.at(0);
  EXPECT_LT(h.back(), h.front());
}

TEST(Conditional, OracleClassifierRecoversLabels) {
  const auto cg = ConditionalGenerator::toy(11);
  int correct = 0;
  for (int i = 0; i < 40; ++i) {
    const int label = i % cg->num_classes();
    correct += predict_class(cg->sample(label, 500 + i), *cg) == label ? 1 : 0;
  }
  EXPECT_GE(correct, 39);
  const Image x = cg->sample(3, 77);
  EXPECT_EQ(predict_class(x, *cg), 3);
  EXPECT_EQ(predict_class(x, *cg), predict_class(x, *cg));
  EXPECT_THROW(predict_class(x, *cg, "resnet"), UsageError);
}

TEST(Conditional, BoundGeneratorLayoutAndIdentity) {
  const auto cg = ConditionalGenerator::toy(11);
  const auto g = cg->bind(2);
  EXPECT_EQ(g->boundaries(), (std::vector<int>{0, 2, 4, 6}));
  EXPECT_EQ(g->code_space_name(), "Z+");
  EXPECT_EQ(space_names(*g), (std::vector<std::string>{"Z+", "F2", "F4"}));
  const nn::Tensor z = cg->sample_codes(5);
  for (int r = 1; r < 4; ++r)
    for (int k = 0; k < cg->code_dim(); ++k) EXPECT_EQ(z[r * cg->code_dim() + k], z[k]);
  EXPECT_LT(nn::max_abs_diff(synthesize(*g, z), cg->sample(2, 5)), 1e-12);
  const SegmentMap seg = segment_image(make_image(32, 32), "grid:2");
  LayerAssignment a;
  a.spaces = {0, 1, 2, 1};
  const LatentBundle b = make_bundle(*g, z, a, seg, build_masks(a, seg, *g));
  EXPECT_LT(nn::max_abs_diff(form_image(*g, b), synthesize(*g, z)), 1e-6);
  EXPECT_THROW(cg->bind(8), UsageError);
}

TEST(Conditional, ZPlusRegularizerCases) {
  const auto cg = ConditionalGenerator::toy(11);
  const StyleStatistics s = cg->code_statistics(2000, 1);
  const int d = cg->code_dim();
  nn::Tensor z({4, d});
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < d; ++k) z[r * d + k] = s.mu[k];
  EXPECT_NEAR(zplus_regularizer(z, s), 0.0, 1e-20);
  nn::Tensor one({1, d});
  std::mt19937_64 rng(2);
  for (int k = 0; k < d; ++k) one[k] = s.mu[k] + std::normal_distribution<double>()(rng);
  nn::Tensor two = one;
  for (int k = 0; k < d; ++k) two[k] = s.mu[k] + 2 * (one[k] - s.mu[k]);
  EXPECT_NEAR(zplus_regularizer(two, s), 4 * zplus_regularizer(one, s), 1e-9 * zplus_regularizer(two, s));
  EXPECT_THROW(zplus_regularizer(nn::Tensor({4, d + 1}), s), ShapeError);
}

TEST(Conditional, InversionKeepsPredictedClass) {
  const auto cg = ConditionalGenerator::toy(11);
  const Image x = cg->sample(6, 123);
  const SegmentMap seg = segment_image(x, "grid:2");
  LayerAssignment a;
  a.spaces = {0, 1, 2, 0};
  OptimizationConfig cfg;
  cfg.steps = 30;
  const ConditionalInversion r = invert_class_conditional(x, *cg, a, seg, cfg, cg->code_statistics(2000, 1));
  EXPECT_EQ(r.class_label, 6);
  EXPECT_EQ(r.result.bundle.class_label, 6);
  EXPECT_EQ(r.result.bundle.generator_id, cg->bind(6)->id());
  EXPECT_LT(r.result.trace[static_cast<std::size_t>(r.result.best_step)].total, r.result.trace.front().total);
}
