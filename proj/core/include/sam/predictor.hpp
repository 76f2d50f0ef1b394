#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sam/error_dataset.hpp"
#include "sam/invertibility.hpp"
#include "sam/nn/layers.hpp"

namespace sam {

struct PredictorTrainConfig {
  int epochs = 60;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct TrainingHistory {
  std::vector<double> train_loss;       // per epoch, mean over batches
  std::vector<double> validation_loss;  // per epoch; empty without a validation split
};

/// Encoder-decoder backbone with an 8-channel output shared by one
/// three-convolution head per latent space. Heads end in a rectifier, so
/// predictions are non-negative.
class PredictorModel {
 public:
  PredictorModel(int spaces, int resolution, std::uint64_t seed);

  int spaces() const { return spaces_; }
  int resolution() const { return resolution_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& checkpoint_id() const { return checkpoint_id_; }

  /// [B,3,R,R] -> one [B,1,R,R] map per space.
  std::vector<nn::Var> forward(const nn::Var& images, bool training) const;

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<PredictorModel> load(const std::filesystem::path& path);

  nn::ParameterSet& parameters() { return params_; }

 private:
  struct Head {
    nn::Conv c1, c2, c3;
    nn::Var g1, b1, g2, b2;
    nn::BatchNormState* bn1 = nullptr;
    nn::BatchNormState* bn2 = nullptr;
  };
  void build();

  int spaces_;
  int resolution_;
  std::uint64_t seed_;
  std::string checkpoint_id_;
  nn::ParameterSet params_;
  nn::Conv stem_, down1_, down2_, mid_, up1_, up2_, out_;
  std::vector<Head> heads_;
};

struct TrainedPredictor {
  std::unique_ptr<PredictorModel> model;
  TrainingHistory history;
  std::vector<std::string> validation_ids;
};

/// Joint l2 regression of all heads onto the measured maps. Throws
/// UsageError for an empty dataset or records with missing maps.
TrainedPredictor train_predictor(const std::vector<DatasetRecord>& dataset, const PredictorTrainConfig& cfg,
                                 int resolution = 32);

/// Mean squared error of the model's maps against measured ones.
double predictor_l2(const PredictorModel& model, const std::vector<DatasetRecord>& records);
/// Same error for a predictor that always outputs `mean_maps`.
double constant_baseline_l2(const std::vector<nn::Tensor>& mean_maps, const std::vector<DatasetRecord>& records);
/// Per-space pixelwise mean over the records.
std::vector<nn::Tensor> mean_maps(const std::vector<DatasetRecord>& records);

/// Predicted maps at the image resolution. Images of another size are
/// resampled in and out; with `strict` a mismatch is a ShapeError instead.
ErrorMap predict_error_maps(const PredictorModel& model, const Image& image, bool strict = false);

}  // namespace sam
