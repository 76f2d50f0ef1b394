#include "sam/predictor.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sam/errors.hpp"
#include "sam/inversion.hpp"
#include "sam/nn/adam.hpp"
#include "sam/nn/ops.hpp"

namespace sam {

namespace {

constexpr int kBackboneOut = 8;

nn::Var act(const nn::Var& x) { return nn::leaky_relu(x, 0.2); }

nn::Tensor stack_images(const std::vector<const Image*>& images, int res, bool flip_mask_bits, std::uint64_t flips) {
  const int b = static_cast<int>(images.size());
  nn::Tensor out({b, 3, res, res});
  const std::size_t item = static_cast<std::size_t>(3) * res * res;
  for (int i = 0; i < b; ++i) {
    Image img = *images[static_cast<std::size_t>(i)];
    if (image_height(img) != res || image_width(img) != res) img = resize_image(img, res, res);
    const bool flip = flip_mask_bits && ((flips >> i) & 1U);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          out[i * item + (static_cast<std::size_t>(c) * res + y) * res + x] = img.at(c, y, flip ? res - 1 - x : x);
  }
  return out;
}

nn::Tensor stack_maps(const std::vector<const nn::Tensor*>& maps, int res, bool flip_mask_bits, std::uint64_t flips) {
  const int b = static_cast<int>(maps.size());
  nn::Tensor out({b, 1, res, res});
  const std::size_t item = static_cast<std::size_t>(res) * res;
  for (int i = 0; i < b; ++i) {
    nn::Tensor m = *maps[static_cast<std::size_t>(i)];
    if (m.dim(0) != res || m.dim(1) != res) m = nn::resize_bilinear(m, res, res);
    const bool flip = flip_mask_bits && ((flips >> i) & 1U);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) out[i * item + static_cast<std::size_t>(y) * res + x] = m[static_cast<std::size_t>(y) * res + (flip ? res - 1 - x : x)];
  }
  return out;
}

void check_dataset(const std::vector<DatasetRecord>& dataset) {
  if (dataset.empty()) throw UsageError("predictor dataset is empty");
  const int spaces = dataset.front().maps.spaces();
  for (const DatasetRecord& r : dataset) {
    if (r.maps.spaces() != spaces || spaces == 0) {
      throw UsageError(fmt::format("record '{}' has {} maps, expected {}", r.id, r.maps.spaces(), spaces));
    }
    for (const nn::Tensor& m : r.maps.maps)
      if (m.empty()) throw UsageError(fmt::format("record '{}' has a missing map", r.id));
  }
}

}  // namespace

PredictorModel::PredictorModel(int spaces, int resolution, std::uint64_t seed)
    : spaces_(spaces), resolution_(resolution), seed_(seed) {
  if (spaces < 1) throw UsageError("predictor needs at least one space");
  if (resolution < 8 || resolution % 4 != 0) throw UsageError(fmt::format("predictor resolution {} must be a multiple of 4", resolution));
  checkpoint_id_ = fmt::format("predictor:{}:{}", spaces, seed);
  build();
}

void PredictorModel::build() {
  std::mt19937_64 rng(seed_);
  stem_ = nn::make_conv(params_, "stem", 3, 16, 3, 1, rng);
  down1_ = nn::make_conv(params_, "down1", 16, 32, 3, 2, rng);
  down2_ = nn::make_conv(params_, "down2", 32, 32, 3, 2, rng);
  mid_ = nn::make_conv(params_, "mid", 32, 32, 3, 1, rng);
  up1_ = nn::make_conv(params_, "up1", 64, 16, 3, 1, rng);
  up2_ = nn::make_conv(params_, "up2", 32, 16, 3, 1, rng);
  out_ = nn::make_conv(params_, "out", 16, kBackboneOut, 3, 1, rng);
  for (int s = 0; s < spaces_; ++s) {
    const std::string p = fmt::format("head{}.", s);
    Head h;
    h.c1 = nn::make_conv(params_, p + "conv1", kBackboneOut, kBackboneOut, 3, 1, rng);
    h.g1 = params_.add(p + "bn1.gamma", nn::Tensor({kBackboneOut}, 1.0));
    h.b1 = params_.add(p + "bn1.beta", nn::Tensor({kBackboneOut}));
    h.bn1 = &params_.add_batch_norm(p + "bn1", kBackboneOut);
    h.c2 = nn::make_conv(params_, p + "conv2", kBackboneOut, kBackboneOut, 3, 1, rng);
    h.g2 = params_.add(p + "bn2.gamma", nn::Tensor({kBackboneOut}, 1.0));
    h.b2 = params_.add(p + "bn2.beta", nn::Tensor({kBackboneOut}));
    h.bn2 = &params_.add_batch_norm(p + "bn2", kBackboneOut);
    // Starts near softplus(-3) ~ 0.05, the scale of typical error maps.
    h.c3 = nn::make_conv(params_, p + "conv3", kBackboneOut, 1, 3, 1, rng, 0.1, -3.0);
    heads_.push_back(h);
  }
}

std::vector<nn::Var> PredictorModel::forward(const nn::Var& images, bool training) const {
  const nn::Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != resolution_ || s[3] != resolution_) {
    throw ShapeError(fmt::format("predictor expects [B,3,{},{}], got {}", resolution_, resolution_, nn::shape_str(s)));
  }
  const nn::Var e0 = act(stem_(images));
  const nn::Var e1 = act(down1_(e0));
  const nn::Var e2 = act(mid_(act(down2_(e1))));
  const nn::Var d1 = act(up1_(nn::concat_channels(nn::upsample_nearest2x(e2), e1)));
  const nn::Var d0 = act(up2_(nn::concat_channels(nn::upsample_nearest2x(d1), e0)));
  const nn::Var feat = act(out_(d0));
  std::vector<nn::Var> maps;
  for (const Head& h : heads_) {
    nn::Var x = act(nn::batch_norm(h.c1(feat), h.g1, h.b1, *h.bn1, training));
    x = act(nn::batch_norm(h.c2(x), h.g2, h.b2, *h.bn2, training));
    maps.push_back(nn::softplus(h.c3(x)));
  }
  return maps;
}

void PredictorModel::save(const std::filesystem::path& path) const {
  SambContainer c;
  c.meta = {{"kind", "predictor"}, {"spaces", spaces_}, {"resolution", resolution_}, {"seed", seed_},
            {"checkpoint_id", checkpoint_id_}, {"backbone_channels", kBackboneOut}};
  params_.save_to(c);
  write_samb(path, c);
}

std::unique_ptr<PredictorModel> PredictorModel::load(const std::filesystem::path& path) {
  const SambContainer c = read_samb(path);
  if (c.meta.value("kind", "") != "predictor") throw LoadError(path.string() + ": not a predictor checkpoint");
  try {
    auto m = std::make_unique<PredictorModel>(c.meta.at("spaces").get<int>(), c.meta.at("resolution").get<int>(),
                                              c.meta.at("seed").get<std::uint64_t>());
    m->params_.load_from(c);
    m->checkpoint_id_ = c.meta.value("checkpoint_id", m->checkpoint_id_);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

std::vector<nn::Tensor> mean_maps(const std::vector<DatasetRecord>& records) {
  check_dataset(records);
  std::vector<nn::Tensor> means = records.front().maps.maps;
  for (std::size_t i = 1; i < records.size(); ++i)
    for (std::size_t s = 0; s < means.size(); ++s) means[s] += records[i].maps.maps[s];
  for (nn::Tensor& m : means) m *= 1.0 / static_cast<double>(records.size());
  return means;
}

double constant_baseline_l2(const std::vector<nn::Tensor>& means, const std::vector<DatasetRecord>& records) {
  check_dataset(records);
  double total = 0;
  std::size_t count = 0;
  for (const DatasetRecord& r : records)
    for (std::size_t s = 0; s < means.size(); ++s) {
      total += nn::squared_norm(r.maps.maps[s] - means[s]);
      count += means[s].size();
    }
  return total / static_cast<double>(count);
}

double predictor_l2(const PredictorModel& model, const std::vector<DatasetRecord>& records) {
  check_dataset(records);
  double total = 0;
  std::size_t count = 0;
  for (const DatasetRecord& r : records) {
    const ErrorMap p = predict_error_maps(model, r.image);
    for (std::size_t s = 0; s < p.maps.size(); ++s) {
      total += nn::squared_norm(p.maps[s] - r.maps.maps[s]);
      count += p.maps[s].size();
    }
  }
  return total / static_cast<double>(count);
}

TrainedPredictor train_predictor(const std::vector<DatasetRecord>& dataset, const PredictorTrainConfig& cfg,
                                 int resolution) {
  check_dataset(dataset);
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw UsageError("predictor training needs epochs >= 1 and batch_size >= 1");
  TrainedPredictor out;
  out.model = std::make_unique<PredictorModel>(dataset.front().maps.spaces(), resolution, cfg.seed);
  PredictorModel& model = *out.model;

  std::mt19937_64 rng(cfg.seed ^ 0x7a11ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(dataset.size()));
  if (dataset.size() < 2) n_val = 0;
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<DatasetRecord> validation;
  for (std::size_t i = train.size(); i < order.size(); ++i) {
    validation.push_back(dataset[order[i]]);
    out.validation_ids.push_back(dataset[order[i]].id);
  }

  nn::Adam adam;
  adam.add_group(model.parameters().trainable(), {cfg.learning_rate});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Image*> imgs;
      for (std::size_t k = start; k < end; ++k) imgs.push_back(&dataset[train[k]].image);
      const std::uint64_t flips = rng();
      const nn::Var x = nn::Var::constant(stack_images(imgs, resolution, true, flips));
      const std::vector<nn::Var> pred = model.forward(x, true);
      nn::Var loss;
      for (int s = 0; s < model.spaces(); ++s) {
        std::vector<const nn::Tensor*> maps;
        for (std::size_t k = start; k < end; ++k) maps.push_back(&dataset[train[k]].maps.maps[static_cast<std::size_t>(s)]);
        nn::Var term = nn::mse(pred[static_cast<std::size_t>(s)], nn::Var::constant(stack_maps(maps, resolution, true, flips)));
        loss = loss ? nn::add(loss, term) : term;
      }
      loss = nn::scale(loss, 1.0 / model.spaces());
      adam.zero_grad();
      nn::backward(loss);
      adam.step();
      epoch_loss += loss.value().item();
      ++batches;
    }
    out.history.train_loss.push_back(epoch_loss / std::max(1, batches));
    if (!validation.empty()) out.history.validation_loss.push_back(predictor_l2(model, validation));
  }
  return out;
}

ErrorMap predict_error_maps(const PredictorModel& model, const Image& image, bool strict) {
  check_image(image);
  const int h = image_height(image);
  const int w = image_width(image);
  const int r = model.resolution();
  if (h != r || w != r) {
    if (strict) throw ShapeError(fmt::format("image is {}x{}, predictor expects {}x{}", h, w, r, r));
    spdlog::warn("resampling {}x{} image to predictor resolution {}", h, w, r);
  }
  nn::NoGradGuard no_grad;
  const nn::Var x = nn::Var::constant(stack_images({&image}, r, false, 0));
  const std::vector<nn::Var> maps = model.forward(x, false);
  ErrorMap out;
  out.source = ErrorSource::Predicted;
  for (const nn::Var& m : maps) {
    nn::Tensor t = m.value().reshaped({r, r});
    if (h != r || w != r) {
      t = nn::resize_bilinear(t, h, w);
      for (double& v : t.values()) v = std::max(0.0, v);
    }
    out.maps.push_back(std::move(t));
  }
  return out;
}

}  // namespace sam
