#include "sam/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/adam.hpp"
#include "sam/spaces.hpp"

namespace sam {

namespace {

constexpr int kStemChannels = 16;
constexpr int kBodyChannels = 32;
// The code-space backbone stops at this side before the linear projection.
constexpr int kCodeTruncation = 4;

nn::Var act(const nn::Var& x) { return nn::leaky_relu(x, 0.2); }

}  // namespace

nlohmann::json EncoderSpec::to_json() const {
  return {{"space", space},
          {"input_channels", input_channels},
          {"truncation_resolution", truncation_resolution},
          {"output_channels", output_channels}};
}

EncoderSpec EncoderSpec::from_json(const nlohmann::json& j) {
  try {
    return {j.at("space").get<int>(), j.at("input_channels").get<int>(), j.at("truncation_resolution").get<int>(),
            j.at("output_channels").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad encoder spec: ") + e.what());
  }
}

Encoder::Encoder(const LayeredGenerator& g, int space, std::uint64_t seed) {
  if (space < 0 || space >= space_count(g)) throw UsageError(fmt::format("no latent space {} for '{}'", space, g.id()));
  const int res = g.output_resolution();
  spec_.space = space;
  if (space == 0) {
    spec_.truncation_resolution = kCodeTruncation;
    spec_.output_channels = g.code_rows() * g.code_dim();
    out_shape_ = {g.code_rows(), g.code_dim()};
    code_offset_ = g.initial_codes();
  } else {
    out_shape_ = g.feature_shape(space_layer(g, space));
    spec_.truncation_resolution = out_shape_[1];
    spec_.output_channels = out_shape_[0];
  }
  if (res % spec_.truncation_resolution != 0) {
    throw ShapeError(fmt::format("cannot truncate a {}px backbone at {}", res, spec_.truncation_resolution));
  }

  std::mt19937_64 rng(seed ^ (0xe7c0de00ULL + static_cast<std::uint64_t>(space)));
  stem_ = nn::make_conv(params_, "stem", spec_.input_channels, kStemChannels, 3, 1, rng);
  int channels = kStemChannels;
  for (int side = res, i = 0;; side /= 2, ++i) {
    Block b;
    const std::string p = fmt::format("block{}.", i);
    if (i > 0) {
      b.down = nn::make_conv(params_, p + "down", channels, kBodyChannels, 3, 2, rng);
      channels = kBodyChannels;
    }
    b.a = nn::make_conv(params_, p + "conv_a", channels, channels, 3, 1, rng);
    b.b = nn::make_conv(params_, p + "conv_b", channels, channels, 3, 1, rng, 0.5);
    blocks_.push_back(b);
    if (side == spec_.truncation_resolution) break;
  }
  if (space == 0) {
    const int flat = channels * kCodeTruncation * kCodeTruncation;
    head_linear_.weight = params_.add("head.weight", nn::Tensor({spec_.output_channels, flat}));
    head_linear_.bias = params_.add("head.bias", nn::Tensor({spec_.output_channels}));
  } else {
    head_conv_ = nn::make_conv(params_, "head", channels, spec_.output_channels, 3, 1, rng, 0.0);
  }
}

nn::Var Encoder::forward(const nn::Var& input) const {
  const nn::Shape& s = input.shape();
  if (s.size() != 3 || s[0] != spec_.input_channels) {
    throw ShapeError(fmt::format("encoder expects [{},H,W], got {}", spec_.input_channels, nn::shape_str(s)));
  }
  nn::Var x = act(stem_(input));
  for (const Block& b : blocks_) {
    if (b.down.weight) x = act(b.down(x));
    x = act(nn::add(x, b.b(act(b.a(x)))));
  }
  if (spec_.space == 0) {
    const nn::Var flat = nn::reshape(x, {static_cast<int>(x.value().size())});
    const nn::Var codes = nn::reshape(head_linear_(flat), out_shape_);
    return nn::add(codes, nn::Var::constant(code_offset_));
  }
  return head_conv_(x);
}

// --- sets and persistence ----------------------------------------------------

const Encoder& EncoderSet::at(int space) const {
  auto it = encoders_.find(space);
  if (it == encoders_.end()) throw UsageError(fmt::format("no encoder for latent space {}", space));
  return *it->second;
}

Encoder& EncoderSet::add(std::unique_ptr<Encoder> e) {
  const int space = e->spec().space;
  return *(encoders_[space] = std::move(e));
}

std::vector<int> EncoderSet::spaces() const {
  std::vector<int> out;
  for (const auto& [s, e] : encoders_) out.push_back(s);
  return out;
}

void EncoderSet::save(const std::filesystem::path& path) const {
  SambContainer c;
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& [s, e] : encoders_) {
    specs.push_back(e->spec().to_json());
    e->parameters().save_to(c, fmt::format("enc{}.", s));
  }
  c.meta = {{"kind", "encoders"}, {"generator_id", generator_id_}, {"encoder.json", specs}};
  write_samb(path, c);
}

EncoderSet EncoderSet::load(const LayeredGenerator& g, const std::filesystem::path& path) {
  const SambContainer c = read_samb(path);
  if (c.meta.value("kind", "") != "encoders") throw LoadError(path.string() + ": not an encoder checkpoint");
  const std::string gid = c.meta.value("generator_id", "");
  if (gid != g.id()) throw LoadError(fmt::format("{}: encoders were trained for '{}', not '{}'", path.string(), gid, g.id()));
  EncoderSet set(gid);
  for (const auto& j : c.meta.value("encoder.json", nlohmann::json::array())) {
    const EncoderSpec spec = EncoderSpec::from_json(j);
    auto e = std::make_unique<Encoder>(g, spec.space, 0);
    if (e->spec().truncation_resolution != spec.truncation_resolution ||
        e->spec().output_channels != spec.output_channels) {
      throw LoadError(fmt::format("{}: encoder for space {} does not match the generator", path.string(), spec.space));
    }
    e->parameters().load_from(c, fmt::format("enc{}.", spec.space));
    set.add(std::move(e));
  }
  return set;
}

// --- training and inference ----------------------------------------------------

nn::Tensor encoder_input(const Image& x, const nn::Tensor& mask) {
  check_image(x);
  const int h = image_height(x);
  const int w = image_width(x);
  if (mask.shape() != nn::Shape{h, w}) {
    throw ShapeError(fmt::format("mask {} does not match a {}x{} image", nn::shape_str(mask.shape()), h, w));
  }
  nn::Tensor out({4, h, w});
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  std::copy(mask.values().begin(), mask.values().end(), out.values().begin() + 3 * static_cast<std::ptrdiff_t>(h) * w);
  return out;
}

namespace {

struct PreparedSample {
  const EncoderSample* sample;
  MaskSet masks;
};

template <typename LossFn>
std::vector<double> fit(Encoder& enc, const std::vector<const PreparedSample*>& items, const EncoderTrainConfig& cfg,
                        std::mt19937_64& rng, LossFn&& loss_of) {
  nn::Adam adam;
  adam.add_group(enc.parameters().trainable(), {cfg.learning_rate});
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      nn::Var batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        nn::Var l = loss_of(*items[order[k]]);
        total += l.value().item();
        batch_loss = batch_loss ? nn::add(batch_loss, l) : l;
      }
      adam.zero_grad();
      nn::backward(nn::scale(batch_loss, 1.0 / static_cast<double>(end - start)));
      adam.step();
    }
    history.push_back(total / static_cast<double>(order.size()));
  }
  return history;
}

}  // namespace

EncoderTrainingResult train_encoders(const std::vector<EncoderSample>& samples, const LayeredGenerator& g,
                                     const LatentPrior& prior, const EncoderTrainConfig& cfg) {
  if (samples.empty()) throw UsageError("encoder training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw UsageError("encoder training needs epochs >= 1 and batch_size >= 1");
  cfg.weights.validate();
  std::vector<PreparedSample> prepared;
  for (const EncoderSample& s : samples) prepared.push_back({&s, build_masks(s.assignment, s.segments, g)});

  EncoderTrainingResult out{EncoderSet(g.id()), {}};
  std::mt19937_64 rng(cfg.seed);

  Encoder& code_enc = out.encoders.add(std::make_unique<Encoder>(g, 0, cfg.seed));
  std::vector<const PreparedSample*> all;
  for (const auto& p : prepared) all.push_back(&p);
  const MaskSet no_masks;
  out.loss_history[0] = fit(code_enc, all, cfg, rng, [&](const PreparedSample& p) {
    const Objective objective(g, p.sample->image, prior, cfg.weights);
    const nn::Tensor& region = p.masks.regions.at(0);
    const nn::Var codes = code_enc.forward(nn::Var::constant(encoder_input(p.sample->image, region)));
    return objective.evaluate(codes, {}, no_masks).total;
  });

  // Codes from the frozen code-space encoder are shared by every later stage.
  std::vector<nn::Tensor> frozen_codes;
  {
    nn::NoGradGuard no_grad;
    for (const auto& p : prepared) {
      frozen_codes.push_back(
          code_enc.forward(nn::Var::constant(encoder_input(p.sample->image, p.masks.regions.at(0)))).value());
    }
  }

  for (int space = 1; space < space_count(g); ++space) {
    std::vector<const PreparedSample*> items;
    for (const auto& p : prepared)
      if (p.masks.has_region(space)) items.push_back(&p);
    if (items.empty()) continue;
    Encoder& enc = out.encoders.add(std::make_unique<Encoder>(g, space, cfg.seed));
    out.loss_history[space] = fit(enc, items, cfg, rng, [&](const PreparedSample& p) {
      const Objective objective(g, p.sample->image, prior, cfg.weights);
      const std::size_t idx = static_cast<std::size_t>(&p - prepared.data());
      const nn::Var codes = nn::Var::constant(frozen_codes[idx]);
      const nn::Var delta =
          enc.forward(nn::Var::constant(encoder_input(p.sample->image, p.masks.regions.at(static_cast<std::size_t>(space)))));
      return objective.evaluate(codes, {{space, delta}}, p.masks).total;
    });
  }
  return out;
}

LatentBundle encode_bundle(const Image& x, const LayerAssignment& a, const SegmentMap& seg, const MaskSet& masks,
                           const LayeredGenerator& g, const EncoderSet& encoders) {
  if (!encoders.has(0)) throw UsageError("encoder set has no code-space encoder");
  if (encoders.generator_id() != g.id()) {
    throw UsageError(fmt::format("encoders belong to '{}', not '{}'", encoders.generator_id(), g.id()));
  }
  nn::NoGradGuard no_grad;
  const nn::Tensor codes = encoders.at(0).forward(nn::Var::constant(encoder_input(x, masks.regions.at(0)))).value();
  LatentBundle b = make_bundle(g, codes, a, seg, masks);
  for (auto& [space, delta] : b.delta_f) {
    if (!encoders.has(space)) {
      throw UsageError(fmt::format("no encoder for assigned space {}", space_name(g, space)));
    }
    delta = encoders.at(space)
                .forward(nn::Var::constant(encoder_input(x, masks.regions.at(static_cast<std::size_t>(space)))))
                .value();
  }
  // Match the precision of optimised bundles.
  for (double& v : b.w_plus.w_plus.values()) v = static_cast<float>(v);
  for (auto& [space, delta] : b.delta_f)
    for (double& v : delta.values()) v = static_cast<float>(v);
  b.optimizer_state_hash = digest_hex("encoder|" + g.id());
  return b;
}

}  // namespace sam
