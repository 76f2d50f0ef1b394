#include "sam/perceptual.hpp"

#include <cmath>
#include <mutex>
#include <random>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/ops.hpp"
#include "sam/samb.hpp"

namespace sam {

namespace {

// Input whitening used by the reference LPIPS implementation.
constexpr double kShift[3] = {-0.030, -0.088, -0.188};
constexpr double kScale[3] = {0.458, 0.448, 0.450};
constexpr double kNormEps = 1e-10;
// Puts the toy distance between unrelated samples near 0.6, the typical
// LPIPS-VGG level for unrelated natural images.
constexpr double kToyLinGain = 8.0;

nn::Var scale_input(const nn::Var& image) {
  const nn::Shape& s = image.shape();
  nn::Tensor shift(s);
  nn::Tensor gain(s);
  const std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      shift[c * plane + i] = -kShift[c];
      gain[c * plane + i] = 1.0 / kScale[c];
    }
  return nn::mul(nn::add(image, nn::Var::constant(std::move(shift))), nn::Var::constant(std::move(gain)));
}

}  // namespace

std::shared_ptr<const PerceptualNet> PerceptualNet::toy(std::uint64_t seed) {
  std::shared_ptr<PerceptualNet> net(new PerceptualNet());
  net->id_ = fmt::format("toy-vgg:{}", seed);
  net->stages_ = {{{16, 16}}, {{32}}, {{32}}};
  std::mt19937_64 rng(seed);
  int ci = 3;
  for (const Stage& st : net->stages_) {
    for (int co : st.channels) {
      const double he = std::sqrt(2.0 / (ci * 9.0));
      net->weights_.push_back(nn::Var::constant(nn::Tensor::randn({co, ci, 3, 3}, rng, he)));
      net->biases_.push_back(nn::Var::constant(nn::Tensor({co})));
      ci = co;
    }
    net->lin_.emplace_back(nn::Shape{ci}, kToyLinGain / ci);
  }
  return net;
}

std::shared_ptr<const PerceptualNet> PerceptualNet::load(const std::filesystem::path& path) {
  const SambContainer c = read_samb(path);
  std::shared_ptr<PerceptualNet> net(new PerceptualNet());
  net->id_ = c.meta.value("id", path.filename().string());
  std::vector<std::vector<int>> layout{{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  if (c.meta.contains("stages")) layout = c.meta["stages"].get<std::vector<std::vector<int>>>();
  int ci = 3;
  int conv = 0;
  for (std::size_t t = 0; t < layout.size(); ++t) {
    net->stages_.push_back({layout[t]});
    for (int co : layout[t]) {
      nn::Tensor w = c.tensor(fmt::format("conv.{}.weight", conv));
      nn::Tensor b = c.tensor(fmt::format("conv.{}.bias", conv));
      if (w.shape() != nn::Shape{co, ci, 3, 3} || b.shape() != nn::Shape{co}) {
        throw LoadError(fmt::format("{}: conv {} has shape {}", path.string(), conv, nn::shape_str(w.shape())));
      }
      net->weights_.push_back(nn::Var::constant(std::move(w)));
      net->biases_.push_back(nn::Var::constant(std::move(b)));
      ci = co;
      ++conv;
    }
    nn::Tensor lin = c.tensor(fmt::format("lin.{}", t));
    if (lin.size() != static_cast<std::size_t>(ci)) {
      throw LoadError(fmt::format("{}: lin.{} has {} weights, expected {}", path.string(), t, lin.size(), ci));
    }
    net->lin_.push_back(lin.reshaped({ci}));
  }
  return net;
}

std::shared_ptr<const PerceptualNet> PerceptualNet::from_source(const std::string& source) {
  if (source == "toy") return default_perceptual_net();
  return load(source);
}

std::vector<nn::Var> PerceptualNet::normalized_taps(const nn::Var& image) const {
  check_image(image.value());
  std::vector<nn::Var> taps;
  nn::Var x = scale_input(image);
  std::size_t conv = 0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) x = nn::max_pool2x(x);
    for (std::size_t k = 0; k < stages_[s].channels.size(); ++k, ++conv) {
      x = nn::relu(nn::conv2d(x, weights_[conv], biases_[conv], {1, 1}));
    }
    taps.push_back(nn::normalize_channels(x, kNormEps));
  }
  return taps;
}

nn::Var PerceptualNet::distance_map(const std::vector<nn::Var>& a, const std::vector<nn::Var>& b,
                                    int h, int w) const {
  nn::Var total;
  for (std::size_t t = 0; t < lin_.size(); ++t) {
    nn::Var d = nn::sub(a[t], b[t]);
    nn::Var layer = nn::resize_bilinear(nn::weighted_channel_sum(nn::mul(d, d), lin_[t]), h, w);
    total = total ? nn::add(total, layer) : layer;
  }
  return total;
}

PerceptualHandle default_perceptual_net() {
  static const PerceptualHandle net = PerceptualNet::toy();
  return net;
}

LpipsResult lpips_vgg(const Image& x, const Image& y, const PerceptualNet& net) {
  check_image(x);
  if (x.shape() != y.shape()) {
    throw ShapeError(fmt::format("lpips: {} vs {}", nn::shape_str(x.shape()), nn::shape_str(y.shape())));
  }
  nn::NoGradGuard no_grad;
  const int h = image_height(x);
  const int w = image_width(x);
  const auto ta = net.normalized_taps(nn::Var::constant(x));
  const auto tb = net.normalized_taps(nn::Var::constant(y));
  LpipsResult r;
  r.map = net.distance_map(ta, tb, h, w).value().reshaped({h, w});
  r.value = nn::sum(r.map) / static_cast<double>(r.map.size());
  return r;
}

LpipsResult lpips_vgg(const Image& x, const Image& y) { return lpips_vgg(x, y, *default_perceptual_net()); }

LpipsTarget::LpipsTarget(PerceptualHandle net, const Image& target)
    : net_(std::move(net)), target_(target) {
  check_image(target_);
  nn::NoGradGuard no_grad;
  taps_ = net_->normalized_taps(nn::Var::constant(target_));
}

nn::Var LpipsTarget::map(const nn::Var& image) const {
  if (image.shape() != target_.shape()) {
    throw ShapeError(fmt::format("lpips: {} vs target {}", nn::shape_str(image.shape()),
                                 nn::shape_str(target_.shape())));
  }
  return net_->distance_map(net_->normalized_taps(image), taps_, image_height(target_),
                            image_width(target_));
}

}  // namespace sam
