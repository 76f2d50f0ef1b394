#include "sam/conditional.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <random>

#include <Eigen/Dense>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/ops.hpp"

namespace sam {

namespace {

const double kSqrt2 = std::sqrt(2.0);
constexpr int kInputChannels = 32;
constexpr double kCast = 0.5;
constexpr int kPooledSide = 8;
constexpr double kRidge = 1e-2;
constexpr int kChannels[] = {32, 32, 16, 16};  // input, F2, F4, last conv

nn::Var act(const nn::Var& x) { return nn::leaky_relu(x, 0.2, kSqrt2); }

nn::Tensor matvec(const nn::Tensor& m, const nn::Tensor& v) {
  const int rows = m.dim(0);
  const int cols = m.dim(1);
  nn::Tensor out({rows});
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    for (int c = 0; c < cols; ++c) s += m[static_cast<std::size_t>(r) * cols + c] * v[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = s;
  }
  return out;
}

}  // namespace

std::shared_ptr<const ConditionalGenerator> ConditionalGenerator::toy(std::uint64_t seed) {
  std::shared_ptr<ConditionalGenerator> g(new ConditionalGenerator());
  g->id_ = fmt::format("toy-conditional:{}", seed);
  g->seed_ = seed;
  std::mt19937_64 rng(seed);
  const int dz = g->z_dim_;
  const int e = g->embed_dim_;
  g->embeddings_ = nn::Tensor::randn({g->classes_, e}, rng);
  const int in_size = kInputChannels * 16;
  g->input_weight_ = nn::Var::constant(nn::Tensor::randn({in_size, dz}, rng, 1.0 / std::sqrt(dz)));
  g->input_bias_ = nn::Tensor({in_size});
  g->input_embed_ = nn::Tensor::randn({in_size, e}, rng, 0.5 / std::sqrt(e));
  for (int k = 1; k <= 3; ++k) {
    const int ci = kChannels[k - 1];
    const int co = kChannels[k];
    Layer l;
    l.weight = nn::Var::constant(nn::Tensor::randn({co, ci, 3, 3}, rng, 1.0 / std::sqrt(ci * 9.0)));
    l.bias = nn::Var::constant(nn::Tensor({co}));
    l.affine_weight = nn::Var::constant(nn::Tensor::randn({ci, dz}, rng, 1.0 / std::sqrt(dz)));
    l.affine_bias = nn::Tensor({ci}, 1.0);
    l.embed_weight = nn::Tensor::randn({ci, e}, rng, 0.5 / std::sqrt(e));
    g->layers_.push_back(std::move(l));
  }
  g->rgb_weight_ = nn::Var::constant(nn::Tensor::randn({3, kChannels[3], 1, 1}, rng, 1.0 / std::sqrt(kChannels[3])));
  g->rgb_bias_ = nn::Tensor({3});
  g->class_colours_ = nn::Tensor({g->classes_, 3});
  for (int c = 0; c < g->classes_; ++c) {
    // Corners of the RGB cube give eight well separated casts.
    for (int ch = 0; ch < 3; ++ch) g->class_colours_[static_cast<std::size_t>(c) * 3 + ch] = ((c >> ch) & 1) ? kCast : -kCast;
  }

  // Scale the RGB projection so class-agnostic content has spread ~0.5 around zero.
  constexpr int kSamples = 32;
  std::vector<Image> images;
  for (int i = 0; i < kSamples; ++i) images.push_back(g->sample(i % g->classes_, 0x5a5a0000ULL + i));
  double mean[3] = {0, 0, 0};
  const std::size_t plane = 32 * 32;
  for (int i = 0; i < kSamples; ++i)
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        mean[ch] += images[static_cast<std::size_t>(i)][ch * plane + p] - g->class_colours_[static_cast<std::size_t>(i % g->classes_) * 3 + ch];
  for (double& m : mean) m /= kSamples * static_cast<double>(plane);
  double var = 0;
  for (int i = 0; i < kSamples; ++i)
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = images[static_cast<std::size_t>(i)][ch * plane + p] - g->class_colours_[static_cast<std::size_t>(i % g->classes_) * 3 + ch] - mean[ch];
        var += v * v;
      }
  const double k = 0.5 / std::max(1e-6, std::sqrt(var / (kSamples * 3.0 * plane)));
  g->rgb_weight_.mutable_value() *= k;
  for (int ch = 0; ch < 3; ++ch) g->rgb_bias_[static_cast<std::size_t>(ch)] = -k * mean[ch];
  return g;
}

std::shared_ptr<const ClassBoundGenerator> ConditionalGenerator::bind(int label) const {
  if (label < 0 || label >= classes_) throw UsageError(fmt::format("class {} out of range [0, {})", label, classes_));
  return std::make_shared<ClassBoundGenerator>(shared_from_this(), label);
}

nn::Tensor ConditionalGenerator::sample_codes(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const nn::Tensor z = nn::Tensor::randn({z_dim_}, rng);
  nn::Tensor out({code_rows(), z_dim_});
  for (int r = 0; r < code_rows(); ++r) std::copy_n(z.data(), z_dim_, out.data() + static_cast<std::size_t>(r) * z_dim_);
  return out;
}

Image ConditionalGenerator::sample(int label, std::uint64_t seed) const {
  return synthesize(*bind(label), sample_codes(seed));
}

StyleStatistics ConditionalGenerator::code_statistics(int n, std::uint64_t seed) const {
  if (n < 2) throw UsageError(fmt::format("code_statistics needs n >= 2, got {}", n));
  std::mt19937_64 rng(seed);
  return fit_statistics(nn::Tensor::randn({n, z_dim_}, rng), 1e-6, seed);
}

// --- class-bound view -------------------------------------------------------

ClassBoundGenerator::ClassBoundGenerator(std::shared_ptr<const ConditionalGenerator> parent, int label)
    : parent_(std::move(parent)), label_(label) {
  const ConditionalGenerator& p = *parent_;
  id_ = fmt::format("{}#class{}", p.id_, label);
  initial_ = nn::Tensor({p.code_rows(), p.z_dim_});
  const int e = p.embed_dim_;
  nn::Tensor emb({e}, std::vector<double>(p.embeddings_.data() + static_cast<std::size_t>(label) * e,
                                            p.embeddings_.data() + static_cast<std::size_t>(label + 1) * e));
  input_bias_ = nn::Var::constant(p.input_bias_ + matvec(p.input_embed_, emb));
  for (const auto& l : p.layers_) style_bias_.push_back(nn::Var::constant(l.affine_bias + matvec(l.embed_weight, emb)));
  nn::Tensor rgb = p.rgb_bias_;
  for (int ch = 0; ch < 3; ++ch) rgb[static_cast<std::size_t>(ch)] += p.class_colours_[static_cast<std::size_t>(label) * 3 + ch];
  rgb_bias_ = nn::Var::constant(std::move(rgb));
}

nn::Shape ClassBoundGenerator::feature_shape(int layer) const {
  switch (layer) {
    case 0: return {kInputChannels, 4, 4};
    case 2: return {kChannels[1], 8, 8};
    case 4: return {kChannels[2], 16, 16};
    case 6: return {3, 32, 32};
    default: throw UsageError(fmt::format("layer {} is not a slice boundary", layer));
  }
}

std::vector<int> ClassBoundGenerator::rows_used(int from, int to) const {
  std::vector<int> rows;
  for (int at = from; at < to; at += 2) {
    if (at == 0) rows.insert(rows.end(), {0, 1});
    else rows.push_back(at / 2 + 1);
  }
  return rows;
}

nn::Var ClassBoundGenerator::run_one(int from, const nn::Var& x_in, const nn::Var& codes) const {
  const ConditionalGenerator& p = *parent_;
  auto modconv = [&](nn::Var x, int row) {
    const auto& l = p.layers_[static_cast<std::size_t>(row - 1)];
    nn::Var style = nn::linear(nn::row(codes, row), l.affine_weight, style_bias_[static_cast<std::size_t>(row - 1)]);
    x = nn::upsample_nearest2x(x);
    return act(nn::conv2d(x, nn::modulate(l.weight, style, true), l.bias, {1, 1}));
  };
  switch (from) {
    case 0: {
      nn::Var h = nn::linear(nn::row(codes, 0), p.input_weight_, input_bias_);
      h = act(nn::reshape(h, {kInputChannels, 4, 4}));
      return modconv(h, 1);
    }
    case 2: return modconv(x_in, 2);
    case 4: return nn::conv2d(modconv(x_in, 3), p.rgb_weight_, rgb_bias_, {1, 0});
    default: throw UsageError(fmt::format("layer {} does not start a slice", from));
  }
}

nn::Var ClassBoundGenerator::run_slices(int from, int to, const nn::Var& input, const nn::Var& codes) const {
  const bool valid_to = to == 2 || to == 4 || to == 6;
  const bool valid_from = from == 0 || from == 2 || from == 4;
  if (!valid_to || !valid_from || to <= from) {
    throw UsageError(fmt::format("({}, {}) is not a composition of slices", from, to));
  }
  if (codes.shape() != nn::Shape{code_rows(), code_dim()}) {
    throw ShapeError(fmt::format("codes must be [{}x{}], got {}", code_rows(), code_dim(), nn::shape_str(codes.shape())));
  }
  nn::Var x = input;
  if (from != 0) {
    if (!x) throw UsageError(fmt::format("slice from layer {} needs an input feature", from));
    if (x.shape() != feature_shape(from)) {
      throw ShapeError(fmt::format("input to slice {}->{} is {}, expected {}", from, to, nn::shape_str(x.shape()),
                                   nn::shape_str(feature_shape(from))));
    }
  }
  for (int at = from; at < to; at += 2) x = run_one(at, x, codes);
  return x;
}

// --- classification and inversion -------------------------------------------

namespace {

// 8x8 average-pooled image, flattened.
Eigen::VectorXd pooled_features(const Image& x) {
  check_image(x);
  const int h = image_height(x);
  const int w = image_width(x);
  if (h % kPooledSide != 0 || w % kPooledSide != 0) throw ShapeError("classifier input size must be a multiple of 8");
  const int bh = h / kPooledSide;
  const int bw = w / kPooledSide;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * kPooledSide * kPooledSide);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) f((ch * kPooledSide + y / bh) * kPooledSide + xx / bw) += x.at(ch, y, xx);
  return f / (bh * bw);
}

}  // namespace

struct ClassMeanClassifier::Model {
  std::vector<Eigen::VectorXd> means;
  Eigen::LDLT<Eigen::MatrixXd> pooled_cov;
};

ClassMeanClassifier::ClassMeanClassifier(const ConditionalGenerator& g, int samples_per_class, std::uint64_t seed)
    : id_(fmt::format("lda:{}:{}", g.id(), samples_per_class)) {
  if (samples_per_class < 2) throw UsageError("classifier needs at least two samples per class");
  auto model = std::make_shared<Model>();
  const int dim = 3 * kPooledSide * kPooledSide;
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
  for (int c = 0; c < g.num_classes(); ++c) {
    std::vector<Eigen::VectorXd> feats;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < samples_per_class; ++i) {
      feats.push_back(pooled_features(g.sample(c, seed + static_cast<std::uint64_t>(c) * 100000 + i)));
      mean += feats.back();
    }
    mean /= samples_per_class;
    for (const auto& f : feats) scatter += (f - mean) * (f - mean).transpose();
    model->means.push_back(std::move(mean));
  }
  scatter /= static_cast<double>(g.num_classes()) * (samples_per_class - 1);
  scatter.diagonal().array() += kRidge * scatter.diagonal().mean();
  model->pooled_cov.compute(scatter);
  model_ = std::move(model);
}

int ClassMeanClassifier::predict(const Image& x) const {
  const Eigen::VectorXd f = pooled_features(x);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < model_->means.size(); ++c) {
    const Eigen::VectorXd d = f - model_->means[c];
    const double dist = d.dot(model_->pooled_cov.solve(d));
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

int predict_class(const Image& x, const ConditionalGenerator& g, const std::string& classifier_id) {
  if (classifier_id != "oracle") throw UsageError("classifier '" + classifier_id + "' is not available");
  static std::mutex mutex;
  static std::map<std::string, std::shared_ptr<const ClassMeanClassifier>> cache;
  std::shared_ptr<const ClassMeanClassifier> classifier;
  {
    std::lock_guard lock(mutex);
    auto& slot = cache[g.id()];
    if (!slot) slot = std::make_shared<const ClassMeanClassifier>(g);
    classifier = slot;
  }
  return classifier->predict(x);
}

double zplus_regularizer(const nn::Tensor& z_plus, const StyleStatistics& s) {
  nn::NoGradGuard no_grad;
  return latent_prior_var(nn::Var::constant(z_plus), {s, 1.0, false}).value().item();
}

ConditionalInversion invert_class_conditional(const Image& x, const ConditionalGenerator& g, const LayerAssignment& a,
                                              const SegmentMap& seg, const OptimizationConfig& cfg,
                                              const StyleStatistics& z_stats, const std::string& classifier_id) {
  ConditionalInversion out;
  out.class_label = predict_class(x, g, classifier_id);
  const auto bound = g.bind(out.class_label);
  out.result = invert(x, *bound, a, seg, build_masks(a, seg, *bound), cfg, {z_stats, 1.0, cfg.literal_sigma});
  out.result.bundle.class_label = out.class_label;
  return out;
}

}  // namespace sam
