#include "sam/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/ops.hpp"
#include "sam/samb.hpp"

namespace sam {

namespace {

constexpr std::uint64_t kMeanStyleSeed = 0x5eed5eedULL;
constexpr int kMeanStyleSamples = 10000;
const double kSqrt2 = std::sqrt(2.0);

nn::Tensor broadcast_rows(const nn::Tensor& w, int rows) {
  const int d = static_cast<int>(w.size());
  nn::Tensor out({rows, d});
  for (int r = 0; r < rows; ++r) std::copy_n(w.data(), d, out.data() + static_cast<std::size_t>(r) * d);
  return out;
}

void expect_shape(const nn::Tensor& t, const nn::Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw ShapeError(fmt::format("{}: expected {}, found {}", what, nn::shape_str(shape),
                                 nn::shape_str(t.shape())));
  }
}

}  // namespace

std::vector<int> LayeredGenerator::feature_layers() const {
  const auto& b = boundaries();
  return {b.begin() + 1, b.end() - 1};
}

// --- architecture -----------------------------------------------------------

GeneratorArchitecture GeneratorArchitecture::toy() {
  GeneratorArchitecture a;
  a.family = "toy";
  a.style_dim = 64;
  a.num_style_rows = 8;
  a.mapping_layers = 2;
  a.constant_shape = {32, 4, 4};
  a.rgb_gain = 0.5;
  a.noise_strength = 0.05;
  a.slices = {
      {4, {{32, 3, false, 0}, {32, 3, false, 1}}},
      {6, {{32, 3, true, 2}}},
      {8, {{24, 3, true, 3}, {24, 3, false, 4}}},
      {10, {{16, 3, true, 5}}},
      {16, {{16, 3, false, 6}, {3, 1, false, 7, false, false, false}}},
  };
  return a;
}

GeneratorArchitecture GeneratorArchitecture::stylegan2(int resolution, int style_dim,
                                                       int channel_base, int channel_max) {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
    throw UsageError(fmt::format("StyleGAN2 resolution must be a power of two >= 8, got {}", resolution));
  }
  auto channels = [&](int res) { return std::min(channel_base / res, channel_max); };
  GeneratorArchitecture a;
  a.family = "stylegan2";
  a.style_dim = style_dim;
  a.mapping_layers = 8;
  a.constant_shape = {channels(4), 4, 4};
  a.rgb_gain = 1.0;
  a.noise_strength = 0.0;

  std::vector<StyleLayerSpec> convs;
  convs.push_back({channels(4), 3, false, 0});
  for (int res = 8; res <= resolution; res *= 2) {
    const int k = static_cast<int>(convs.size());
    convs.push_back({channels(res), 3, true, k});
    convs.push_back({channels(res), 3, false, k + 1});
  }
  const int num_convs = static_cast<int>(convs.size());
  a.num_style_rows = num_convs + 1;

  // Label k is the activation after conv k; label 0 is the constant input.
  std::vector<int> labels{0};
  for (int l : {4, 6, 8, 10})
    if (l < num_convs - 1) labels.push_back(l);
  labels.push_back(a.num_style_rows);
  for (std::size_t s = 1; s < labels.size(); ++s) {
    SliceSpec slice;
    slice.to_layer = labels[s];
    const int first = s == 1 ? 0 : labels[s - 1] + 1;
    const int last = s + 1 == labels.size() ? num_convs - 1 : labels[s];
    for (int k = first; k <= last; ++k) slice.layers.push_back(convs[static_cast<std::size_t>(k)]);
    if (s + 1 == labels.size()) slice.layers.push_back({3, 1, false, num_convs, false, false, false});
    a.slices.push_back(std::move(slice));
  }
  return a;
}

std::vector<int> GeneratorArchitecture::boundaries() const {
  std::vector<int> b{0};
  for (const SliceSpec& s : slices) b.push_back(s.to_layer);
  return b;
}

nn::Shape GeneratorArchitecture::feature_shape(int layer) const {
  nn::Shape shape = constant_shape;
  if (layer == 0) return shape;
  for (const SliceSpec& s : slices) {
    for (const StyleLayerSpec& l : s.layers) {
      shape[0] = l.out_channels;
      if (l.upsample) {
        shape[1] *= 2;
        shape[2] *= 2;
      }
    }
    if (s.to_layer == layer) return shape;
  }
  throw UsageError(fmt::format("layer {} is not a slice boundary", layer));
}

int GeneratorArchitecture::output_resolution() const {
  return feature_shape(boundaries().back())[1];
}

void GeneratorArchitecture::validate() const {
  if (style_dim <= 0 || num_style_rows <= 0 || mapping_layers < 0) {
    throw ShapeError("generator architecture has non-positive dimensions");
  }
  if (constant_shape.size() != 3) throw ShapeError("constant input must be [C,H,W]");
  if (slices.empty()) throw ShapeError("generator architecture has no slices");
  int prev = 0;
  for (const SliceSpec& s : slices) {
    if (s.to_layer <= prev) throw ShapeError("slice boundaries must be strictly increasing");
    if (s.layers.empty()) throw ShapeError(fmt::format("slice ending at {} has no layers", s.to_layer));
    for (const StyleLayerSpec& l : s.layers) {
      if (l.style_row < 0 || l.style_row >= num_style_rows) {
        throw ShapeError(fmt::format("style row {} out of range", l.style_row));
      }
    }
    prev = s.to_layer;
  }
  const nn::Shape out = feature_shape(prev);
  if (out[0] != 3 || out[1] != out[2]) {
    throw ShapeError("final slice must produce a square RGB image, got " + nn::shape_str(out));
  }
}

nlohmann::json GeneratorArchitecture::to_json() const {
  nlohmann::json j;
  j["family"] = family;
  j["style_dim"] = style_dim;
  j["num_style_rows"] = num_style_rows;
  j["mapping_layers"] = mapping_layers;
  j["constant_shape"] = constant_shape;
  j["rgb_gain"] = rgb_gain;
  j["noise_strength"] = noise_strength;
  for (const SliceSpec& s : slices) {
    nlohmann::json js;
    js["to"] = s.to_layer;
    for (const StyleLayerSpec& l : s.layers) {
      js["layers"].push_back({{"out", l.out_channels}, {"kernel", l.kernel}, {"upsample", l.upsample},
                              {"row", l.style_row}, {"demodulate", l.demodulate},
                              {"activate", l.activate}, {"noise", l.noise}});
    }
    j["slices"].push_back(js);
  }
  return j;
}

GeneratorArchitecture GeneratorArchitecture::from_json(const nlohmann::json& j) {
  try {
    GeneratorArchitecture a;
    a.family = j.at("family").get<std::string>();
    a.style_dim = j.at("style_dim").get<int>();
    a.num_style_rows = j.at("num_style_rows").get<int>();
    a.mapping_layers = j.at("mapping_layers").get<int>();
    a.constant_shape = j.at("constant_shape").get<nn::Shape>();
    a.rgb_gain = j.value("rgb_gain", 1.0);
    a.noise_strength = j.value("noise_strength", 0.0);
    for (const auto& js : j.at("slices")) {
      SliceSpec s;
      s.to_layer = js.at("to").get<int>();
      for (const auto& jl : js.at("layers")) {
        s.layers.push_back({jl.at("out").get<int>(), jl.at("kernel").get<int>(),
                            jl.at("upsample").get<bool>(), jl.at("row").get<int>(),
                            jl.at("demodulate").get<bool>(), jl.at("activate").get<bool>(),
                            jl.at("noise").get<bool>()});
      }
      a.slices.push_back(std::move(s));
    }
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("generator architecture: ") + e.what());
  }
}

// --- generator --------------------------------------------------------------

std::shared_ptr<const StyleGenerator> StyleGenerator::random(const GeneratorArchitecture& arch,
                                                             std::uint64_t seed, std::string id) {
  arch.validate();
  std::shared_ptr<StyleGenerator> g(new StyleGenerator());
  g->arch_ = arch;
  g->id_ = std::move(id);
  g->seed_ = seed;
  std::mt19937_64 rng(seed);
  const int d = arch.style_dim;

  g->constant_ = nn::Var::constant(nn::Tensor::randn(arch.constant_shape, rng));
  for (int i = 0; i < arch.mapping_layers; ++i) {
    g->mapping_weights_.push_back(nn::Tensor::randn({d, d}, rng, 1.0 / std::sqrt(d)));
    g->mapping_biases_.push_back(nn::Tensor({d}));
  }
  int prev = 0;
  nn::Shape shape = arch.constant_shape;
  for (const SliceSpec& ss : arch.slices) {
    Slice slice{prev, ss.to_layer, {}};
    for (const StyleLayerSpec& spec : ss.layers) {
      const int ci = shape[0];
      if (spec.upsample) {
        shape[1] *= 2;
        shape[2] *= 2;
      }
      shape[0] = spec.out_channels;
      Layer layer;
      layer.spec = spec;
      double gain = 1.0 / std::sqrt(static_cast<double>(ci) * spec.kernel * spec.kernel);
      if (!spec.demodulate) gain *= arch.rgb_gain;
      layer.weight = nn::Var::constant(
          nn::Tensor::randn({spec.out_channels, ci, spec.kernel, spec.kernel}, rng, gain));
      layer.bias = nn::Var::constant(nn::Tensor({spec.out_channels}));
      layer.affine_weight = nn::Var::constant(nn::Tensor::randn({ci, d}, rng, 1.0 / std::sqrt(d)));
      layer.affine_bias = nn::Var::constant(nn::Tensor({ci}, 1.0));
      if (spec.noise) layer.noise_map = nn::Tensor::randn({1, shape[1], shape[2]}, rng);
      slice.layers.push_back(std::move(layer));
    }
    g->slices_.push_back(std::move(slice));
    prev = ss.to_layer;
  }
  g->finalize();
  g->calibrate_output(rng);
  return g;
}

void StyleGenerator::calibrate_output(std::mt19937_64& rng) {
  // Centre each RGB channel and set the spread of random samples to ~0.5.
  constexpr int kSamples = 64;
  const int d = arch_.style_dim;
  std::vector<nn::Tensor> images;
  for (int i = 0; i < kSamples; ++i) {
    nn::Tensor w = broadcast_rows(map(nn::Tensor::randn({d}, rng)), arch_.num_style_rows);
    images.push_back(synthesize(*this, w));
  }
  const std::size_t plane = images.front().size() / 3;
  double mean[3] = {0, 0, 0};
  for (const nn::Tensor& im : images)
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) mean[c] += im[c * plane + i];
  for (double& m : mean) m /= static_cast<double>(kSamples * plane);
  double var = 0.0;
  for (const nn::Tensor& im : images)
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) var += std::pow(im[c * plane + i] - mean[c], 2);
  const double stddev = std::sqrt(var / static_cast<double>(kSamples * plane * 3));
  const double k = 0.5 / std::max(stddev, 1e-6);
  Layer& rgb = slices_.back().layers.back();
  rgb.weight.mutable_value() *= k;
  for (int c = 0; c < 3; ++c) rgb.bias.mutable_value()[static_cast<std::size_t>(c)] = -k * mean[c];
}

void StyleGenerator::finalize() {
  boundaries_ = arch_.boundaries();
  for (Slice& s : slices_) {
    for (Layer& l : s.layers) {
      if (!l.spec.noise) continue;
      const int c = l.spec.out_channels;
      const std::size_t plane = l.noise_map.size();
      nn::Tensor full({c, l.noise_map.dim(1), l.noise_map.dim(2)});
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) full[ch * plane + i] = arch_.noise_strength * l.noise_map[i];
      l.noise = nn::Var::constant(std::move(full));
    }
  }
  if (mean_style_.empty()) {
    std::mt19937_64 rng(kMeanStyleSeed);
    nn::Tensor acc({arch_.style_dim});
    for (int i = 0; i < kMeanStyleSamples; ++i) acc += map(nn::Tensor::randn({arch_.style_dim}, rng));
    acc *= 1.0 / kMeanStyleSamples;
    mean_style_ = broadcast_rows(acc, arch_.num_style_rows);
  }
}

nn::Tensor StyleGenerator::map(const nn::Tensor& z) const {
  const int d = arch_.style_dim;
  if (z.size() != static_cast<std::size_t>(d)) {
    throw ShapeError(fmt::format("latent z must have {} entries, got {}", d, z.size()));
  }
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(z.data(), d);
  x /= std::sqrt(x.squaredNorm() / d + 1e-8);
  for (std::size_t i = 0; i < mapping_weights_.size(); ++i) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
        mapping_weights_[i].data(), d, d);
    x = w * x + Eigen::Map<const Eigen::VectorXd>(mapping_biases_[i].data(), d);
    x = x.unaryExpr([](double v) { return v >= 0 ? v : 0.2 * v; });
  }
  return nn::Tensor({d}, std::vector<double>(x.data(), x.data() + d));
}

nn::Shape StyleGenerator::feature_shape(int layer) const { return arch_.feature_shape(layer); }

const StyleGenerator::Slice& StyleGenerator::slice_from(int from) const {
  for (const Slice& s : slices_)
    if (s.from == from) return s;
  throw UsageError(fmt::format("layer {} does not start a slice", from));
}

nn::Var StyleGenerator::apply_layer(const Layer& layer, nn::Var x, const nn::Var& codes) const {
  const StyleLayerSpec& spec = layer.spec;
  if (spec.upsample) x = nn::upsample_nearest2x(x);
  nn::Var style = nn::linear(nn::row(codes, spec.style_row), layer.affine_weight, layer.affine_bias);
  nn::Var w = nn::modulate(layer.weight, style, spec.demodulate);
  x = nn::conv2d(x, w, layer.bias, {1, spec.kernel / 2});
  if (spec.noise) x = nn::add(x, layer.noise);
  if (spec.activate) x = nn::leaky_relu(x, 0.2, kSqrt2);
  return x;
}

nn::Var StyleGenerator::run_slices(int from, int to, const nn::Var& input, const nn::Var& codes) const {
  if (std::find(boundaries_.begin(), boundaries_.end(), to) == boundaries_.end() || to <= from) {
    throw UsageError(fmt::format("({}, {}) is not a composition of slices", from, to));
  }
  if (codes.shape() != nn::Shape{arch_.num_style_rows, arch_.style_dim}) {
    throw ShapeError(fmt::format("style codes must be [{}x{}], got {}", arch_.num_style_rows,
                                 arch_.style_dim, nn::shape_str(codes.shape())));
  }
  nn::Var x = from == 0 ? constant_ : input;
  if (from != 0) {
    if (!x) throw UsageError(fmt::format("slice from layer {} needs an input feature", from));
    expect_shape(x.value(), arch_.feature_shape(from), fmt::format("input to slice {}->{}", from, to));
  }
  int at = from;
  while (at != to) {
    const Slice& s = slice_from(at);
    for (const Layer& l : s.layers) x = apply_layer(l, x, codes);
    at = s.to;
  }
  return x;
}

std::vector<int> StyleGenerator::rows_used(int from, int to) const {
  std::set<int> rows;
  int at = from;
  while (at != to) {
    const Slice& s = slice_from(at);
    for (const Layer& l : s.layers) rows.insert(l.spec.style_row);
    at = s.to;
  }
  return {rows.begin(), rows.end()};
}

void StyleGenerator::save(const std::filesystem::path& path) const {
  SambContainer c;
  c.meta["kind"] = "generator";
  c.meta["id"] = id_;
  c.meta["seed"] = seed_;
  c.meta["architecture"] = arch_.to_json();
  c.put("const", constant_.value());
  c.put("mean_style", mean_style_);
  for (std::size_t i = 0; i < mapping_weights_.size(); ++i) {
    c.put(fmt::format("mapping.{}.weight", i), mapping_weights_[i]);
    c.put(fmt::format("mapping.{}.bias", i), mapping_biases_[i]);
  }
  for (std::size_t s = 0; s < slices_.size(); ++s) {
    for (std::size_t l = 0; l < slices_[s].layers.size(); ++l) {
      const Layer& layer = slices_[s].layers[l];
      const std::string p = fmt::format("slice.{}.layer.{}.", s, l);
      c.put(p + "weight", layer.weight.value());
      c.put(p + "bias", layer.bias.value());
      c.put(p + "affine_weight", layer.affine_weight.value());
      c.put(p + "affine_bias", layer.affine_bias.value());
      if (layer.spec.noise) c.put(p + "noise", layer.noise_map);
    }
  }
  write_samb(path, c);
}

std::shared_ptr<const StyleGenerator> StyleGenerator::load(const std::filesystem::path& path) {
  const SambContainer c = read_samb(path);
  if (c.meta.value("kind", "") != "generator") {
    throw LoadError(path.string() + ": not a generator checkpoint");
  }
  std::shared_ptr<StyleGenerator> g(new StyleGenerator());
  try {
    g->arch_ = GeneratorArchitecture::from_json(c.meta.at("architecture"));
    g->id_ = c.meta.value("id", path.filename().string());
    g->seed_ = c.meta.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(path.string() + ": " + e.what());
  }
  const GeneratorArchitecture& a = g->arch_;
  const int d = a.style_dim;
  auto fetch = [&](const std::string& name, const nn::Shape& shape) {
    nn::Tensor t = c.tensor(name);
    expect_shape(t, shape, path.string() + " array '" + name + "'");
    return t;
  };
  g->constant_ = nn::Var::constant(fetch("const", a.constant_shape));
  if (c.has("mean_style")) g->mean_style_ = fetch("mean_style", {a.num_style_rows, d});
  for (int i = 0; i < a.mapping_layers; ++i) {
    g->mapping_weights_.push_back(fetch(fmt::format("mapping.{}.weight", i), {d, d}));
    g->mapping_biases_.push_back(fetch(fmt::format("mapping.{}.bias", i), {d}));
  }
  int prev = 0;
  nn::Shape shape = a.constant_shape;
  for (std::size_t s = 0; s < a.slices.size(); ++s) {
    Slice slice{prev, a.slices[s].to_layer, {}};
    for (std::size_t l = 0; l < a.slices[s].layers.size(); ++l) {
      const StyleLayerSpec& spec = a.slices[s].layers[l];
      const int ci = shape[0];
      if (spec.upsample) {
        shape[1] *= 2;
        shape[2] *= 2;
      }
      shape[0] = spec.out_channels;
      const std::string p = fmt::format("slice.{}.layer.{}.", s, l);
      Layer layer;
      layer.spec = spec;
      layer.weight = nn::Var::constant(fetch(p + "weight", {spec.out_channels, ci, spec.kernel, spec.kernel}));
      layer.bias = nn::Var::constant(fetch(p + "bias", {spec.out_channels}));
      layer.affine_weight = nn::Var::constant(fetch(p + "affine_weight", {ci, d}));
      layer.affine_bias = nn::Var::constant(fetch(p + "affine_bias", {ci}));
      if (spec.noise) layer.noise_map = fetch(p + "noise", {1, shape[1], shape[2]});
      slice.layers.push_back(std::move(layer));
    }
    g->slices_.push_back(std::move(slice));
    prev = a.slices[s].to_layer;
  }
  g->finalize();
  return g;
}

// --- free functions ---------------------------------------------------------

GeneratorHandle load_generator(const std::string& source, std::uint64_t seed) {
  if (source == "toy") {
    return StyleGenerator::random(GeneratorArchitecture::toy(), seed, fmt::format("toy:{}", seed));
  }
  if (!std::filesystem::exists(source)) throw LoadError("generator weights not found: " + source);
  return StyleGenerator::load(source);
}

FeatureTensor run_slice(const LayeredGenerator& g, int i, int j, const FeatureTensor* input,
                        const ExtendedStyle& w) {
  nn::NoGradGuard no_grad;
  nn::Var in;
  if (i != 0) {
    if (input == nullptr) throw UsageError(fmt::format("slice from layer {} needs an input", i));
    if (input->layer != i) {
      throw UsageError(fmt::format("input feature is at layer {}, slice starts at {}", input->layer, i));
    }
    in = nn::Var::constant(input->values);
  }
  nn::Var out = g.run_slices(i, j, in, nn::Var::constant(w.w_plus));
  return {out.value(), j};
}

nn::Shape feature_shape(const LayeredGenerator& g, int layer) { return g.feature_shape(layer); }

nn::Tensor synthesize(const LayeredGenerator& g, const nn::Tensor& codes) {
  nn::NoGradGuard no_grad;
  return g.run_slices(0, g.boundaries().back(), {}, nn::Var::constant(codes)).value();
}

ExtendedStyle sample_style(const StyleGenerator& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::Tensor w = g.map(nn::Tensor::randn({g.code_dim()}, rng));
  return {broadcast_rows(w, g.code_rows())};
}

double gaussianize(double w) { return w >= 0 ? w : 5.0 * w; }

StyleStatistics fit_statistics(const nn::Tensor& samples, double ridge, std::uint64_t seed) {
  const int n = samples.dim(0);
  const int d = samples.dim(1);
  if (n < 2) throw UsageError("need at least 2 samples to fit statistics");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      samples.data(), n, d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  Eigen::MatrixXd sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  sigma = 0.5 * (sigma + sigma.transpose());
  const Eigen::MatrixXd reg = sigma + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd inv = reg.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
  inv = 0.5 * (inv + inv.transpose());

  StyleStatistics s;
  s.mu = nn::Tensor({d}, std::vector<double>(mu.data(), mu.data() + d));
  s.sigma = nn::Tensor({d, d});
  s.sigma_inv_reg = nn::Tensor({d, d});
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      s.sigma[static_cast<std::size_t>(r) * d + c] = sigma(r, c);
      s.sigma_inv_reg[static_cast<std::size_t>(r) * d + c] = inv(r, c);
    }
  s.ridge = ridge;
  s.sample_count = n;
  s.seed = seed;
  return s;
}

StyleStatistics estimate_style_statistics(const StyleGenerator& g, int n, std::uint64_t seed) {
  if (n < 2) throw UsageError(fmt::format("estimate_style_statistics needs n >= 2, got {}", n));
  const int d = g.code_dim();
  std::mt19937_64 rng(seed);
  nn::Tensor samples({n, d});
  for (int i = 0; i < n; ++i) {
    nn::Tensor w = g.map(nn::Tensor::randn({d}, rng));
    for (int k = 0; k < d; ++k) samples[static_cast<std::size_t>(i) * d + k] = gaussianize(w[static_cast<std::size_t>(k)]);
  }
  return fit_statistics(samples, 1e-6, seed);
}

}  // namespace sam
