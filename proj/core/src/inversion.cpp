#include "sam/inversion.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/adam.hpp"
#include "sam/nn/ops.hpp"
#include "sam/spaces.hpp"

namespace sam {

std::string digest_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

// --- bundle -----------------------------------------------------------------

void LatentBundle::validate(const LayeredGenerator& g) const {
  if (w_plus.w_plus.shape() != nn::Shape{g.code_rows(), g.code_dim()}) {
    throw ShapeError(fmt::format("bundle codes {} do not match generator [{}x{}]",
                                 nn::shape_str(w_plus.w_plus.shape()), g.code_rows(), g.code_dim()));
  }
  const int n = space_count(g);
  for (const auto& [space, delta] : delta_f) {
    if (space < 1 || space >= n) throw UsageError(fmt::format("delta for invalid space {}", space));
    const nn::Shape want = g.feature_shape(space_layer(g, space));
    if (delta.shape() != want) {
      throw ShapeError(fmt::format("delta {} is {}, expected {}", space_name(g, space),
                                   nn::shape_str(delta.shape()), nn::shape_str(want)));
    }
    if (!masks.has_region(space)) {
      throw UsageError(fmt::format("delta {} present without a region", space_name(g, space)));
    }
  }
  for (int s = 1; s < static_cast<int>(masks.regions.size()); ++s) {
    if (masks.has_region(s) && delta_f.count(s) == 0) {
      throw UsageError(fmt::format("region {} has no delta", space_name(g, s)));
    }
  }
}

LatentBundle make_bundle(const LayeredGenerator& g, const nn::Tensor& codes, const LayerAssignment& a,
                         const SegmentMap& seg, const MaskSet& masks) {
  LatentBundle b;
  b.w_plus.w_plus = codes;
  b.assignment = a;
  b.segments = seg;
  b.masks = masks;
  b.generator_id = g.id();
  for (int s = 1; s < space_count(g); ++s) {
    if (masks.has_region(s)) b.delta_f[s] = nn::Tensor(g.feature_shape(space_layer(g, s)));
  }
  return b;
}

SambContainer bundle_to_samb(const LayeredGenerator& g, const LatentBundle& b) {
  SambContainer c;
  c.meta["kind"] = "bundle";
  c.meta["generator_id"] = b.generator_id;
  c.meta["spaces"] = space_names(g);
  std::vector<std::string> assigned;
  for (int s : b.assignment.spaces) assigned.push_back(space_name(g, s));
  c.meta["assignment"] = assigned;
  c.meta["tau"] = b.assignment.tau;
  c.meta["segment_count"] = b.segments.segment_count;
  c.meta["optimizer_state_hash"] = b.optimizer_state_hash;
  if (b.class_label) c.meta["class_label"] = *b.class_label;
  nlohmann::json shapes;
  c.put("w_plus", b.w_plus.w_plus);
  shapes["w_plus"] = b.w_plus.w_plus.shape();
  for (const auto& [space, delta] : b.delta_f) {
    const std::string name = "delta." + space_name(g, space);
    c.put(name, delta);
    shapes[name] = delta.shape();
  }
  nn::Tensor labels({b.segments.height, b.segments.width});
  for (std::size_t i = 0; i < b.segments.labels.size(); ++i) labels[i] = b.segments.labels[i];
  c.put("segments", labels);
  c.meta["shapes"] = shapes;
  return c;
}

LatentBundle bundle_from_samb(const LayeredGenerator& g, const SambContainer& c) {
  if (c.meta.value("kind", "") != "bundle") throw LoadError("container is not a latent bundle");
  LatentBundle b;
  try {
    b.generator_id = c.meta.at("generator_id").get<std::string>();
    b.optimizer_state_hash = c.meta.value("optimizer_state_hash", "");
    b.assignment.tau = c.meta.at("tau").get<double>();
    for (const auto& name : c.meta.at("assignment")) b.assignment.spaces.push_back(space_from_name(g, name.get<std::string>()));
    if (c.meta.contains("class_label")) b.class_label = c.meta["class_label"].get<int>();
    b.segments.segment_count = c.meta.at("segment_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bundle metadata: ") + e.what());
  }
  if (b.generator_id != g.id()) {
    throw UsageError(fmt::format("bundle was made with generator {}, not {}", b.generator_id, g.id()));
  }
  b.w_plus.w_plus = c.tensor("w_plus");
  const nn::Tensor labels = c.tensor("segments");
  if (labels.rank() != 2) throw LoadError("bundle segments must be a 2-D array");
  b.segments.height = labels.dim(0);
  b.segments.width = labels.dim(1);
  for (double v : labels.values()) b.segments.labels.push_back(static_cast<int>(v));
  b.masks = build_masks(b.assignment, b.segments, g);
  for (int s = 1; s < space_count(g); ++s) {
    const std::string name = "delta." + space_name(g, s);
    if (c.has(name)) b.delta_f[s] = c.tensor(name);
  }
  b.validate(g);
  return b;
}

// --- configuration ----------------------------------------------------------

void LossWeights::validate() const {
  for (double v : {lambda_lpips, lambda_w, lambda_f}) {
    if (!std::isfinite(v) || v < 0) throw UsageError("loss weights must be finite and non-negative");
  }
}

void OptimizationConfig::validate() const {
  if (steps < 1) throw UsageError(fmt::format("steps must be >= 1, got {}", steps));
  if (!(lr_codes > 0) || !(lr_delta > 0)) throw UsageError("learning rates must be positive");
  weights.validate();
}

nlohmann::json OptimizationConfig::to_json() const {
  return {{"steps", steps},
          {"lr_codes", lr_codes},
          {"lr_delta", lr_delta},
          {"seed", seed},
          {"early_stop_tolerance", early_stop_tolerance},
          {"patience", patience},
          {"literal_sigma", literal_sigma},
          {"lambda_lpips", weights.lambda_lpips},
          {"lambda_w", weights.lambda_w},
          {"lambda_f", weights.lambda_f}};
}

OptimizationConfig OptimizationConfig::from_json(const nlohmann::json& j) {
  OptimizationConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.lr_codes = j.value("lr_codes", c.lr_codes);
    c.lr_delta = j.value("lr_delta", c.lr_delta);
    c.seed = j.value("seed", c.seed);
    c.early_stop_tolerance = j.value("early_stop_tolerance", c.early_stop_tolerance);
    c.patience = j.value("patience", c.patience);
    c.literal_sigma = j.value("literal_sigma", c.literal_sigma);
    c.weights.lambda_lpips = j.value("lambda_lpips", c.weights.lambda_lpips);
    c.weights.lambda_w = j.value("lambda_w", c.weights.lambda_w);
    c.weights.lambda_f = j.value("lambda_f", c.weights.lambda_f);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("optimization config: ") + e.what());
  }
  c.validate();
  return c;
}

std::map<std::string, double> LossBreakdown::weighted_terms(const LossWeights& w) const {
  return {{"reconstruction", reconstruction}, {"latent", w.lambda_w * latent}, {"fspace", w.lambda_f * fspace}};
}

// --- formation --------------------------------------------------------------

nn::Var form_image_var(const LayeredGenerator& g, const nn::Var& codes, const std::map<int, nn::Var>& deltas,
                       const MaskSet& masks) {
  const auto& b = g.boundaries();
  nn::Var x = g.run_slices(0, b[1], {}, codes);
  for (std::size_t s = 1; s + 1 < b.size(); ++s) {
    auto it = deltas.find(static_cast<int>(s));
    if (it != deltas.end()) {
      if (s >= masks.feature_masks.size() || masks.feature_masks[s].empty()) {
        throw ShapeError(fmt::format("no feature mask for space {}", s));
      }
      x = nn::add_masked(x, masks.feature_masks[s], it->second);
    }
    x = g.run_slices(b[s], b[s + 1], x, codes);
  }
  return x;
}

Image form_image(const LayeredGenerator& g, const LatentBundle& b) {
  b.validate(g);
  nn::NoGradGuard no_grad;
  std::map<int, nn::Var> deltas;
  for (const auto& [s, d] : b.delta_f) deltas[s] = nn::Var::constant(d);
  return form_image_var(g, nn::Var::constant(b.w_plus.w_plus), deltas, b.masks).value();
}

// --- losses -----------------------------------------------------------------

ReconstructionLoss reconstruction_loss(const Image& x, const Image& x_hat, double lambda_lpips,
                                       const PerceptualNet& net) {
  check_image(x);
  if (x.shape() != x_hat.shape()) {
    throw ShapeError(fmt::format("reconstruction_loss: {} vs {}", nn::shape_str(x.shape()), nn::shape_str(x_hat.shape())));
  }
  ReconstructionLoss r;
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - x_hat[i]) * (x[i] - x_hat[i]);
  r.l2 = s / static_cast<double>(x.size());
  const LpipsResult lp = lpips_vgg(x, x_hat, net);
  r.lpips = lp.value;
  r.map = lp.map;
  r.value = r.l2 + lambda_lpips * r.lpips;
  return r;
}

ReconstructionLoss reconstruction_loss(const Image& x, const Image& x_hat, double lambda_lpips) {
  return reconstruction_loss(x, x_hat, lambda_lpips, *default_perceptual_net());
}

nn::Var latent_prior_var(const nn::Var& codes, const LatentPrior& prior) {
  const StyleStatistics& st = prior.stats;
  const nn::Tensor& c = codes.value();
  if (c.rank() != 2 || st.mu.size() != static_cast<std::size_t>(c.dim(1))) {
    throw ShapeError(fmt::format("prior over {}-dim codes applied to {}", st.mu.size(), nn::shape_str(c.shape())));
  }
  const int n = c.dim(0);
  const int d = c.dim(1);
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const nn::Tensor& sm = prior.literal_sigma ? st.sigma : st.sigma_inv_reg;
  Eigen::Map<const RowMatrix> S(sm.data(), d, d);
  Eigen::Map<const RowMatrix> C(c.data(), n, d);
  Eigen::Map<const Eigen::RowVectorXd> mu(st.mu.data(), d);
  const double slope = prior.slope;

  RowMatrix conv = C.unaryExpr([slope](double v) { return v >= 0 ? v : slope * v; });
  RowMatrix centered = conv.rowwise() - mu;
  RowMatrix sd = centered * S.transpose();  // row n holds (S d_n)^T
  double value = 0;
  for (int r = 0; r < n; ++r) value += centered.row(r).dot(sd.row(r));
  for (int r = 1; r < n; ++r) value += (C.row(r) - C.row(0)).squaredNorm();

  RowMatrix sym = S + S.transpose();
  return nn::make_result(nn::Tensor::scalar(value), {codes}, [sym, C = RowMatrix(C), centered, slope, n, d](nn::Node& node) {
    const double go = node.grad[0];
    RowMatrix g = centered * sym;
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < d; ++k)
        if (C(r, k) < 0) g(r, k) *= slope;
    for (int r = 1; r < n; ++r) {
      const Eigen::RowVectorXd diff = 2.0 * (C.row(r) - C.row(0));
      g.row(r) += diff;
      g.row(0) -= diff;
    }
    g *= go;
    node.inputs[0]->accumulate(nn::Tensor({n, d}, std::vector<double>(g.data(), g.data() + g.size())));
  });
}

double wplus_regularizer(const ExtendedStyle& w, const StyleStatistics& s, bool literal_sigma) {
  nn::NoGradGuard no_grad;
  return latent_prior_var(nn::Var::constant(w.w_plus), {s, 5.0, literal_sigma}).value().item();
}

double fspace_regularizer(const LatentBundle& b) {
  double total = 0;
  for (const auto& [space, delta] : b.delta_f) total += nn::squared_norm(delta);
  return total;
}

// --- objective --------------------------------------------------------------

Objective::Objective(const LayeredGenerator& g, const Image& target, const LatentPrior& prior,
                     const LossWeights& weights, PerceptualHandle net)
    : g_(g), target_(target), prior_(prior), weights_(weights), lpips_(std::move(net), target) {
  weights_.validate();
  const nn::Shape want = g.feature_shape(g.boundaries().back());
  if (target.shape() != want) {
    throw ShapeError(fmt::format("target {} does not match generator output {}", nn::shape_str(target.shape()),
                                 nn::shape_str(want)));
  }
}

Objective::Evaluation Objective::evaluate(const nn::Var& codes, const std::map<int, nn::Var>& deltas,
                                          const MaskSet& masks) const {
  Evaluation e;
  e.image = form_image_var(g_, codes, deltas, masks);
  const nn::Var target = nn::Var::constant(target_);
  nn::Var l2 = nn::mse(e.image, target);
  nn::Var lp;
  if (weights_.lambda_lpips > 0) {
    lp = nn::mean(lpips_.map(e.image));
  } else {
    nn::NoGradGuard no_grad;
    lp = nn::mean(lpips_.map(nn::Var::constant(e.image.value())));
  }
  nn::Var rec = nn::add(l2, nn::scale(lp, weights_.lambda_lpips));
  nn::Var latent = latent_prior_var(codes, prior_);
  nn::Var fspace;
  for (const auto& [s, d] : deltas) fspace = fspace ? nn::add(fspace, nn::sum_squares(d)) : nn::sum_squares(d);
  if (!fspace) fspace = nn::Var::constant(nn::Tensor::scalar(0.0));
  e.total = nn::add(nn::add(rec, nn::scale(latent, weights_.lambda_w)), nn::scale(fspace, weights_.lambda_f));

  LossBreakdown& b = e.breakdown;
  b.l2 = l2.value().item();
  b.lpips = lp.value().item();
  b.reconstruction = rec.value().item();
  b.latent = latent.value().item();
  b.fspace = fspace.value().item();
  b.total = e.total.value().item();
  const std::pair<const char*, double> terms[] = {
      {"l2", b.l2}, {"lpips", b.lpips}, {"latent", b.latent}, {"fspace", b.fspace}, {"total", b.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NonFiniteError(name, fmt::format("objective term '{}' is not finite ({})", name, v));
  }
  return e;
}

LossBreakdown total_objective(const Image& x, const LatentBundle& b, const LayeredGenerator& g,
                              const LossWeights& weights, const LatentPrior& prior) {
  b.validate(g);
  nn::NoGradGuard no_grad;
  Objective obj(g, x, prior, weights);
  std::map<int, nn::Var> deltas;
  for (const auto& [s, d] : b.delta_f) deltas[s] = nn::Var::constant(d);
  return obj.evaluate(nn::Var::constant(b.w_plus.w_plus), deltas, b.masks).breakdown;
}

// --- optimisation -----------------------------------------------------------

namespace {

std::string state_hash(const OptimizationConfig& cfg, int steps, const nn::Tensor& codes,
                       const std::map<int, nn::Tensor>& deltas) {
  std::string bytes = cfg.to_json().dump() + fmt::format("|{}|", steps);
  auto append = [&](const nn::Tensor& t) {
    bytes.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  };
  append(codes);
  for (const auto& [s, d] : deltas) append(d);
  return digest_hex(bytes);
}

}  // namespace

InversionResult invert(const Image& x, const LayeredGenerator& g, const LayerAssignment& a, const SegmentMap& seg,
                       const MaskSet& masks, const OptimizationConfig& cfg, const LatentPrior& prior,
                       const ProgressCallback& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  InversionResult result;
  result.bundle = make_bundle(g, g.initial_codes(), a, seg, masks);
  LatentPrior p = prior;
  p.literal_sigma = cfg.literal_sigma;
  const Objective objective(g, x, p, cfg.weights);

  nn::Var codes = nn::Var::leaf(g.initial_codes());
  std::map<int, nn::Var> deltas;
  std::vector<nn::Var> delta_params;
  for (const auto& [s, d] : result.bundle.delta_f) {
    deltas[s] = nn::Var::leaf(d);
    delta_params.push_back(deltas[s]);
  }
  nn::Adam adam;
  adam.add_group({codes}, {cfg.lr_codes});
  if (!delta_params.empty()) adam.add_group(delta_params, {cfg.lr_delta});

  double best = std::numeric_limits<double>::infinity();
  double window_best = best;
  int window_start = 0;
  nn::Tensor best_codes = codes.value();
  std::map<int, nn::Tensor> best_deltas = result.bundle.delta_f;
  int executed = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    Objective::Evaluation e;
    try {
      e = objective.evaluate(codes, deltas, masks);
    } catch (const NonFiniteError& err) {
      result.diverged = true;
      result.divergence_term = err.term();
      break;
    }
    ++executed;
    result.trace.push_back(e.breakdown);
    if (e.breakdown.total < best) {
      best = e.breakdown.total;
      best_codes = codes.value();
      for (auto& [s, d] : deltas) best_deltas[s] = d.value();
      result.best_step = step;
    }
    if (progress) progress(step + 1, cfg.steps, e.breakdown);
    if (cfg.early_stop_tolerance > 0 && step - window_start >= cfg.patience) {
      if (window_best - best < cfg.early_stop_tolerance * std::abs(window_best)) break;
      window_best = best;
      window_start = step;
    }
    if (step == 0) window_best = best;
    adam.zero_grad();
    nn::backward(e.total);
    adam.step();
  }

  LatentBundle& b = result.bundle;
  b.w_plus.w_plus = best_codes;
  b.delta_f = best_deltas;
  nn::round_to_float(b.w_plus.w_plus);
  for (auto& [s, d] : b.delta_f) nn::round_to_float(d);
  b.optimizer_state_hash = state_hash(cfg, executed, b.w_plus.w_plus, b.delta_f);
  result.reconstruction = form_image(g, b);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace sam
