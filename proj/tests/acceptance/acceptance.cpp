// Acceptance checks. Each criterion prints one PASS/FAIL line; run with
// criterion names as arguments to select a subset.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "../support/oracles.hpp"
#include "sam/conditional.hpp"
#include "sam/edit.hpp"
#include "sam/encoder.hpp"
#include "sam/error_dataset.hpp"
#include "sam/fixtures.hpp"
#include "sam/metrics.hpp"
#include "sam/nn/ops.hpp"
#include "sam/pipeline.hpp"
#include "sam/predictor.hpp"
#include "sam/samb.hpp"
#include "sam/spaces.hpp"

namespace fs = std::filesystem;
using namespace sam;

namespace {

// Pinned tolerances.
constexpr double kSliceTol = 1e-5;
constexpr double kFormationTol = 1e-6;
constexpr double kGradRelTol = 1e-3;
// Larger steps straddle leaky-ReLU kinks in the generator and measure the kink, not the slope.
constexpr double kGradStep = 1e-5;
constexpr double kGradFloor = 1e-7;
constexpr double kSmoothnessTol = 1e-5;
constexpr double kOracleRelTol = 1e-6;
constexpr double kPsnrTarget = 20.0;
constexpr double kPsnrTol = 0.01;
constexpr double kDominanceMarginDb = 1.0;
constexpr double kDominanceSlackDb = 0.0;
constexpr double kPredictorGain = 0.10;
constexpr double kEncoderSpeedup = 10.0;
constexpr double kFregRatio = 5.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

GeneratorHandle toy() {
  static const GeneratorHandle g = load_generator("toy", 7);
  return g;
}

const LatentPrior& toy_prior() {
  static const LatentPrior p{estimate_style_statistics(*toy(), 10000, 7), 5.0, false};
  return p;
}

nn::Tensor random_codes(const LayeredGenerator& g, std::mt19937_64& rng, double spread = 0.5) {
  nn::Tensor c = g.initial_codes();
  std::normal_distribution<double> n(0.0, spread);
  for (double& v : c.values()) v += n(rng);
  return c;
}

oracle::Vec to_vec(const nn::Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Segments assigned round-robin over all spaces.
LayerAssignment cycling_assignment(const SegmentMap& seg, int spaces) {
  LayerAssignment a;
  for (int k = 0; k < seg.segment_count; ++k) a.spaces.push_back(k % spaces);
  return a;
}

// --- slice composition ---------------------------------------------------------

Outcome slice_composition() {
  const auto g = toy();
  const auto& b = g->boundaries();
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    const nn::Var codes = nn::Var::constant(random_codes(*g, rng, 0.8));
    nn::NoGradGuard no_grad;
    const nn::Tensor full = g->run_slices(0, b.back(), {}, codes).value();
    // Chain through a random subset of interior boundaries.
    std::vector<int> cuts{0};
    for (std::size_t i = 1; i + 1 < b.size(); ++i)
      if (rng() % 2 == 0 || trial % 10 == 0) cuts.push_back(b[i]);
    cuts.push_back(b.back());
    nn::Var x;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) x = g->run_slices(cuts[i], cuts[i + 1], x, codes);
    worst = std::max(worst, max_abs_diff(full, x.value()));
  }
  return {worst <= kSliceTol, fmt::format("100 trials, max |full - chained| = {:.3g} (tol {:.0e})", worst, kSliceTol)};
}

// --- formation identity --------------------------------------------------------

Outcome formation_identity() {
  const auto g = toy();
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(2000 + trial);
    const nn::Tensor codes = random_codes(*g, rng);
    const Image target = generated_target(*g, 2000 + trial);
    const SegmentMap seg = segment_image(target, "grid:4");
    const LayerAssignment a = cycling_assignment(seg, space_count(*g));
    const LatentBundle bundle = make_bundle(*g, codes, a, seg, build_masks(a, seg, *g));
    worst = std::max(worst, max_abs_diff(form_image(*g, bundle), synthesize(*g, codes)));
  }
  return {worst <= kFormationTol,
          fmt::format("10 mixed bundles with zero deltas, max |form - synth| = {:.3g} (tol {:.0e})", worst, kFormationTol)};
}

// --- gradient checks -----------------------------------------------------------

struct GradStats {
  int checked = 0;
  int skipped = 0;
  double worst = 0;
};

// Compares the analytic gradient of `f` at `x` to central differences on `count`
// coordinates. A coordinate whose differences at h and h/2 disagree has a kink
// inside the window, where no derivative exists; it is replaced by another.
void check_gradient(const std::function<double(const oracle::Vec&)>& f, const oracle::Vec& x,
                    const nn::Tensor& analytic, int count, std::mt19937_64& rng, GradStats& st) {
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (int i = 0, attempts = 0; i < count && attempts < 20 * count; ++attempts) {
    const std::size_t k = pick(rng);
    const double fd = oracle::central_difference(f, x, k, kGradStep);
    const double fd_half = oracle::central_difference(f, x, k, kGradStep / 2);
    if (oracle::relative_error(fd, fd_half, kGradFloor) > kSmoothnessTol) {
      ++st.skipped;
      continue;
    }
    st.worst = std::max(st.worst, oracle::relative_error(analytic[k], fd, kGradFloor));
    ++st.checked;
    ++i;
  }
}

nn::Tensor from_vec(const oracle::Vec& v, const nn::Shape& shape) { return nn::Tensor(shape, v); }

Outcome gradient_checks() {
  const auto g = toy();
  std::mt19937_64 rng(3000);
  const Image target = overlay_target(*g, 3000);
  const SegmentMap seg = segment_image(target, "grid:2");
  LayerAssignment a;
  a.spaces = {0, 1, 3, 4};
  const MaskSet masks = build_masks(a, seg, *g);
  const nn::Tensor codes0 = random_codes(*g, rng);
  std::map<int, nn::Tensor> deltas0;
  for (int s : {1, 3, 4}) deltas0[s] = nn::Tensor::randn(g->feature_shape(space_layer(*g, s)), rng, 0.05);

  std::vector<std::string> lines;
  bool pass = true;
  const auto report = [&](const std::string& what, const GradStats& st) {
    pass = pass && st.worst <= kGradRelTol && st.checked >= 20;
    lines.push_back(fmt::format("{} {} coords max rel {:.2e}{}", what, st.checked, st.worst,
                                st.skipped ? fmt::format(" ({} at kinks skipped)", st.skipped) : ""));
  };

  // Objective gradients with respect to the codes and each delta.
  const auto objective_check = [&](const LossWeights& w, bool codes_side, int count) {
    const Objective obj(*g, target, toy_prior(), w);
    const auto eval = [&](const nn::Tensor& c, const std::map<int, nn::Tensor>& d) {
      std::map<int, nn::Var> dv;
      for (const auto& [s, t] : d) dv[s] = nn::Var::constant(t);
      nn::NoGradGuard no_grad;
      return obj.evaluate(nn::Var::constant(c), dv, masks).total.value().item();
    };
    nn::Var cv = nn::Var::leaf(codes0);
    std::map<int, nn::Var> dv;
    for (const auto& [s, t] : deltas0) dv[s] = nn::Var::leaf(t);
    nn::backward(obj.evaluate(cv, dv, masks).total);
    GradStats st;
    if (codes_side) {
      check_gradient([&](const oracle::Vec& v) { return eval(from_vec(v, codes0.shape()), deltas0); }, to_vec(codes0),
                     cv.grad(), count, rng, st);
    } else {
      for (const auto& [s, t] : deltas0) {
        const int s_copy = s;
        check_gradient(
            [&](const oracle::Vec& v) {
              auto d = deltas0;
              d[s_copy] = from_vec(v, t.shape());
              return eval(codes0, d);
            },
            to_vec(t), dv[s].grad(), count, rng, st);
      }
    }
    return st;
  };

  report("reconstruction/codes", objective_check({1.0, 0.0, 0.0}, true, 20));
  report("reconstruction/deltas", objective_check({1.0, 0.0, 0.0}, false, 8));

  // Gaussian prior on its own, both covariance forms.
  for (bool literal : {false, true}) {
    const LatentPrior prior{toy_prior().stats, 5.0, literal};
    nn::Var cv = nn::Var::leaf(codes0);
    nn::backward(latent_prior_var(cv, prior));
    GradStats st;
    check_gradient(
        [&](const oracle::Vec& v) {
          nn::NoGradGuard no_grad;
          return latent_prior_var(nn::Var::constant(from_vec(v, codes0.shape())), prior).value().item();
        },
        to_vec(codes0), cv.grad(), 24, rng, st);
    report(literal ? "prior(literal)/codes" : "prior/codes", st);
  }

  report("fspace term/deltas", objective_check({0.0, 0.0, 1.0}, false, 8));
  report("full objective/codes", objective_check({1.0, 1e-3, 1.0}, true, 20));

  // Z+ prior and the class-conditional objective.
  const auto cg = ConditionalGenerator::toy(11);
  const auto bound = cg->bind(3);
  const StyleStatistics zs = cg->code_statistics(4000, 11);
  const LatentPrior zprior{zs, 1.0, false};
  nn::Tensor z0 = cg->sample_codes(12);
  for (double& v : z0.values()) v += 0.3 * std::normal_distribution<double>()(rng);
  {
    nn::Var zv = nn::Var::leaf(z0);
    nn::backward(latent_prior_var(zv, zprior));
    GradStats st;
    check_gradient(
        [&](const oracle::Vec& v) { return zplus_regularizer(from_vec(v, z0.shape()), zs); }, to_vec(z0), zv.grad(), 24,
        rng, st);
    report("z-prior/codes", st);
  }
  {
    const Image ct = with_overlays(cg->sample(3, 13), 13);
    const SegmentMap cseg = segment_image(ct, "grid:2");
    LayerAssignment ca;
    ca.spaces = {0, 1, 2, 0};
    const MaskSet cmasks = build_masks(ca, cseg, *bound);
    const Objective obj(*bound, ct, zprior, {1.0, 1e-3, 1e-3});
    nn::Var zv = nn::Var::leaf(z0);
    nn::backward(obj.evaluate(zv, {}, cmasks).total);
    GradStats st;
    check_gradient(
        [&](const oracle::Vec& v) {
          nn::NoGradGuard no_grad;
          return obj.evaluate(nn::Var::constant(from_vec(v, z0.shape())), {}, cmasks).total.value().item();
        },
        to_vec(z0), zv.grad(), 20, rng, st);
    report("conditional objective/codes", st);
  }

  std::string detail;
  for (const std::string& l : lines) detail += (detail.empty() ? "" : "; ") + l;
  return {pass, detail + fmt::format(" (tol {:.0e}, step {:.0e})", kGradRelTol, kGradStep)};
}

// --- regularizer oracles -------------------------------------------------------

Outcome regularizer_oracles() {
  double worst = 0;
  int cases = 0;
  const auto g = toy();
  const StyleStatistics& ws = toy_prior().stats;
  const int d = g->code_dim();
  for (int trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(4000 + trial);
    const nn::Tensor codes = random_codes(*g, rng, 0.3 + 0.1 * trial);
    for (bool literal : {false, true}) {
      const double got = wplus_regularizer({codes}, ws, literal);
      const double want = oracle::gaussian_prior(to_vec(codes), g->code_rows(), d, to_vec(ws.mu), to_vec(ws.sigma),
                                                 ws.ridge, 5.0, literal);
      worst = std::max(worst, oracle::relative_error(got, want));
      ++cases;
    }
  }
  const auto cg = ConditionalGenerator::toy(11);
  const StyleStatistics zs = cg->code_statistics(4000, 11);
  for (int trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(4100 + trial);
    nn::Tensor z = nn::Tensor::randn({cg->code_rows(), cg->code_dim()}, rng, 0.5 + 0.1 * trial);
    const double got = zplus_regularizer(z, zs);
    const double want = oracle::gaussian_prior(to_vec(z), cg->code_rows(), cg->code_dim(), to_vec(zs.mu),
                                               to_vec(zs.sigma), zs.ridge, 1.0, false);
    worst = std::max(worst, oracle::relative_error(got, want));
    ++cases;
  }
  return {worst <= kOracleRelTol, fmt::format("{} cases, max rel error {:.3g} (tol {:.0e})", cases, worst, kOracleRelTol)};
}

// --- PSNR ----------------------------------------------------------------------

Outcome psnr_analytic() {
  std::mt19937_64 rng(5000);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  Image x = make_image(32, 32);
  for (double& v : x.values()) v = u(rng);
  Image y = x;
  for (double& v : y.values()) v += 0.1;
  const double unit = psnr(x, y, 1.0);
  // The same offset in the internal [-1, 1] range is 0.2 against a peak of 2.
  Image x2 = x, y2 = y;
  for (double& v : x2.values()) v = 2 * v - 1;
  for (double& v : y2.values()) v = 2 * v - 1;
  const double internal = psnr(x2, y2);
  const double same = psnr(x, x);
  const bool pass = std::abs(unit - kPsnrTarget) <= kPsnrTol && std::abs(internal - kPsnrTarget) <= kPsnrTol &&
                    same == kPsnrCap &&
                    std::abs(unit - oracle::psnr(to_vec(x), to_vec(y), 1.0)) <= 1e-9;
  return {pass, fmt::format("offset 0.1: {:.4f} dB (unit peak), {:.4f} dB (internal range); identical: {} (cap {})", unit,
                            internal, same, kPsnrCap)};
}

// --- selection monotonicity ----------------------------------------------------

Outcome selection_monotonicity() {
  const auto g = toy();
  int violations = 0, idempotence = 0, partition = 0;
  const int spaces = space_count(*g);
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(6000 + trial);
    const Image img = overlay_target(*g, 6000 + trial);
    const SegmentMap seg = segment_image(img, "graph");
    ErrorMap raw;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int s = 0; s < spaces; ++s) {
      nn::Tensor m({seg.height, seg.width});
      for (double& v : m.values()) v = u(rng);
      raw.maps.push_back(m);
    }
    const ErrorMap refined = refine_map(raw, seg);
    const ErrorMap twice = refine_map(refined, seg);
    for (int s = 0; s < spaces; ++s)
      if (max_abs_diff(refined.maps[s], twice.maps[s]) > 1e-12) ++idempotence;

    std::vector<int> previous(static_cast<std::size_t>(seg.segment_count), spaces);
    for (int step = 0; step <= 100; ++step) {
      const LayerAssignment a = select_assignment(refined, seg, step / 100.0);
      for (int k = 0; k < seg.segment_count; ++k) {
        if (a.spaces[k] > previous[k]) ++violations;
        previous[k] = a.spaces[k];
      }
      if (step % 25 == 0) {
        const MaskSet masks = build_masks(a, seg, *g);
        for (int p = 0; p < seg.height * seg.width; ++p) {
          double cover = 0;
          for (const nn::Tensor& r : masks.regions)
            if (!r.empty()) cover += r[static_cast<std::size_t>(p)];
          if (cover != 1.0) ++partition;
        }
      }
    }
  }
  return {violations == 0 && idempotence == 0 && partition == 0,
          fmt::format("50 maps x 101 tau values: {} deepening steps, {} non-idempotent refinements, {} pixels not covered "
                      "exactly once",
                      violations, idempotence, partition)};
}

// --- deeper-layer dominance ----------------------------------------------------

Outcome deeper_layer_dominance() {
  const auto g = toy();
  const int spaces = space_count(*g);
  const int n = 20;
  std::vector<double> mean(static_cast<std::size_t>(spaces), 0.0);
  double sam_mean = 0;
  SamConfig cfg;
  for (int i = 0; i < n; ++i) {
    const Image x = overlay_target(*g, 7000 + i);
    const MeasuredMaps measured = measure_error_maps(x, *g, toy_prior(), cfg.optimization);
    for (int s = 0; s < spaces; ++s) mean[s] += psnr(x, measured.runs[s].reconstruction) / n;
    const SamResult r = invert_with_maps(x, *g, toy_prior(), cfg, measured.maps);
    sam_mean += psnr(x, r.inversion.reconstruction) / n;
    spdlog::debug("target {}: sam {:.2f} dB", i, psnr(x, r.inversion.reconstruction));
  }
  bool monotone = true;
  std::string chain;
  for (int s = 0; s < spaces; ++s) {
    if (s > 0 && mean[s] + kDominanceSlackDb < mean[s - 1]) monotone = false;
    chain += fmt::format("{}{} {:.2f}", s ? " <= " : "", space_name(*g, s), mean[s]);
  }
  const double margin = sam_mean - mean[0];
  return {monotone && margin >= kDominanceMarginDb,
          fmt::format("mean PSNR over {} targets: {}; SAM {:.2f} dB, margin over W+ {:+.2f} dB (need {:.1f})", n, chain,
                      sam_mean, margin, kDominanceMarginDb)};
}

// --- edit identities -----------------------------------------------------------

Outcome zero_edit_identity() {
  const auto g = toy();
  const auto directions = synthesize_table_directions(*g);
  int mismatched_zero = 0, mismatched_plain = 0, gated = 0, cases = 0;
  const int spaces = space_count(*g);
  for (int trial = 0; trial < 8; ++trial) {
    std::mt19937_64 rng(8000 + trial);
    const nn::Tensor codes = random_codes(*g, rng);
    const Image img = overlay_target(*g, 8000 + trial);
    const SegmentMap seg = segment_image(img, "graph");
    const LayerAssignment a = cycling_assignment(seg, spaces);
    LatentBundle b = make_bundle(*g, codes, a, seg, build_masks(a, seg, *g));
    for (auto& [s, d] : b.delta_f) d = nn::Tensor::randn(d.shape(), rng, 0.2);
    const Image base = form_image(*g, b);
    for (const EditDirection& d : directions) {
      if (!bitwise_equal(apply_edit(*g, b, d, 0.0, true), base)) ++mismatched_zero;
      ++cases;
    }

    // All-W+ bundle: no splices, so the edit is plain synthesis of shifted codes.
    const LayerAssignment plain = uniform_assignment(seg, 0);
    const LatentBundle pb = make_bundle(*g, codes, plain, seg, build_masks(plain, seg, *g));
    for (const EditDirection& d : directions) {
      const double m = 1.5 - 0.5 * trial;
      nn::Tensor shifted = codes;
      for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = codes[i] + m * d.delta[i];
      if (!bitwise_equal(apply_edit(*g, pb, d, m, true), synthesize(*g, shifted))) ++mismatched_plain;
    }

    // Edit confined to rows before F_l on an image assigned wholly to F_l.
    for (int s = 1; s < spaces; ++s) {
      const int layer = space_layer(*g, s);
      const std::vector<int> early = g->rows_used(0, layer);
      const std::vector<int> late = g->rows_used(layer, g->boundaries().back());
      EditDirection d{"gated", "toy", nn::Tensor({g->code_rows(), g->code_dim()}), {}};
      d.capability.assign(static_cast<std::size_t>(spaces), false);
      for (int k = 0; k <= s; ++k) d.capability[k] = true;
      for (int r : early) {
        if (std::find(late.begin(), late.end(), r) != late.end()) continue;
        for (int k = 0; k < g->code_dim(); ++k) d.delta[static_cast<std::size_t>(r) * g->code_dim() + k] = 1.0;
      }
      const LayerAssignment whole = uniform_assignment(seg, s);
      LatentBundle fb = make_bundle(*g, codes, whole, seg, build_masks(whole, seg, *g));
      for (auto& [sp, delta] : fb.delta_f) delta = nn::Tensor::randn(delta.shape(), rng, 0.2);
      if (!bitwise_equal(apply_edit(*g, fb, d, 2.0), apply_edit(*g, fb, d, 0.0))) ++gated;
    }
  }
  return {mismatched_zero == 0 && mismatched_plain == 0 && gated == 0,
          fmt::format("{} zero-magnitude edits, {} differ from formation; {} all-W+ edits differ from shifted synthesis; "
                      "{} gated edits leak",
                      cases, mismatched_zero, mismatched_plain, gated)};
}

// --- predictor -----------------------------------------------------------------

Outcome predictor_signal() {
  const auto g = toy();
  const fs::path dir = fs::temp_directory_path() / fmt::format("sam-acceptance-dataset-{}", ::getpid());
  fs::remove_all(dir);
  std::vector<LabeledImage> items;
  for (int i = 0; i < 120; ++i) items.push_back({fmt::format("t{:04d}", i), overlay_target(*g, 9000 + i)});
  OptimizationConfig ocfg;
  ocfg.steps = 100;
  build_error_dataset(items, *g, toy_prior(), ocfg, dir, 1);
  const auto records = load_error_dataset(dir);
  fs::remove_all(dir);

  PredictorTrainConfig pcfg;
  pcfg.learning_rate = 3e-3;
  const TrainedPredictor t = train_predictor(records, pcfg);
  std::vector<DatasetRecord> train, held_out;
  for (const DatasetRecord& r : records) {
    const bool v = std::find(t.validation_ids.begin(), t.validation_ids.end(), r.id) != t.validation_ids.end();
    (v ? held_out : train).push_back(r);
  }
  const double model = predictor_l2(*t.model, held_out);
  const double baseline = constant_baseline_l2(mean_maps(train), held_out);
  return {!held_out.empty() && model <= (1.0 - kPredictorGain) * baseline,
          fmt::format("{} records ({} held out): predictor l2 {:.5f}, mean-map baseline {:.5f}, ratio {:.3f} (need <= {:.2f})",
                      records.size(), held_out.size(), model, baseline, model / baseline, 1.0 - kPredictorGain)};
}

// --- encoder speedup -----------------------------------------------------------

Outcome encoder_speedup() {
  const auto g = toy();
  const Image x = overlay_target(*g, 10000);
  const SegmentMap seg = segment_image(x, "graph");
  const LayerAssignment a = cycling_assignment(seg, space_count(*g));
  const MaskSet masks = build_masks(a, seg, *g);
  EncoderSet set(g->id());
  for (int s = 0; s < space_count(*g); ++s) set.add(std::make_unique<Encoder>(*g, s, 100 + s));

  using clock = std::chrono::steady_clock;
  OptimizationConfig cfg;
  cfg.steps = 300;
  auto t0 = clock::now();
  const InversionResult opt = invert(x, *g, a, seg, masks, cfg, toy_prior());
  const double opt_s = std::chrono::duration<double>(clock::now() - t0).count();

  double enc_s = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < 3; ++rep) {
    t0 = clock::now();
    const LatentBundle b = encode_bundle(x, a, seg, masks, *g, set);
    (void)form_image(*g, b);
    enc_s = std::min(enc_s, std::chrono::duration<double>(clock::now() - t0).count());
  }
  const double ratio = opt_s / enc_s;
  return {ratio >= kEncoderSpeedup,
          fmt::format("300-step invert {:.3f}s, encode+render {:.4f}s, speedup {:.0f}x (need {:.0f}x)", opt_s, enc_s,
                      ratio, kEncoderSpeedup)};
}

// --- F-space regularization ablation --------------------------------------------

Outcome freg_ablation() {
  const auto g = toy();
  double with_reg = 0, without = 0;
  const int n = 10;
  for (int i = 0; i < n; ++i) {
    const Image x = overlay_target(*g, 11000 + i);
    const SegmentMap seg = segment_image(x, "graph");
    const LayerAssignment a = cycling_assignment(seg, space_count(*g));
    const MaskSet masks = build_masks(a, seg, *g);
    OptimizationConfig cfg;
    with_reg += fspace_regularizer(invert(x, *g, a, seg, masks, cfg, toy_prior()).bundle) / n;
    cfg.weights.lambda_f = 0.0;
    without += fspace_regularizer(invert(x, *g, a, seg, masks, cfg, toy_prior()).bundle) / n;
  }
  const double ratio = without / with_reg;
  return {ratio >= kFregRatio,
          fmt::format("mean |delta f|^2 over {} targets: {:.3f} with lambda_F = {:.0e}, {:.3f} without, ratio {:.2f} "
                      "(need {:.0f})",
                      n, with_reg, LossWeights{}.lambda_f, without, ratio, kFregRatio)};
}

// --- SAMB round trip -----------------------------------------------------------

Outcome samb_roundtrip() {
  std::mt19937_64 rng(12000);
  int arrays = 0, mismatched = 0;
  const fs::path path = fs::temp_directory_path() / fmt::format("sam-acceptance-{}.samb", ::getpid());
  for (int trial = 0; trial < 25; ++trial) {
    SambContainer c;
    c.meta = {{"trial", trial}, {"kind", "test"}};
    const int count = 1 + static_cast<int>(rng() % 5);
    for (int k = 0; k < count; ++k) {
      SambArray a;
      const int rank = 1 + static_cast<int>(rng() % 4);
      std::size_t n = 1;
      for (int r = 0; r < rank; ++r) {
        a.dims.push_back(1 + static_cast<std::uint32_t>(rng() % 7));
        n *= a.dims.back();
      }
      for (std::size_t i = 0; i < n; ++i) {
        // Raw bit patterns cover NaN payloads, infinities, denormals and signed zeros.
        a.values.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng())));
      }
      a.values[0] = std::numeric_limits<float>::quiet_NaN();
      c.arrays[fmt::format("a{}", k)] = a;
    }
    write_samb(path, c);
    const SambContainer back = read_samb(path);
    const SambContainer mem = SambContainer::from_bytes(c.to_bytes());
    for (const auto& [name, a] : c.arrays) {
      ++arrays;
      for (const SambContainer* other : {&back, &mem}) {
        const auto it = other->arrays.find(name);
        if (it == other->arrays.end() || it->second.dims != a.dims || it->second.values.size() != a.values.size() ||
            std::memcmp(it->second.values.data(), a.values.data(), a.values.size() * sizeof(float)) != 0) {
          ++mismatched;
        }
      }
    }
    if (back.meta != c.meta) ++mismatched;
  }
  fs::remove(path);
  return {mismatched == 0, fmt::format("{} random arrays through file and memory, {} mismatches", arrays, mismatched)};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {"slice_composition", 30, slice_composition},
      {"formation_identity", 5, formation_identity},
      {"gradient_checks", 120, gradient_checks},
      {"regularizer_oracles", 10, regularizer_oracles},
      {"psnr_analytic", 1, psnr_analytic},
      {"selection_monotonicity", 30, selection_monotonicity},
      {"deeper_layer_dominance", 1200, deeper_layer_dominance},
      {"zero_edit_identity", 60, zero_edit_identity},
      {"predictor_signal", 900, predictor_signal},
      {"encoder_speedup", 300, encoder_speedup},
      {"freg_ablation", 900, freg_ablation},
      {"samb_roundtrip", 5, samb_roundtrip},
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const std::string& s : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == s; })) {
      fmt::print(stderr, "unknown criterion '{}'\n", s);
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.name) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    fmt::print("{} {}: {} [{:.1f}s of {:.0f}s]{}\n", pass ? "PASS" : "FAIL", c.name, o.detail, secs, c.budget_seconds,
               in_budget ? "" : " over budget");
    std::fflush(stdout);
    failed += pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
