#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "sam/bench.hpp"
#include "sam/conditional.hpp"
#include "sam/edit.hpp"
#include "sam/encoder.hpp"
#include "sam/errors.hpp"
#include "sam/fixtures.hpp"
#include "sam/metrics.hpp"
#include "sam/pipeline.hpp"
#include "sam/service/service.hpp"
#include "sam/spaces.hpp"

namespace fs = std::filesystem;
using namespace sam;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GeneratorOptions {
  std::string source = "toy";
  std::uint64_t seed = 7;
  int statistics_samples = 10000;
};

void add_generator_options(CLI::App* cmd, GeneratorOptions& g) {
  cmd->add_option("--generator", g.source, "\"toy\" or a generator checkpoint");
  cmd->add_option("--seed", g.seed, "generator seed");
  cmd->add_option("--stats-samples", g.statistics_samples, "styles sampled for the latent prior");
}

struct Loaded {
  GeneratorHandle g;
  LatentPrior prior;
};

Loaded load(const GeneratorOptions& o, bool literal_sigma = false) {
  GeneratorHandle g = load_generator(o.source, o.seed);
  return {g, {estimate_style_statistics(*g, o.statistics_samples, o.seed), 5.0, literal_sigma}};
}

SamConfig load_sam_config(const std::string& path) {
  if (path.empty()) return {};
  return SamConfig::from_json(nlohmann::json::parse(read_file(path)));
}

std::vector<LabeledImage> read_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<LabeledImage> out;
  for (const fs::path& f : files) out.push_back({f.stem().string(), read_png(f)});
  if (out.empty()) throw UsageError("no .png files in " + dir.string());
  return out;
}

std::vector<LabeledImage> toy_images(const StyleGenerator& g, int count, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < count; ++i) {
    out.push_back({fmt::format("toy{:05d}", i), overlay_target(g, seed + static_cast<std::uint64_t>(i))});
  }
  return out;
}

Image fit_to(const LayeredGenerator& g, Image x) {
  const int r = g.output_resolution();
  if (image_height(x) != r || image_width(x) != r) {
    spdlog::warn("resampling {}x{} image to {}x{}", image_height(x), image_width(x), r, r);
    x = resize_image(x, r, r);
  }
  return x;
}

// Generator named by a bundle's id, e.g. "toy:7".
GeneratorOptions generator_for_bundle(const SambContainer& c, GeneratorOptions o, bool explicit_generator) {
  if (explicit_generator) return o;
  const std::string id = c.meta.value("generator_id", "");
  if (id.rfind("toy:", 0) == 0) {
    o.source = "toy";
    o.seed = std::stoull(id.substr(4));
  }
  return o;
}

void print_assignment(const LayeredGenerator& g, const SamResult& r) {
  std::vector<int> pixels(static_cast<std::size_t>(space_count(g)), 0);
  for (int label : r.segments.labels) ++pixels[static_cast<std::size_t>(r.assignment.spaces[static_cast<std::size_t>(label)])];
  std::string parts;
  for (int s = 0; s < space_count(g); ++s) {
    parts += fmt::format("{}{}={:.0f}%", s ? " " : "", space_name(g, s),
                         100.0 * pixels[static_cast<std::size_t>(s)] / static_cast<double>(r.segments.labels.size()));
  }
  fmt::print("segments: {}  tau: {}  area: {}\n", r.segments.segment_count, r.assignment.tau, parts);
}

// --- subcommands ---------------------------------------------------------------

int cmd_build_dataset(const GeneratorOptions& go, const std::string& images, int toy_count, std::uint64_t toy_seed,
                      const std::string& out, int steps, int workers, const std::string& config) {
  const Loaded l = load(go);
  SamConfig cfg = load_sam_config(config);
  cfg.optimization.steps = steps;
  const auto items = images.empty() ? toy_images(*l.g, toy_count, toy_seed) : read_image_dir(images);
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetBuildReport r = build_error_dataset(items, *l.g, l.prior, cfg.optimization, out, workers);
  fmt::print("{} images: {} computed, {} reused, {} flagged in {:.1f}s\n", items.size(), r.computed, r.reused, r.flagged,
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_train_predictor(const std::string& dataset, const std::string& out, const PredictorTrainConfig& cfg,
                        int resolution) {
  const auto records = load_error_dataset(dataset);
  if (records.empty()) throw UsageError("dataset " + dataset + " has no complete records");
  const TrainedPredictor t = train_predictor(records, cfg, resolution);
  t.model->save(out);
  fmt::print("trained on {} records: loss {:.5f} -> {:.5f}\n", records.size(), t.history.train_loss.front(),
             t.history.train_loss.back());
  if (!t.history.validation_loss.empty()) {
    std::vector<DatasetRecord> val, train;
    for (const DatasetRecord& r : records) {
      const bool is_val = std::find(t.validation_ids.begin(), t.validation_ids.end(), r.id) != t.validation_ids.end();
      (is_val ? val : train).push_back(r);
    }
    fmt::print("validation l2 {:.5f}, constant mean-map baseline {:.5f}\n", t.history.validation_loss.back(),
               constant_baseline_l2(mean_maps(train), val));
  }
  return 0;
}

int cmd_invert(const GeneratorOptions& go, const std::string& image, const std::string& out,
               const std::optional<double>& tau, const std::optional<int>& steps, const std::string& predictor,
               const std::string& render, const std::string& overlay, const std::string& config, bool conditional) {
  SamConfig cfg = load_sam_config(config);
  if (tau) cfg.tau = *tau;
  if (steps) cfg.optimization.steps = *steps;
  std::unique_ptr<PredictorModel> model;
  if (!predictor.empty()) model = PredictorModel::load(predictor);

  const auto t0 = std::chrono::steady_clock::now();
  SamResult r;
  std::shared_ptr<const LayeredGenerator> g;
  if (conditional) {
    const auto cg = ConditionalGenerator::toy(go.seed);
    const Image x = fit_to(*cg->bind(0), read_png(image));
    const int label = predict_class(x, *cg);
    g = cg->bind(label);
    r = invert_sam(x, *g, {cg->code_statistics(go.statistics_samples, go.seed), 1.0, cfg.optimization.literal_sigma},
                   cfg, model.get());
    r.inversion.bundle.class_label = label;
    fmt::print("class: {}\n", label);
  } else {
    const Loaded l = load(go, cfg.optimization.literal_sigma);
    g = l.g;
    r = invert_sam(fit_to(*g, read_png(image)), *g, l.prior, cfg, model.get());
  }
  write_samb(out, bundle_to_samb(*g, r.inversion.bundle));
  if (!render.empty()) write_png(render, r.inversion.reconstruction);
  if (!overlay.empty()) write_file_atomic(overlay, encode_assignment_png(r.assignment, r.segments));
  print_assignment(*g, r);
  fmt::print("psnr {:.2f} dB, lpips {:.4f}, {:.1f}s{}\n", psnr(fit_to(*g, read_png(image)), r.inversion.reconstruction),
             lpips_vgg(fit_to(*g, read_png(image)), r.inversion.reconstruction).value,
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
             r.inversion.diverged ? " (diverged: " + r.inversion.divergence_term + ")" : "");
  return 0;
}

int cmd_encode_train(const GeneratorOptions& go, const std::string& out, int count, std::uint64_t toy_seed,
                     const EncoderTrainConfig& cfg, const std::string& predictor, double tau) {
  const Loaded l = load(go);
  std::unique_ptr<PredictorModel> model;
  if (!predictor.empty()) model = PredictorModel::load(predictor);
  std::vector<EncoderSample> samples;
  std::mt19937_64 rng(toy_seed);
  for (const LabeledImage& item : toy_images(*l.g, count, toy_seed)) {
    EncoderSample s{item.image, segment_image(item.image, "graph"), {}};
    if (model) {
      s.assignment = select_assignment(refine_map(predict_error_maps(*model, item.image), s.segments), s.segments, tau);
    } else {
      // Without a predictor, segments draw their space at random, biased toward the code space.
      for (int k = 0; k < s.segments.segment_count; ++k) {
        s.assignment.spaces.push_back(rng() % 2 == 0 ? 0 : static_cast<int>(rng() % space_count(*l.g)));
      }
      s.assignment.tau = tau;
    }
    samples.push_back(std::move(s));
  }
  const EncoderTrainingResult r = train_encoders(samples, *l.g, l.prior, cfg);
  r.encoders.save(out);
  for (const auto& [space, h] : r.loss_history) {
    fmt::print("{}: loss {:.4f} -> {:.4f}\n", space_name(*l.g, space), h.front(), h.back());
  }
  return 0;
}

int cmd_encode(const GeneratorOptions& go, const std::string& encoders, const std::string& image, const std::string& out,
               const std::string& predictor, const std::string& render, double tau, const std::string& config) {
  const Loaded l = load(go);
  SamConfig cfg = load_sam_config(config);
  cfg.tau = tau;
  const EncoderSet set = EncoderSet::load(*l.g, encoders);
  std::unique_ptr<PredictorModel> model;
  if (!predictor.empty()) model = PredictorModel::load(predictor);
  const Image x = fit_to(*l.g, read_png(image));
  const ErrorMap maps = invertibility_maps(x, *l.g, l.prior, cfg, model.get());
  const SegmentMap seg = segment_image(x, cfg.segmenter);
  const LayerAssignment a = select_assignment(refine_map(maps, seg), seg, cfg.tau);
  const auto t0 = std::chrono::steady_clock::now();
  const LatentBundle b = encode_bundle(x, a, seg, build_masks(a, seg, *l.g), *l.g, set);
  const Image rec = form_image(*l.g, b);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_samb(out, bundle_to_samb(*l.g, b));
  if (!render.empty()) write_png(render, rec);
  fmt::print("psnr {:.2f} dB in {:.4f}s\n", psnr(x, rec), secs);
  return 0;
}

int cmd_edit(GeneratorOptions go, bool explicit_generator, const std::string& bundle_path, const std::string& direction,
             double magnitude, const std::string& out, const std::string& directions, bool force,
             const std::vector<double>& strip) {
  const SambContainer c = read_samb(bundle_path);
  go = generator_for_bundle(c, go, explicit_generator);
  const GeneratorHandle g = load_generator(go.source, go.seed);
  const LatentBundle b = bundle_from_samb(*g, c);
  DirectionRegistry reg;
  if (directions.empty()) {
    for (EditDirection& d : synthesize_table_directions(*g)) reg.add(std::move(d));
  } else {
    reg = load_directions(directions, *g);
  }
  const EditDirection& d = reg.at(direction);
  const Applicability v = check_applicability(d, b.assignment);
  if (!v.ok()) {
    fmt::print(stderr, "'{}' is not applicable to segments:", d.name);
    for (int s : v.failing_segments) fmt::print(stderr, " {}({})", s, space_name(*g, b.assignment.spaces[static_cast<std::size_t>(s)]));
    fmt::print(stderr, "\n");
    if (!force) return kExitRuntime;
  }
  const Image img = strip.empty() ? apply_edit(*g, b, d, magnitude, force) : render_comparison(*g, b, d, strip, force);
  write_png(out, img);
  return 0;
}

int cmd_eval(const GeneratorOptions& go, const std::string& images, int toy_count, std::uint64_t toy_seed,
             const std::string& method, const std::string& out, const std::string& predictor, const std::string& encoders,
             const std::string& config) {
  const Loaded l = load(go);
  const SamConfig cfg = load_sam_config(config);
  std::unique_ptr<PredictorModel> model;
  if (!predictor.empty()) model = PredictorModel::load(predictor);
  std::optional<EncoderSet> set;
  if (method == "sam-encoder") {
    if (encoders.empty()) throw UsageError("--method sam-encoder needs --encoders");
    set = EncoderSet::load(*l.g, encoders);
  } else if (method != "sam" && method != "wplus") {
    throw UsageError("unknown method '" + method + "' (wplus, sam, sam-encoder)");
  }
  const auto items = images.empty() ? toy_images(*l.g, toy_count, toy_seed) : read_image_dir(images);
  EvalReport report;
  report.method = method;
  report.dataset = images.empty() ? "toy" : fs::path(images).filename().string();
  for (const LabeledImage& item : items) {
    const Image x = fit_to(*l.g, item.image);
    const auto t0 = std::chrono::steady_clock::now();
    Image rec;
    if (method == "wplus") {
      const SegmentMap whole = segment_image(x, "single");
      const LayerAssignment a = uniform_assignment(whole, 0);
      rec = invert(x, *l.g, a, whole, build_masks(a, whole, *l.g), cfg.optimization, l.prior).reconstruction;
    } else if (method == "sam") {
      rec = invert_sam(x, *l.g, l.prior, cfg, model.get()).inversion.reconstruction;
    } else {
      const ErrorMap maps = invertibility_maps(x, *l.g, l.prior, cfg, model.get());
      const SegmentMap seg = segment_image(x, cfg.segmenter);
      const LayerAssignment a = select_assignment(refine_map(maps, seg), seg, cfg.tau);
      rec = form_image(*l.g, encode_bundle(x, a, seg, build_masks(a, seg, *l.g), *l.g, *set));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.add({item.id, method, psnr(x, rec), lpips_vgg(x, rec).value, secs});
    spdlog::info("{}: {:.2f} dB", item.id, report.records.back().psnr_db);
  }
  const std::string csv = report.to_csv();
  if (out.empty()) {
    fmt::print("{}", csv);
  } else {
    write_file_atomic(out, csv);
  }
  fmt::print(stderr, "{} images, mean psnr {:.2f} dB, mean lpips {:.4f}\n", report.records.size(), report.mean_psnr(),
             report.mean_lpips());
  return 0;
}

int cmd_bench(const GeneratorOptions& go, int toy_count, std::uint64_t toy_seed, double max_seconds,
              const std::string& csv, const std::string& svg, const std::string& predictor, const std::string& encoders,
              const std::string& config) {
  const Loaded l = load(go);
  const SamConfig cfg = load_sam_config(config);
  std::unique_ptr<PredictorModel> model;
  if (!predictor.empty()) model = PredictorModel::load(predictor);
  std::vector<Image> images;
  for (const LabeledImage& item : toy_images(*l.g, toy_count, toy_seed)) images.push_back(item.image);

  const auto optimize = [&](const Image& x, const CheckpointSink& sink, bool adaptive) {
    SegmentMap seg = segment_image(x, "single");
    LayerAssignment a = uniform_assignment(seg, 0);
    if (adaptive) {
      seg = segment_image(x, cfg.segmenter);
      a = select_assignment(refine_map(invertibility_maps(x, *l.g, l.prior, cfg, model.get()), seg), seg, cfg.tau);
    }
    invert(x, *l.g, a, seg, build_masks(a, seg, *l.g), cfg.optimization, l.prior,
           [&](int, int, const LossBreakdown& b) { sink(10.0 * std::log10(4.0 / std::max(b.l2, 1e-10))); });
  };
  std::vector<RuntimeMethod> methods{
      {"wplus-optimization", [&](const Image& x, const CheckpointSink& s) { optimize(x, s, false); }},
      {"sam-optimization", [&](const Image& x, const CheckpointSink& s) { optimize(x, s, true); }},
  };
  std::optional<EncoderSet> set;
  if (!encoders.empty()) {
    set = EncoderSet::load(*l.g, encoders);
    methods.push_back({"sam-encoder", [&](const Image& x, const CheckpointSink& sink) {
                         const SegmentMap seg = segment_image(x, cfg.segmenter);
                         const LayerAssignment a =
                             select_assignment(refine_map(invertibility_maps(x, *l.g, l.prior, cfg, model.get()), seg), seg, cfg.tau);
                         sink(psnr(x, form_image(*l.g, encode_bundle(x, a, seg, build_masks(a, seg, *l.g), *l.g, *set))));
                       }});
  }
  const auto curves = benchmark_runtime(methods, images, log_budgets(max_seconds));
  write_file_atomic(csv, curves_to_csv(curves));
  if (!svg.empty()) write_file_atomic(svg, curves_to_svg(curves));
  for (const RuntimeCurve& c : curves) {
    if (c.points.empty()) continue;
    fmt::print("{}: first point {:.3g}s ({:.2f} dB), last {:.3g}s ({:.2f} dB){}\n", c.method, c.points.front().seconds,
               c.points.front().psnr_db, c.points.back().seconds, c.points.back().psnr_db,
               c.flagged ? " [truncated: " + c.error + "]" : "");
  }
  return 0;
}

int cmd_serve(const std::string& config, const std::optional<int>& port) {
  service::ServiceConfig cfg =
      service::ServiceConfig::load(config.empty() ? std::nullopt : std::optional<fs::path>(config));
  if (port) cfg.port = *port;
  service::Service svc(cfg);
  httplib::Server server;
  service::register_routes(server, svc);
  spdlog::info("listening on 0.0.0.0:{}", cfg.port);
  if (!server.listen("0.0.0.0", cfg.port)) throw std::runtime_error(fmt::format("cannot listen on port {}", cfg.port));
  return 0;
}

int cmd_directions(const GeneratorOptions& go, const std::string& out) {
  const GeneratorHandle g = load_generator(go.source, go.seed);
  fs::create_directories(out);
  for (const EditDirection& d : synthesize_table_directions(*g)) {
    std::string file;
    for (char ch : d.dataset + "-" + d.name) file += std::isalnum(static_cast<unsigned char>(ch)) ? static_cast<char>(std::tolower(ch)) : '_';
    save_direction(fs::path(out) / (file + ".samb"), d, *g);
    fmt::print("{}\n", file);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially adaptive GAN inversion and editing"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")->check(
      CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  GeneratorOptions go;
  std::string config, out, images, predictor, encoders, render, directions;
  int toy_count = 20, steps_i = 100, workers = 1;
  std::uint64_t toy_seed = 1000;

  auto* build = app.add_subcommand("build-dataset", "measure per-space error maps for a set of images");
  add_generator_options(build, go);
  build->add_option("--images", images, "directory of .png images (default: synthesized toy targets)");
  build->add_option("--toy-count", toy_count, "toy targets to synthesize");
  build->add_option("--toy-seed", toy_seed);
  build->add_option("--out", out, "dataset directory")->required();
  build->add_option("--steps", steps_i, "optimization steps per single-space inversion");
  build->add_option("--workers", workers);
  build->add_option("--config", config, "JSON optimization config");

  PredictorTrainConfig pcfg;
  std::string dataset;
  int resolution = 32;
  auto* trainp = app.add_subcommand("train-predictor", "train the invertibility predictor");
  trainp->add_option("--dataset", dataset)->required();
  trainp->add_option("--out", out)->required();
  trainp->add_option("--epochs", pcfg.epochs);
  trainp->add_option("--batch", pcfg.batch_size);
  trainp->add_option("--lr", pcfg.learning_rate);
  trainp->add_option("--validation", pcfg.validation_fraction);
  trainp->add_option("--train-seed", pcfg.seed);
  trainp->add_option("--resolution", resolution);

  std::string image;
  std::optional<double> tau;
  std::optional<int> steps;
  std::string overlay;
  bool conditional = false;
  auto* inv = app.add_subcommand("invert", "invert an image into a latent bundle");
  add_generator_options(inv, go);
  inv->add_option("--image", image)->required()->check(CLI::ExistingFile);
  inv->add_option("--out", out, "bundle (.samb)")->required();
  inv->add_option("--tau", tau, "invertibility threshold");
  inv->add_option("--steps", steps);
  inv->add_option("--predictor", predictor, "predictor checkpoint (default: probe inversions)");
  inv->add_option("--render", render, "write the reconstruction as PNG");
  inv->add_option("--overlay", overlay, "write the per-segment space map as indexed PNG");
  inv->add_option("--config", config);
  inv->add_flag("--conditional", conditional, "use the class-conditional toy generator");

  EncoderTrainConfig ecfg;
  bool train = false;
  double enc_tau = 0.1;
  auto* enc = app.add_subcommand("encode", "train encoders or invert with a single forward pass");
  add_generator_options(enc, go);
  enc->add_flag("--train", train, "train encoders on synthesized toy targets");
  enc->add_option("--encoders", encoders, "encoder checkpoint");
  enc->add_option("--image", image);
  enc->add_option("--out", out)->required();
  enc->add_option("--predictor", predictor);
  enc->add_option("--render", render);
  enc->add_option("--tau", enc_tau);
  enc->add_option("--toy-count", toy_count);
  enc->add_option("--toy-seed", toy_seed);
  enc->add_option("--epochs", ecfg.epochs);
  enc->add_option("--lr", ecfg.learning_rate);
  enc->add_option("--config", config);

  std::string direction;
  double magnitude = 1.0;
  bool force = false;
  std::vector<double> strip;
  std::string bundle;
  auto* ed = app.add_subcommand("edit", "apply an edit direction to a bundle");
  add_generator_options(ed, go);
  ed->add_option("--bundle", bundle)->required()->check(CLI::ExistingFile);
  ed->add_option("--direction", direction)->required();
  ed->add_option("--magnitude", magnitude);
  ed->add_option("--out", out, "edited PNG")->required();
  ed->add_option("--directions", directions, "direction file or directory (default: synthesized table)");
  ed->add_flag("--force", force, "apply even where the latent space cannot express the edit");
  ed->add_option("--strip", strip, "render inversion plus these magnitudes side by side")->delimiter(',');

  std::string method = "sam";
  auto* ev = app.add_subcommand("eval", "reconstruction PSNR/LPIPS table");
  add_generator_options(ev, go);
  ev->add_option("--images", images);
  ev->add_option("--toy-count", toy_count);
  ev->add_option("--toy-seed", toy_seed);
  ev->add_option("--method", method, "wplus, sam or sam-encoder");
  ev->add_option("--out", out, "CSV path (default: stdout)");
  ev->add_option("--predictor", predictor);
  ev->add_option("--encoders", encoders);
  ev->add_option("--config", config);

  double max_seconds = 3.0;
  std::string svg;
  auto* be = app.add_subcommand("bench", "reconstruction quality against wall-clock time");
  add_generator_options(be, go);
  be->add_option("--toy-count", toy_count);
  be->add_option("--toy-seed", toy_seed);
  be->add_option("--max-seconds", max_seconds);
  be->add_option("--out", out, "CSV path")->required();
  be->add_option("--svg", svg, "plot path");
  be->add_option("--predictor", predictor);
  be->add_option("--encoders", encoders);
  be->add_option("--config", config);

  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--config", config, "service JSON config");
  serve->add_option("--port", port);

  auto* dirs = app.add_subcommand("directions", "export the synthesized edit directions");
  add_generator_options(dirs, go);
  dirs->add_option("--out", out, "directory")->required();

  std::uint64_t target_seed = 0;
  bool plain = false;
  auto* target = app.add_subcommand("toy-target", "write a synthesized test image");
  add_generator_options(target, go);
  target->add_option("--target-seed", target_seed);
  target->add_flag("--plain", plain, "omit the out-of-range overlays");
  target->add_option("--out", out, "PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*build) return cmd_build_dataset(go, images, toy_count, toy_seed, out, steps_i, workers, config);
    if (*trainp) return cmd_train_predictor(dataset, out, pcfg, resolution);
    if (*inv) return cmd_invert(go, image, out, tau, steps, predictor, render, overlay, config, conditional);
    if (*enc) {
      if (train) return cmd_encode_train(go, out, toy_count, toy_seed, ecfg, predictor, enc_tau);
      if (encoders.empty() || image.empty()) throw UsageError("encode needs --encoders and --image (or --train)");
      return cmd_encode(go, encoders, image, out, predictor, render, enc_tau, config);
    }
    if (*ed) {
      const bool explicit_generator = ed->get_option("--generator")->count() + ed->get_option("--seed")->count() > 0;
      return cmd_edit(go, explicit_generator, bundle, direction, magnitude, out, directions, force, strip);
    }
    if (*ev) return cmd_eval(go, images, toy_count, toy_seed, method, out, predictor, encoders, config);
    if (*be) return cmd_bench(go, toy_count, toy_seed, max_seconds, out, svg, predictor, encoders, config);
    if (*serve) return cmd_serve(config, port);
    if (*dirs) return cmd_directions(go, out);
    if (*target) {
      const GeneratorHandle g = load_generator(go.source, go.seed);
      write_png(out, plain ? generated_target(*g, target_seed) : overlay_target(*g, target_seed));
      return 0;
    }
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const NotFoundError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
