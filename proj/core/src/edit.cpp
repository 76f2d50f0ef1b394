#include "sam/edit.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sam/errors.hpp"
#include "sam/spaces.hpp"

namespace sam {

namespace fs = std::filesystem;

void EditDirection::validate() const {
  if (name.empty()) throw UsageError("edit direction needs a name");
  if (capability.empty()) throw UsageError(fmt::format("direction '{}' has no capability flags", name));
  for (std::size_t s = 1; s < capability.size(); ++s) {
    if (capability[s] && !capability[s - 1]) {
      throw UsageError(fmt::format("direction '{}' applies at space {} but not at the shallower space {}", name, s, s - 1));
    }
  }
  for (double v : delta.values())
    if (!std::isfinite(v)) throw UsageError(fmt::format("direction '{}' has non-finite entries", name));
}

int EditDirection::deepest_capable() const {
  int deepest = -1;
  for (std::size_t s = 0; s < capability.size(); ++s)
    if (capability[s]) deepest = static_cast<int>(s);
  return deepest;
}

SambContainer direction_to_samb(const EditDirection& d, const std::vector<std::string>& space_names) {
  d.validate();
  if (d.capability.size() != space_names.size()) {
    throw UsageError(fmt::format("direction '{}' has {} capability flags for {} spaces", d.name, d.capability.size(),
                                 space_names.size()));
  }
  SambContainer c;
  nlohmann::json cap = nlohmann::json::object();
  for (std::size_t s = 0; s < space_names.size(); ++s) cap[space_names[s]] = static_cast<bool>(d.capability[s]);
  c.meta = {{"kind", "direction"}, {"name", d.name}, {"dataset", d.dataset}, {"capability", cap}};
  c.put("delta", d.delta);
  return c;
}

EditDirection direction_from_samb(const SambContainer& c, const std::vector<std::string>& space_names) {
  EditDirection d;
  try {
    d.name = c.meta.at("name").get<std::string>();
    d.dataset = c.meta.value("dataset", "");
    const auto& cap = c.meta.at("capability");
    for (const std::string& s : space_names) d.capability.push_back(cap.at(s).get<bool>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed direction metadata: ") + e.what());
  }
  d.delta = c.tensor("delta");
  try {
    d.validate();
  } catch (const UsageError& e) {
    throw LoadError(e.what());
  }
  return d;
}

void DirectionRegistry::add(EditDirection d) {
  d.validate();
  std::string name = d.name;
  directions_.insert_or_assign(std::move(name), std::move(d));
}

const EditDirection& DirectionRegistry::at(const std::string& name) const {
  auto it = directions_.find(name);
  if (it == directions_.end()) throw NotFoundError("unknown edit direction '" + name + "'");
  return it->second;
}

std::vector<const EditDirection*> DirectionRegistry::list(const std::string& dataset) const {
  std::vector<const EditDirection*> out;
  for (const auto& [name, d] : directions_)
    if (dataset.empty() || d.dataset == dataset) out.push_back(&d);
  return out;
}

DirectionRegistry load_directions(const fs::path& path, const LayeredGenerator& g) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".samb") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  const std::vector<std::string> names = space_names(g);
  const nn::Shape code_shape{g.code_rows(), g.code_dim()};
  DirectionRegistry reg;
  for (const fs::path& f : files) {
    EditDirection d;
    try {
      d = direction_from_samb(read_samb(f), names);
    } catch (const LoadError& e) {
      throw LoadError(f.string() + ": " + e.what());
    }
    if (d.delta.shape() != code_shape) {
      throw LoadError(fmt::format("{}: delta is {}, generator codes are {}", f.string(), nn::shape_str(d.delta.shape()),
                                  nn::shape_str(code_shape)));
    }
    reg.add(std::move(d));
  }
  return reg;
}

void save_direction(const fs::path& path, const EditDirection& d, const LayeredGenerator& g) {
  write_samb(path, direction_to_samb(d, space_names(g)));
}

std::vector<EditDirection> synthesize_table_directions(const StyleGenerator& g, int samples, std::uint64_t seed) {
  struct Row {
    const char* dataset;
    const char* name;
    int deepest;
  };
  static const Row kTable[] = {
      {"cars", "car size", 0},          {"cars", "add trees", 1},
      {"cars", "wheel type", 2},        {"cars", "car color (red)", 4},
      {"cats", "change pose", 0},       {"cats", "large cat eyes", 2},
      {"cats", "cat fur color (black)", 3}, {"cats", "cat with red nose", 3},
      {"horses", "change pose", 0},     {"horses", "horse with a saddle", 0},
      {"horses", "white horse", 1},     {"horses", "reduce trees", 2},
      {"ffhq", "add glasses", 0},       {"ffhq", "laughing person", 1},
      {"ffhq", "thick eyebrows", 3},    {"ffhq", "increase age", 4},
  };
  if (samples < 2) throw UsageError("need at least two samples for principal components");
  const int d = g.code_dim();
  Eigen::MatrixXd w(samples, d);
  for (int i = 0; i < samples; ++i) {
    const nn::Tensor row = sample_style(g, seed + static_cast<std::uint64_t>(i)).w_plus;
    for (int k = 0; k < d; ++k) w(i, k) = row[static_cast<std::size_t>(k)];
  }
  const Eigen::MatrixXd centred = w.rowwise() - w.colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centred.transpose() * centred / (samples - 1));

  const auto& b = g.boundaries();
  const int spaces = space_count(g);
  std::vector<EditDirection> out;
  int component = 0;
  for (const Row& r : kTable) {
    EditDirection e;
    // "change pose" exists for two datasets; the tag keeps names unique.
    e.name = std::string(r.name);
    if (e.name == "change pose") e.name += std::string(" (") + r.dataset + ")";
    e.dataset = r.dataset;
    e.capability.assign(static_cast<std::size_t>(spaces), false);
    for (int s = 0; s <= r.deepest; ++s) e.capability[static_cast<std::size_t>(s)] = true;
    const std::vector<int> rows =
        r.deepest == 0 ? g.rows_used(0, b[1]) : g.rows_used(b[static_cast<std::size_t>(r.deepest)], b.back());
    const int col = d - 1 - (component++ % d);
    const double scale = 2.0 * std::sqrt(std::max(0.0, eig.eigenvalues()(col)));
    e.delta = nn::Tensor({g.code_rows(), d});
    for (int row : rows)
      for (int k = 0; k < d; ++k) e.delta[static_cast<std::size_t>(row) * d + k] = scale * eig.eigenvectors()(k, col);
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

Applicability check_applicability(const EditDirection& d, const LayerAssignment& a) {
  Applicability out;
  for (std::size_t seg = 0; seg < a.spaces.size(); ++seg) {
    const int s = a.spaces[seg];
    const bool ok = s >= 0 && static_cast<std::size_t>(s) < d.capability.size() && d.capability[static_cast<std::size_t>(s)];
    out.segment_ok.push_back(ok);
    if (!ok) out.failing_segments.push_back(static_cast<int>(seg));
  }
  return out;
}

namespace {

// Splice at an injection layer. Where the mask is 1 the region takes the
// unedited feature plus its delta; elsewhere it blends toward that value.
void splice(nn::Tensor& f_edit, nn::Tensor& f_plain, const nn::Tensor& mask, const nn::Tensor& delta) {
  const std::size_t plane = mask.size();
  const std::size_t planes = f_edit.size() / plane;
  for (std::size_t p = 0; p < planes; ++p) {
    double* fb = f_edit.data() + p * plane;
    double* fa = f_plain.data() + p * plane;
    const double* dl = delta.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double m = mask[i];
      fb[i] = m == 1.0 ? fa[i] + dl[i] : fb[i] + m * ((fa[i] - fb[i]) + dl[i]);
      fa[i] += m * dl[i];
    }
  }
}

}  // namespace

Image apply_edit(const LayeredGenerator& g, const LatentBundle& b, const EditDirection& d, double magnitude, bool force) {
  b.validate(g);
  if (!std::isfinite(magnitude)) throw UsageError("edit magnitude must be finite");
  if (d.delta.shape() != b.w_plus.w_plus.shape()) {
    throw ShapeError(fmt::format("direction '{}' is {}, codes are {}", d.name, nn::shape_str(d.delta.shape()),
                                 nn::shape_str(b.w_plus.w_plus.shape())));
  }
  const Applicability verdict = check_applicability(d, b.assignment);
  if (!verdict.ok()) {
    if (!force) {
      throw UsageError(fmt::format("direction '{}' cannot be applied to {} segment(s)", d.name,
                                   verdict.failing_segments.size()));
    }
    spdlog::warn("forcing '{}' onto {} segment(s) whose latent space cannot express it", d.name,
                 verdict.failing_segments.size());
  }

  nn::NoGradGuard no_grad;
  const nn::Tensor& plain_codes = b.w_plus.w_plus;
  nn::Tensor edited_codes = plain_codes;
  if (magnitude != 0.0) {
    for (std::size_t i = 0; i < edited_codes.size(); ++i) edited_codes[i] = plain_codes[i] + magnitude * d.delta[i];
  }
  const nn::Var codes_a = nn::Var::constant(plain_codes);
  const nn::Var codes_b = nn::Var::constant(edited_codes);

  const auto& bounds = g.boundaries();
  nn::Tensor fb = g.run_slices(0, bounds[1], {}, codes_b).value();
  nn::Tensor fa;
  bool plain_needed = !b.delta_f.empty();
  if (plain_needed) fa = magnitude == 0.0 ? fb : g.run_slices(0, bounds[1], {}, codes_a).value();
  for (std::size_t s = 1; s + 1 < bounds.size(); ++s) {
    auto it = b.delta_f.find(static_cast<int>(s));
    if (it != b.delta_f.end()) splice(fb, fa, b.masks.feature_masks[s], it->second);
    // The plain stream is only needed while a deeper splice remains.
    plain_needed = b.delta_f.upper_bound(static_cast<int>(s)) != b.delta_f.end();
    fb = g.run_slices(bounds[s], bounds[s + 1], nn::Var::constant(std::move(fb)), codes_b).value();
    if (plain_needed) {
      fa = magnitude == 0.0 ? fb : g.run_slices(bounds[s], bounds[s + 1], nn::Var::constant(std::move(fa)), codes_a).value();
    }
  }
  for (double v : fb.values())
    if (!std::isfinite(v)) throw RenderError(fmt::format("edit '{}' at magnitude {} produced non-finite pixels", d.name, magnitude));
  return fb;
}

Image render_comparison(const LayeredGenerator& g, const LatentBundle& b, const EditDirection& d,
                        const std::vector<double>& magnitudes, bool force) {
  std::vector<Image> frames{form_image(g, b)};
  for (double m : magnitudes) frames.push_back(apply_edit(g, b, d, m, force));
  return hstack(frames);
}

}  // namespace sam
