#include "sam/invertibility.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "sam/nn/ops.hpp"
#include "sam/spaces.hpp"

namespace sam {

const char* to_string(ErrorSource s) {
  switch (s) {
    case ErrorSource::Measured: return "measured";
    case ErrorSource::Predicted: return "predicted";
    case ErrorSource::Refined: return "refined";
  }
  return "measured";
}

ErrorSource error_source_from_string(const std::string& s) {
  if (s == "measured") return ErrorSource::Measured;
  if (s == "predicted") return ErrorSource::Predicted;
  if (s == "refined") return ErrorSource::Refined;
  throw UsageError("unknown error map source '" + s + "'");
}

std::vector<int> SegmentMap::segment_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(segment_count), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

void SegmentMap::validate() const {
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError(fmt::format("segment map has {} labels for {}x{}", labels.size(), height, width));
  }
  for (int l : labels) {
    if (l < 0 || l >= segment_count) throw ShapeError(fmt::format("segment label {} out of range", l));
  }
}

bool MaskSet::has_region(int space) const {
  if (space < 0 || static_cast<std::size_t>(space) >= regions.size()) return false;
  const auto v = regions[static_cast<std::size_t>(space)].values();
  return std::any_of(v.begin(), v.end(), [](double x) { return x > 0; });
}

// --- segmentation ------------------------------------------------------------

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)), size_(static_cast<std::size_t>(n), 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      int& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }
  int unite(int a, int b) {
    if (size_[static_cast<std::size_t>(a)] < size_[static_cast<std::size_t>(b)]) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    size_[static_cast<std::size_t>(a)] += size_[static_cast<std::size_t>(b)];
    return a;
  }
  int size(int root) const { return size_[static_cast<std::size_t>(root)]; }

 private:
  std::vector<int> parent_;
  std::vector<int> size_;
};

Image gaussian_smooth(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = static_cast<int>(std::ceil(4 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  const int h = image_height(img);
  const int w = image_width(img);
  Image tmp(img.shape());
  Image out(img.shape());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * img.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

struct Edge {
  double weight;
  int a;
  int b;
};

std::mutex g_registry_mutex;

std::map<std::string, std::function<Segmenter(const std::string&)>>& registry() {
  static std::map<std::string, std::function<Segmenter(const std::string&)>> r = [] {
    std::map<std::string, std::function<Segmenter(const std::string&)>> m;
    m["graph"] = [](const std::string& args) -> Segmenter {
      GraphSegmenterParams p;
      std::stringstream ss(args);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("graph segmenter option '" + item + "' lacks '='");
        const std::string key = item.substr(0, eq);
        const double value = std::stod(item.substr(eq + 1));
        if (key == "k") p.k = value;
        else if (key == "min") p.min_size = static_cast<int>(value);
        else if (key == "sigma") p.sigma = value;
        else throw UsageError("unknown graph segmenter option '" + key + "'");
      }
      return [p](const Image& img) { return segment_graph(img, p); };
    };
    m["single"] = [](const std::string&) -> Segmenter {
      return [](const Image& img) {
        const int h = image_height(img);
        const int w = image_width(img);
        return SegmentMap{h, w, 1, std::vector<int>(static_cast<std::size_t>(h) * w, 0)};
      };
    };
    m["grid"] = [](const std::string& args) -> Segmenter {
      const int n = args.empty() ? 4 : std::stoi(args);
      if (n < 1) throw UsageError("grid segmenter needs n >= 1");
      return [n](const Image& img) {
        const int h = image_height(img);
        const int w = image_width(img);
        std::vector<int> raw(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) raw[static_cast<std::size_t>(y) * w + x] = (y * n / h) * n + x * n / w;
        return compact_labels(h, w, raw);
      };
    };
    m["labels"] = [](const std::string& path) -> Segmenter {
      if (path.empty()) throw UsageError("labels segmenter needs a path: labels:<file.png>");
      const Image labels = read_png(path);
      return [labels, path](const Image& img) {
        Image l = labels;
        if (image_height(l) != image_height(img) || image_width(l) != image_width(img)) {
          throw ShapeError(fmt::format("label map {} is {}x{}, image is {}x{}", path, image_height(l),
                                       image_width(l), image_height(img), image_width(img)));
        }
        const int h = image_height(l);
        const int w = image_width(l);
        std::vector<int> raw(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            raw[static_cast<std::size_t>(y) * w + x] =
                (to_byte(l.at(0, y, x)) << 16) | (to_byte(l.at(1, y, x)) << 8) | to_byte(l.at(2, y, x));
          }
        return compact_labels(h, w, raw);
      };
    };
    return m;
  }();
  return r;
}

}  // namespace

SegmentMap compact_labels(int height, int width, const std::vector<int>& raw) {
  std::map<int, int> ids;
  SegmentMap seg{height, width, 0, std::vector<int>(raw.size())};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = ids.emplace(raw[i], seg.segment_count);
    if (inserted) ++seg.segment_count;
    seg.labels[i] = it->second;
  }
  return seg;
}

SegmentMap segment_graph(const Image& image, const GraphSegmenterParams& params) {
  check_image(image);
  const int h = image_height(image);
  const int w = image_width(image);
  const Image img = gaussian_smooth(image, params.sigma);
  auto dist = [&](int y0, int x0, int y1, int x1) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = img.at(c, y0, x0) - img.at(c, y1, x1);
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(h) * w * 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x + 1 < w) edges.push_back({dist(y, x, y, x + 1), i, i + 1});
      if (y + 1 < h) edges.push_back({dist(y, x, y + 1, x), i, i + w});
      if (x + 1 < w && y + 1 < h) edges.push_back({dist(y, x, y + 1, x + 1), i, i + w + 1});
      if (x + 1 < w && y > 0) edges.push_back({dist(y, x, y - 1, x + 1), i, i - w + 1});
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.weight < b.weight; });

  const int n = h * w;
  DisjointSets sets(n);
  std::vector<double> threshold(static_cast<std::size_t>(n), params.k);
  for (const Edge& e : edges) {
    int a = sets.find(e.a);
    int b = sets.find(e.b);
    if (a == b) continue;
    if (e.weight <= threshold[static_cast<std::size_t>(a)] && e.weight <= threshold[static_cast<std::size_t>(b)]) {
      const int r = sets.unite(a, b);
      threshold[static_cast<std::size_t>(r)] = e.weight + params.k / sets.size(r);
    }
  }
  for (const Edge& e : edges) {
    const int a = sets.find(e.a);
    const int b = sets.find(e.b);
    if (a != b && (sets.size(a) < params.min_size || sets.size(b) < params.min_size)) sets.unite(a, b);
  }
  std::vector<int> raw(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) raw[static_cast<std::size_t>(i)] = sets.find(i);
  return compact_labels(h, w, raw);
}

void register_segmenter(const std::string& prefix, std::function<Segmenter(const std::string&)> factory) {
  std::lock_guard lock(g_registry_mutex);
  registry()[prefix] = std::move(factory);
}

SegmentMap segment_image(const Image& image, const std::string& backend) {
  check_image(image);
  const auto colon = backend.find(':');
  const std::string prefix = backend.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : backend.substr(colon + 1);
  std::function<Segmenter(const std::string&)> factory;
  {
    std::lock_guard lock(g_registry_mutex);
    auto it = registry().find(prefix);
    if (it == registry().end()) throw UsageError("unknown segmenter backend '" + backend + "'");
    factory = it->second;
  }
  SegmentMap seg = factory(args)(image);
  seg.validate();
  return seg;
}

// --- refinement and selection -----------------------------------------------

namespace {

void check_map_shapes(const ErrorMap& e, const SegmentMap& seg) {
  seg.validate();
  for (const nn::Tensor& m : e.maps) {
    if (m.shape() != nn::Shape{seg.height, seg.width}) {
      throw ShapeError(fmt::format("error map {} does not match segments {}x{}", nn::shape_str(m.shape()),
                                   seg.height, seg.width));
    }
  }
}

}  // namespace

std::vector<std::vector<double>> segment_means(const ErrorMap& e, const SegmentMap& seg) {
  check_map_shapes(e, seg);
  const std::vector<int> sizes = seg.segment_sizes();
  std::vector<std::vector<double>> means(static_cast<std::size_t>(seg.segment_count),
                                         std::vector<double>(e.maps.size(), 0.0));
  for (std::size_t s = 0; s < e.maps.size(); ++s)
    for (std::size_t i = 0; i < seg.labels.size(); ++i) means[static_cast<std::size_t>(seg.labels[i])][s] += e.maps[s][i];
  for (int k = 0; k < seg.segment_count; ++k)
    for (double& m : means[static_cast<std::size_t>(k)]) m /= std::max(1, sizes[static_cast<std::size_t>(k)]);
  return means;
}

ErrorMap refine_map(const ErrorMap& e, const SegmentMap& seg) {
  const auto means = segment_means(e, seg);
  ErrorMap out;
  out.source = ErrorSource::Refined;
  for (std::size_t s = 0; s < e.maps.size(); ++s) {
    nn::Tensor m({seg.height, seg.width});
    for (std::size_t i = 0; i < seg.labels.size(); ++i) m[i] = means[static_cast<std::size_t>(seg.labels[i])][s];
    out.maps.push_back(std::move(m));
  }
  return out;
}

int select_space(const std::vector<double>& means, double tau) {
  if (means.empty()) throw UsageError("select_space: no spaces");
  for (std::size_t s = 0; s < means.size(); ++s)
    if (means[s] <= tau) return static_cast<int>(s);
  return static_cast<int>(means.size()) - 1;
}

LayerAssignment select_assignment(const ErrorMap& e, const SegmentMap& seg, double tau) {
  LayerAssignment a;
  a.tau = tau;
  for (const auto& row : segment_means(e, seg)) a.spaces.push_back(select_space(row, tau));
  return a;
}

LayerAssignment uniform_assignment(const SegmentMap& seg, int space, double tau) {
  return {std::vector<int>(static_cast<std::size_t>(seg.segment_count), space), tau};
}

MaskSet build_masks(const LayerAssignment& a, const SegmentMap& seg, const LayeredGenerator& g) {
  seg.validate();
  if (a.spaces.size() != static_cast<std::size_t>(seg.segment_count)) {
    throw UsageError(fmt::format("assignment covers {} segments, map has {}", a.spaces.size(), seg.segment_count));
  }
  const int n = space_count(g);
  MaskSet m;
  m.regions.assign(static_cast<std::size_t>(n), nn::Tensor({seg.height, seg.width}));
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    const int s = a.spaces[static_cast<std::size_t>(seg.labels[i])];
    if (s < 0 || s >= n) throw UsageError(fmt::format("assigned space {} out of range", s));
    m.regions[static_cast<std::size_t>(s)][i] = 1.0;
  }
  m.feature_masks.resize(static_cast<std::size_t>(n));
  for (int s = 1; s < n; ++s) {
    const nn::Shape fs = g.feature_shape(space_layer(g, s));
    nn::Tensor mask = nn::resize_bilinear(m.regions[static_cast<std::size_t>(s)], fs[1], fs[2]);
    for (double& v : mask.values()) v = std::clamp(v, 0.0, 1.0);
    m.feature_masks[static_cast<std::size_t>(s)] = std::move(mask);
  }
  return m;
}

std::vector<std::uint8_t> assignment_pixels(const LayerAssignment& a, const SegmentMap& seg) {
  std::vector<std::uint8_t> px(seg.labels.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(a.spaces.at(static_cast<std::size_t>(seg.labels[i])));
  }
  return px;
}

std::string encode_assignment_png(const LayerAssignment& a, const SegmentMap& seg) {
  static const std::vector<std::array<std::uint8_t, 3>> palette{
      {66, 133, 244}, {52, 168, 83}, {251, 188, 5}, {234, 67, 53}, {142, 36, 170}};
  return encode_indexed_png(assignment_pixels(a, seg), seg.height, seg.width, palette);
}

}  // namespace sam
