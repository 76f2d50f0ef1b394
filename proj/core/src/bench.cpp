#include "sam/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam {

namespace {

struct Trace {
  std::vector<CurvePoint> samples;  // raw (elapsed, psnr)
};

// Best PSNR reached no later than `t`, or NaN when nothing was reported yet.
double best_within(const Trace& tr, double t) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const CurvePoint& p : tr.samples) {
    if (p.seconds > t) break;
    if (std::isnan(best) || p.psnr_db > best) best = p.psnr_db;
  }
  return best;
}

}  // namespace

std::vector<RuntimeCurve> benchmark_runtime(const std::vector<RuntimeMethod>& methods, const std::vector<Image>& images,
                                            const std::vector<double>& budgets) {
  if (images.empty()) throw UsageError("benchmark needs at least one image");
  if (budgets.empty() || !std::is_sorted(budgets.begin(), budgets.end())) {
    throw UsageError("budgets must be a non-empty increasing list");
  }
  std::vector<RuntimeCurve> curves;
  for (const RuntimeMethod& m : methods) {
    if (!m.run) throw UsageError(fmt::format("method '{}' has no implementation", m.name));
    RuntimeCurve curve;
    curve.method = m.name;
    std::vector<Trace> traces;
    double crash_time = std::numeric_limits<double>::infinity();
    for (const Image& img : images) {
      Trace tr;
      const auto start = std::chrono::steady_clock::now();
      const CheckpointSink sink = [&](double psnr_db) {
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        tr.samples.push_back({t, psnr_db});
      };
      try {
        m.run(img, sink);
      } catch (const std::exception& e) {
        curve.flagged = true;
        curve.error = e.what();
        crash_time = tr.samples.empty() ? 0.0 : tr.samples.back().seconds;
        traces.push_back(std::move(tr));
        break;
      }
      traces.push_back(std::move(tr));
    }
    for (double t : budgets) {
      if (t > crash_time) break;
      double sum = 0;
      int n = 0;
      for (const Trace& tr : traces) {
        const double v = best_within(tr, t);
        if (!std::isnan(v)) {
          sum += v;
          ++n;
        }
      }
      if (n > 0) curve.points.push_back({t, sum / n});
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::string curves_to_csv(const std::vector<RuntimeCurve>& curves) {
  std::string out = "method,seconds,psnr_db\n";
  for (const RuntimeCurve& c : curves)
    for (const CurvePoint& p : c.points) out += fmt::format("{},{:.6g},{:.4f}\n", c.method, p.seconds, p.psnr_db);
  return out;
}

std::string curves_to_svg(const std::vector<RuntimeCurve>& curves) {
  constexpr double kW = 640, kH = 400, kMargin = 50;
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double tmin = std::numeric_limits<double>::infinity(), tmax = 0;
  double pmin = std::numeric_limits<double>::infinity(), pmax = -pmin;
  for (const RuntimeCurve& c : curves)
    for (const CurvePoint& p : c.points) {
      tmin = std::min(tmin, p.seconds);
      tmax = std::max(tmax, p.seconds);
      pmin = std::min(pmin, p.psnr_db);
      pmax = std::max(pmax, p.psnr_db);
    }
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kW, kH);
  if (!std::isfinite(tmin)) return svg + "</svg>\n";
  if (tmax <= tmin) tmax = tmin * 10;
  if (pmax <= pmin) pmax = pmin + 1;
  const double lt0 = std::log10(tmin), lt1 = std::log10(tmax);
  auto px = [&](double t) { return kMargin + (std::log10(t) - lt0) / (lt1 - lt0) * (kW - 2 * kMargin); };
  auto py = [&](double p) { return kH - kMargin - (p - pmin) / (pmax - pmin) * (kH - 2 * kMargin); };
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kMargin, kH - kMargin, kW - kMargin);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", kMargin, kMargin, kH - kMargin);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">seconds (log)</text>\n", kW / 2, kH - 12);
  svg += fmt::format("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">PSNR (dB)</text>\n",
                     kH / 2, kH / 2);
  svg += fmt::format("<text x=\"{}\" y=\"{}\">{:.3g}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n",
                     kMargin, kH - kMargin + 16, tmin, kW - kMargin, kH - kMargin + 16, tmax);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.1f}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.1f}</text>\n",
                     kMargin - 4, kH - kMargin, pmin, kMargin - 4, kMargin + 4, pmax);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* colour = kColours[i % std::size(kColours)];
    std::string pts;
    for (const CurvePoint& p : curves[i].points) pts += fmt::format("{:.1f},{:.1f} ", px(p.seconds), py(p.psnr_db));
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", colour, pts);
    for (const CurvePoint& p : curves[i].points)
      svg += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", px(p.seconds), py(p.psnr_db), colour);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}{}</text>\n", kMargin + 10, kMargin + 16 * (i + 1), colour,
                       curves[i].method, curves[i].flagged ? " (truncated)" : "");
  }
  return svg + "</svg>\n";
}

std::vector<double> log_budgets(double max_seconds, int per_decade) {
  if (max_seconds <= 1e-3 || per_decade < 1) throw UsageError("log_budgets needs max_seconds > 1e-3 and per_decade >= 1");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double t = 1e-3 * std::pow(10.0, static_cast<double>(k) / per_decade);
    if (t > max_seconds * (1 + 1e-9)) break;
    out.push_back(t);
  }
  if (out.back() < max_seconds) out.push_back(max_seconds);
  return out;
}

}  // namespace sam
