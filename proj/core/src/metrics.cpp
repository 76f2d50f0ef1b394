#include "sam/metrics.hpp"

#include <cmath>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam {

double psnr(const Image& x, const Image& y, double peak) {
  if (x.shape() != y.shape()) {
    throw ShapeError(fmt::format("psnr: {} vs {}", nn::shape_str(x.shape()), nn::shape_str(y.shape())));
  }
  if (x.size() == 0) throw ShapeError("psnr: empty images");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  const double mse = s / static_cast<double>(x.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

template <typename F>
double mean_of(const std::vector<EvalRecord>& records, F field) {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const EvalRecord& r : records) s += field(r);
  return s / static_cast<double>(records.size());
}

}  // namespace

double EvalReport::mean_psnr() const { return mean_of(records, [](const EvalRecord& r) { return r.psnr_db; }); }
double EvalReport::mean_lpips() const { return mean_of(records, [](const EvalRecord& r) { return r.lpips; }); }
double EvalReport::mean_seconds() const { return mean_of(records, [](const EvalRecord& r) { return r.seconds; }); }

std::string EvalReport::to_csv() const {
  std::string out = "image_id,method,psnr_db,lpips,seconds\n";
  for (const EvalRecord& r : records) {
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", r.image_id, r.method, r.psnr_db, r.lpips, r.seconds);
  }
  out += fmt::format("mean,{},{:.6f},{:.6f},{:.6f}\n", method, mean_psnr(), mean_lpips(), mean_seconds());
  return out;
}

}  // namespace sam
