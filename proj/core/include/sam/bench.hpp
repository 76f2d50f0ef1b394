#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sam/image.hpp"

namespace sam {

/// Called by a method whenever it has a candidate reconstruction quality.
/// `psnr_db` is the quality of the current iterate; elapsed time is measured
/// by the harness.
using CheckpointSink = std::function<void(double psnr_db)>;

struct RuntimeMethod {
  std::string name;
  std::function<void(const Image& target, const CheckpointSink& sink)> run;
};

struct CurvePoint {
  double seconds = 0.0;
  double psnr_db = 0.0;
};

struct RuntimeCurve {
  std::string method;
  /// One point per budget that at least one image reached, mean best-so-far PSNR.
  std::vector<CurvePoint> points;
  bool flagged = false;  // a run threw; the curve stops at its last budget
  std::string error;
};

/// Runs every method on every image and reports, for each wall-clock budget,
/// the mean over images of the best PSNR reached within that budget. Budgets
/// an image never reached are left out of its mean.
std::vector<RuntimeCurve> benchmark_runtime(const std::vector<RuntimeMethod>& methods, const std::vector<Image>& images,
                                            const std::vector<double>& budgets_seconds);

/// `method,seconds,psnr_db` rows.
std::string curves_to_csv(const std::vector<RuntimeCurve>& curves);
/// Log-time line chart of the curves.
std::string curves_to_svg(const std::vector<RuntimeCurve>& curves);

/// 1e-3 s to `max_seconds`, `per_decade` budgets per decade.
std::vector<double> log_budgets(double max_seconds, int per_decade = 4);

}  // namespace sam
