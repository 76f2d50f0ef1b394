#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sam/image.hpp"

namespace sam {

/// PSNR cap reported for identical images.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE), capped at kPsnrCap. The default peak is the width
/// of the internal [-1, 1] range.
double psnr(const Image& x, const Image& y, double peak = 2.0);

struct EvalRecord {
  std::string image_id;
  std::string method;
  double psnr_db = 0.0;
  double lpips = 0.0;
  double seconds = 0.0;
};

struct EvalReport {
  std::string method;
  std::string dataset;
  std::vector<EvalRecord> records;

  void add(EvalRecord r) { records.push_back(std::move(r)); }
  double mean_psnr() const;
  double mean_lpips() const;
  double mean_seconds() const;
  /// `image_id,method,psnr_db,lpips,seconds` rows followed by a `mean` row.
  std::string to_csv() const;
};

}  // namespace sam
