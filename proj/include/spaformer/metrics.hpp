#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spaformer/tensor.hpp"

namespace spaformer::metrics {

enum class Region { all, shadow, nonshadow };

const char* to_string(Region r);

inline constexpr double kPsnrIdentical = 99.0;

/// sRGB in [0, 255] -> CIELAB (D65). Input (N, 3, H, W); throws ContractViolation
/// on values outside [0, 255].
Tensor<double> rgb_to_lab(const Tensor<float>& rgb);

/// Root mean square over region pixels and the three LAB channels.
double rmse_lab(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region);
/// Mean absolute LAB difference, the quantity often reported as "RMSE".
double mae_lab(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region);
/// 10 log10(255^2 / MSE) over the region's RGB values; 99 for identical inputs.
double psnr(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region);
/// Gaussian-window SSIM on ITU-R 601 luma, averaged over window centres whose
/// mask value selects the region.
double ssim(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region);

/// Per-region sums from which every metric can be finished. Adding two of
/// these pools their pixels.
struct RegionSums {
  double lab_sq = 0.0, lab_abs = 0.0;
  std::size_t lab_count = 0;  // pixels * 3
  double rgb_sq = 0.0;
  std::size_t rgb_count = 0;
  double ssim_sum = 0.0;
  std::size_t ssim_count = 0;
  std::size_t pixels = 0;

  RegionSums& operator+=(const RegionSums& o);
};

struct MetricsReport {
  double rmse_all = 0, rmse_nonshadow = 0, rmse_shadow = 0;
  double ssim_all = 0, ssim_nonshadow = 0, ssim_shadow = 0;
  double psnr_all = 0, psnr_nonshadow = 0, psnr_shadow = 0;
  double mae_all = 0, mae_nonshadow = 0, mae_shadow = 0;
  std::size_t n_shadow = 0, n_nonshadow = 0;
  std::size_t images = 0;
};

struct PairSums {
  RegionSums all, shadow, nonshadow;
};

/// One aligned triple; throws EmptyRegionError when either region is empty.
PairSums accumulate_pair(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask);
MetricsReport finish(const PairSums& sums);
MetricsReport evaluate_pair(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask);

enum class Averaging { per_image, pooled };

/// Dataset report: mean of per-image reports, or metrics over pooled pixels.
MetricsReport aggregate(const std::vector<PairSums>& images, Averaging mode = Averaging::per_image);

/// Table-ordered CSV (RMSE..PSNR-S, then the MAE variant) with a header row.
std::string to_csv(const MetricsReport& r);
/// key=value lines covering every field.
std::string to_key_values(const MetricsReport& r, Averaging mode);

}  // namespace spaformer::metrics
