#include "spaformer/metrics.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "spaformer/errors.hpp"

namespace spaformer::metrics {
namespace {

constexpr double kWhiteX = 0.95047, kWhiteY = 1.0, kWhiteZ = 1.08883;
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

double srgb_to_linear(double c) {
  c /= 255.0;
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

void check_rgb(const Tensor<float>& t, const char* what) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 3) throw ContractViolation(std::string(what) + ": expected (1, 3, H, W), got " + s.str());
}

// Returns the mask as booleans after validating shapes and binarity.
std::vector<bool> check_triple(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask,
                               const char* op) {
  check_rgb(pred, op);
  require_same_shape(pred.shape(), gt.shape(), op);
  const Shape s = pred.shape();
  const Shape m = mask.shape();
  if (m.n != 1 || m.c != 1 || m.h != s.h || m.w != s.w) {
    throw ContractViolation(std::string(op) + ": mask " + m.str() + " does not cover " + s.str());
  }
  std::vector<bool> out(m.plane());
  for (std::size_t i = 0; i < m.plane(); ++i) {
    if (mask[i] != 0.0f && mask[i] != 1.0f) {
      throw ContractViolation(std::string(op) + ": mask value " + std::to_string(mask[i]) + " is not binary");
    }
    out[i] = mask[i] == 1.0f;
  }
  return out;
}

bool selected(Region r, bool in_shadow) {
  return r == Region::all || (r == Region::shadow) == in_shadow;
}

void require_nonempty(std::size_t n, Region r, const char* op) {
  if (n == 0) throw EmptyRegionError(std::string(op) + ": region '" + to_string(r) + "' holds no pixels");
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

std::vector<double> luma(const Tensor<float>& rgb) {
  const std::size_t n = rgb.shape().plane();
  std::vector<double> y(n);
  const float *r = rgb.plane(0, 0), *g = rgb.plane(0, 1), *b = rgb.plane(0, 2);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return y;
}

// Separable valid-mode Gaussian filter of an h x w image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& k) {
  const std::size_t wo = w - kWindow + 1, ho = h - kWindow + 1;
  std::vector<double> tmp(h * wo), out(ho * wo);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kWindow; ++i) acc += k[i] * img[y * w + x + i];
      tmp[y * wo + x] = acc;
    }
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kWindow; ++i) acc += k[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}

// SSIM value at every valid window centre, row-major over (h-10) x (w-10).
std::vector<double> ssim_map(const Tensor<float>& pred, const Tensor<float>& gt) {
  const Shape s = pred.shape();
  if (s.h < kWindow || s.w < kWindow) {
    throw ContractViolation("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is smaller than the 11x11 window");
  }
  const auto k = gaussian_window();
  const std::vector<double> x = luma(pred), y = luma(gt);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, s.h, s.w, k), my = filter_valid(y, s.h, s.w, k);
  const auto exx = filter_valid(xx, s.h, s.w, k), eyy = filter_valid(yy, s.h, s.w, k);
  const auto exy = filter_valid(xy, s.h, s.w, k);
  std::vector<double> out(mx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double vx = exx[i] - mx[i] * mx[i];
    const double vy = eyy[i] - my[i] * my[i];
    const double cxy = exy[i] - mx[i] * my[i];
    out[i] = ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
  }
  return out;
}

double psnr_from_mse(double mse) {
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace

const char* to_string(Region r) {
  switch (r) {
    case Region::all: return "all";
    case Region::shadow: return "shadow";
    case Region::nonshadow: return "nonshadow";
  }
  return "?";
}

Tensor<double> rgb_to_lab(const Tensor<float>& rgb) {
  const Shape s = rgb.shape();
  if (s.c != 3) throw ContractViolation("rgb_to_lab: expected 3 channels, got " + s.str());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    if (!(rgb[i] >= 0.0f && rgb[i] <= 255.0f)) {
      throw ContractViolation("rgb_to_lab: value " + std::to_string(rgb[i]) + " outside [0, 255]");
    }
  }
  Tensor<double> lab(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    const float *r = rgb.plane(b, 0), *g = rgb.plane(b, 1), *bl = rgb.plane(b, 2);
    double *L = lab.plane(b, 0), *A = lab.plane(b, 1), *B = lab.plane(b, 2);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double lr = srgb_to_linear(r[i]), lg = srgb_to_linear(g[i]), lb = srgb_to_linear(bl[i]);
      const double X = 0.4124564 * lr + 0.3575761 * lg + 0.1804375 * lb;
      const double Y = 0.2126729 * lr + 0.7151522 * lg + 0.0721750 * lb;
      const double Z = 0.0193339 * lr + 0.1191920 * lg + 0.9503041 * lb;
      const double fx = lab_f(X / kWhiteX), fy = lab_f(Y / kWhiteY), fz = lab_f(Z / kWhiteZ);
      L[i] = 116.0 * fy - 16.0;
      A[i] = 500.0 * (fx - fy);
      B[i] = 200.0 * (fy - fz);
    }
  }
  return lab;
}

RegionSums& RegionSums::operator+=(const RegionSums& o) {
  lab_sq += o.lab_sq;
  lab_abs += o.lab_abs;
  lab_count += o.lab_count;
  rgb_sq += o.rgb_sq;
  rgb_count += o.rgb_count;
  ssim_sum += o.ssim_sum;
  ssim_count += o.ssim_count;
  pixels += o.pixels;
  return *this;
}

namespace {

// Pixel-level sums for one region; SSIM is filled separately.
RegionSums pixel_sums(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<double>& lp,
                      const Tensor<double>& lg, const std::vector<bool>& m, Region region) {
  RegionSums r;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!selected(region, m[i])) continue;
    ++r.pixels;
    for (std::size_t c = 0; c < 3; ++c) {
      const double dl = lp.plane(0, c)[i] - lg.plane(0, c)[i];
      r.lab_sq += dl * dl;
      r.lab_abs += std::abs(dl);
      const double d = static_cast<double>(pred.plane(0, c)[i]) - static_cast<double>(gt.plane(0, c)[i]);
      r.rgb_sq += d * d;
    }
  }
  r.lab_count = r.rgb_count = 3 * r.pixels;
  return r;
}

void ssim_sums(const std::vector<double>& map, const std::vector<bool>& m, std::size_t w, Region region,
               RegionSums& r) {
  const std::size_t half = kWindow / 2, wo = w - kWindow + 1;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const std::size_t y = i / wo + half, x = i % wo + half;
    if (!selected(region, m[y * w + x])) continue;
    r.ssim_sum += map[i];
    ++r.ssim_count;
  }
}

}  // namespace

double rmse_lab(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region) {
  const auto m = check_triple(pred, gt, mask, "rmse_lab");
  const RegionSums r = pixel_sums(pred, gt, rgb_to_lab(pred), rgb_to_lab(gt), m, region);
  require_nonempty(r.pixels, region, "rmse_lab");
  return std::sqrt(r.lab_sq / static_cast<double>(r.lab_count));
}

double mae_lab(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region) {
  const auto m = check_triple(pred, gt, mask, "mae_lab");
  const RegionSums r = pixel_sums(pred, gt, rgb_to_lab(pred), rgb_to_lab(gt), m, region);
  require_nonempty(r.pixels, region, "mae_lab");
  return r.lab_abs / static_cast<double>(r.lab_count);
}

double psnr(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region) {
  const auto m = check_triple(pred, gt, mask, "psnr");
  RegionSums r;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!selected(region, m[i])) continue;
    ++r.pixels;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = static_cast<double>(pred.plane(0, c)[i]) - static_cast<double>(gt.plane(0, c)[i]);
      r.rgb_sq += d * d;
    }
  }
  require_nonempty(r.pixels, region, "psnr");
  return psnr_from_mse(r.rgb_sq / static_cast<double>(3 * r.pixels));
}

double ssim(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask, Region region) {
  const auto m = check_triple(pred, gt, mask, "ssim");
  RegionSums r;
  ssim_sums(ssim_map(pred, gt), m, pred.shape().w, region, r);
  require_nonempty(r.ssim_count, region, "ssim");
  return r.ssim_sum / static_cast<double>(r.ssim_count);
}

PairSums accumulate_pair(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask) {
  const auto m = check_triple(pred, gt, mask, "evaluate_pair");
  const Tensor<double> lp = rgb_to_lab(pred), lg = rgb_to_lab(gt);
  const auto map = ssim_map(pred, gt);
  PairSums out;
  const std::pair<Region, RegionSums*> regions[] = {
      {Region::all, &out.all}, {Region::shadow, &out.shadow}, {Region::nonshadow, &out.nonshadow}};
  for (const auto& [region, sums] : regions) {
    *sums = pixel_sums(pred, gt, lp, lg, m, region);
    ssim_sums(map, m, pred.shape().w, region, *sums);
    require_nonempty(sums->pixels, region, "evaluate_pair");
    require_nonempty(sums->ssim_count, region, "evaluate_pair (ssim window centres)");
  }
  return out;
}

MetricsReport finish(const PairSums& s) {
  auto rmse = [](const RegionSums& r) { return std::sqrt(r.lab_sq / static_cast<double>(r.lab_count)); };
  auto mae = [](const RegionSums& r) { return r.lab_abs / static_cast<double>(r.lab_count); };
  auto ps = [](const RegionSums& r) { return psnr_from_mse(r.rgb_sq / static_cast<double>(r.rgb_count)); };
  auto ss = [](const RegionSums& r) { return r.ssim_sum / static_cast<double>(r.ssim_count); };
  MetricsReport r;
  r.rmse_all = rmse(s.all);
  r.rmse_nonshadow = rmse(s.nonshadow);
  r.rmse_shadow = rmse(s.shadow);
  r.ssim_all = ss(s.all);
  r.ssim_nonshadow = ss(s.nonshadow);
  r.ssim_shadow = ss(s.shadow);
  r.psnr_all = ps(s.all);
  r.psnr_nonshadow = ps(s.nonshadow);
  r.psnr_shadow = ps(s.shadow);
  r.mae_all = mae(s.all);
  r.mae_nonshadow = mae(s.nonshadow);
  r.mae_shadow = mae(s.shadow);
  r.n_shadow = s.shadow.pixels;
  r.n_nonshadow = s.nonshadow.pixels;
  r.images = 1;
  return r;
}

MetricsReport evaluate_pair(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask) {
  return finish(accumulate_pair(pred, gt, mask));
}

MetricsReport aggregate(const std::vector<PairSums>& images, Averaging mode) {
  if (images.empty()) throw ContractViolation("aggregate: no images");
  if (mode == Averaging::pooled) {
    PairSums total;
    for (const auto& p : images) {
      total.all += p.all;
      total.shadow += p.shadow;
      total.nonshadow += p.nonshadow;
    }
    MetricsReport r = finish(total);
    r.images = images.size();
    return r;
  }
  MetricsReport acc;
  for (const auto& p : images) {
    const MetricsReport r = finish(p);
    acc.rmse_all += r.rmse_all;
    acc.rmse_nonshadow += r.rmse_nonshadow;
    acc.rmse_shadow += r.rmse_shadow;
    acc.ssim_all += r.ssim_all;
    acc.ssim_nonshadow += r.ssim_nonshadow;
    acc.ssim_shadow += r.ssim_shadow;
    acc.psnr_all += r.psnr_all;
    acc.psnr_nonshadow += r.psnr_nonshadow;
    acc.psnr_shadow += r.psnr_shadow;
    acc.mae_all += r.mae_all;
    acc.mae_nonshadow += r.mae_nonshadow;
    acc.mae_shadow += r.mae_shadow;
    acc.n_shadow += r.n_shadow;
    acc.n_nonshadow += r.n_nonshadow;
  }
  const double n = static_cast<double>(images.size());
  for (double* v : {&acc.rmse_all, &acc.rmse_nonshadow, &acc.rmse_shadow, &acc.ssim_all, &acc.ssim_nonshadow,
                    &acc.ssim_shadow, &acc.psnr_all, &acc.psnr_nonshadow, &acc.psnr_shadow, &acc.mae_all,
                    &acc.mae_nonshadow, &acc.mae_shadow}) {
    *v /= n;
  }
  acc.images = images.size();
  return acc;
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "RMSE,RMSE-N,RMSE-S,SSIM,SSIM-N,SSIM-S,PSNR,PSNR-N,PSNR-S,MAE,MAE-N,MAE-S\n";
  os << r.rmse_all << ',' << r.rmse_nonshadow << ',' << r.rmse_shadow << ',' << r.ssim_all << ',' << r.ssim_nonshadow
     << ',' << r.ssim_shadow << ',' << r.psnr_all << ',' << r.psnr_nonshadow << ',' << r.psnr_shadow << ','
     << r.mae_all << ',' << r.mae_nonshadow << ',' << r.mae_shadow << '\n';
  return os.str();
}

std::string to_key_values(const MetricsReport& r, Averaging mode) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "averaging=" << (mode == Averaging::pooled ? "pooled" : "per_image") << '\n'
     << "images=" << r.images << '\n'
     << "rmse_all=" << r.rmse_all << '\n'
     << "rmse_nonshadow=" << r.rmse_nonshadow << '\n'
     << "rmse_shadow=" << r.rmse_shadow << '\n'
     << "ssim_all=" << r.ssim_all << '\n'
     << "ssim_nonshadow=" << r.ssim_nonshadow << '\n'
     << "ssim_shadow=" << r.ssim_shadow << '\n'
     << "psnr_all=" << r.psnr_all << '\n'
     << "psnr_nonshadow=" << r.psnr_nonshadow << '\n'
     << "psnr_shadow=" << r.psnr_shadow << '\n'
     << "mae_lab_all=" << r.mae_all << '\n'
     << "mae_lab_nonshadow=" << r.mae_nonshadow << '\n'
     << "mae_lab_shadow=" << r.mae_shadow << '\n'
     << "n_shadow=" << r.n_shadow << '\n'
     << "n_nonshadow=" << r.n_nonshadow << '\n';
  return os.str();
}

}  // namespace spaformer::metrics
