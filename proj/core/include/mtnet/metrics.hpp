#ifndef MTNET_METRICS_HPP_
#define MTNET_METRICS_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mtnet/common.hpp"

// Plain scalar (non-differentiable) image statistics. These are the
// verification twins of the tape losses and the workhorses of evaluation;
// they are computed in double regardless of the training precision.
namespace mtnet::metrics {

struct VolumeStats {
  double mean_x = 0, mean_y = 0, var_x = 0, var_y = 0, cov = 0;
  std::size_t count = 0;
};

// Population (1/n) variance and covariance, optionally restricted to a mask.
template <class T>
VolumeStats paired_stats(std::span<const T> x, std::span<const T> y,
                         std::span<const std::uint8_t> mask = {}) {
  if (x.size() != y.size()) throw ShapeError("paired_stats: length mismatch");
  VolumeStats s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    s.mean_x += x[i];
    s.mean_y += y[i];
    ++s.count;
  }
  if (s.count == 0) throw DataError("paired_stats: empty mask");
  s.mean_x /= double(s.count);
  s.mean_y /= double(s.count);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double dx = x[i] - s.mean_x;
    const double dy = y[i] - s.mean_y;
    s.var_x += dx * dx;
    s.var_y += dy * dy;
    s.cov += dx * dy;
  }
  s.var_x /= double(s.count);
  s.var_y /= double(s.count);
  s.cov /= double(s.count);
  return s;
}

template <class T>
double mse(std::span<const T> x, std::span<const T> y,
           std::span<const std::uint8_t> mask = {}) {
  if (x.size() != y.size()) throw ShapeError("mse: length mismatch");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double d = double(x[i]) - double(y[i]);
    s += d * d;
    ++n;
  }
  if (n == 0) throw DataError("mse: empty mask");
  return s / double(n);
}

template <class T>
double mae(std::span<const T> x, std::span<const T> y,
           std::span<const std::uint8_t> mask = {}) {
  if (x.size() != y.size()) throw ShapeError("mae: length mismatch");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    s += std::abs(double(x[i]) - double(y[i]));
    ++n;
  }
  if (n == 0) throw DataError("mae: empty mask");
  return s / double(n);
}

// Whole-volume (global statistics) SSIM. c1 = (0.01 c_max)^2,
// c2 = (0.03 c_max)^2.
template <class T>
double ssim_global(std::span<const T> x, std::span<const T> y, double c_max,
                   std::span<const std::uint8_t> mask = {}) {
  if (c_max <= 0) throw DataError("ssim_global: c_max must be positive");
  const VolumeStats s = paired_stats(x, y, mask);
  const double c1 = 0.01 * c_max * 0.01 * c_max;
  const double c2 = 0.03 * c_max * 0.03 * c_max;
  return (2 * s.mean_x * s.mean_y + c1) * (2 * s.cov + c2) /
         ((s.mean_x * s.mean_x + s.mean_y * s.mean_y + c1) *
          (s.var_x + s.var_y + c2));
}

// PSNR with c_max entering un-squared (switchable). Returns +inf when the
// volumes are identical.
template <class T>
double psnr(std::span<const T> x, std::span<const T> y, double c_max,
            bool squared_cmax = false,
            std::span<const std::uint8_t> mask = {}) {
  if (c_max <= 0) throw DataError("psnr: c_max must be positive");
  const double m = mse(x, y, mask);
  if (m == 0) return std::numeric_limits<double>::infinity();
  const double num = squared_cmax ? c_max * c_max : c_max;
  return 10.0 * std::log10(num / m);
}

enum class NrmseMode { kMean, kRange };

// RMSE normalized by a statistic of the reference x.
template <class T>
double nrmse(std::span<const T> x, std::span<const T> y,
             std::span<const std::uint8_t> mask = {},
             NrmseMode mode = NrmseMode::kMean) {
  const double rmse = std::sqrt(mse(x, y, mask));
  double denom = 0;
  if (mode == NrmseMode::kMean) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      s += x[i];
      ++n;
    }
    denom = s / double(n);
  } else {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      lo = std::min(lo, double(x[i]));
      hi = std::max(hi, double(x[i]));
    }
    denom = hi - lo;
  }
  if (denom <= 0)
    throw DataError("nrmse: non-positive normalizer over the mask");
  return rmse / denom;
}

// Mean of local SSIM over a dense sliding cubic window (evaluation-only
// alternative to the global form).
template <class T>
double ssim_windowed(std::span<const T> x, std::span<const T> y,
                     const std::array<int, 3>& dims, double c_max,
                     int window = 11) {
  if (c_max <= 0) throw DataError("ssim_windowed: c_max must be positive");
  const int m = dims[0], n = dims[1], p = dims[2];
  if (std::int64_t(m) * n * p != std::int64_t(x.size()) ||
      x.size() != y.size())
    throw ShapeError("ssim_windowed: dims do not match data");
  const int w = std::min({window, m, n, p});
  const double c1 = 0.01 * c_max * 0.01 * c_max;
  const double c2 = 0.03 * c_max * 0.03 * c_max;
  double total = 0;
  std::int64_t count = 0;
  for (int i = 0; i + w <= m; ++i)
    for (int j = 0; j + w <= n; ++j)
      for (int k = 0; k + w <= p; ++k) {
        VolumeStats s;
        s.count = std::size_t(w) * w * w;
        for (int a = 0; a < w; ++a)
          for (int b = 0; b < w; ++b)
            for (int c = 0; c < w; ++c) {
              const std::int64_t idx =
                  (std::int64_t(i + a) * n + (j + b)) * p + (k + c);
              s.mean_x += x[idx];
              s.mean_y += y[idx];
            }
        s.mean_x /= double(s.count);
        s.mean_y /= double(s.count);
        for (int a = 0; a < w; ++a)
          for (int b = 0; b < w; ++b)
            for (int c = 0; c < w; ++c) {
              const std::int64_t idx =
                  (std::int64_t(i + a) * n + (j + b)) * p + (k + c);
              const double dx = x[idx] - s.mean_x;
              const double dy = y[idx] - s.mean_y;
              s.var_x += dx * dx;
              s.var_y += dy * dy;
              s.cov += dx * dy;
            }
        s.var_x /= double(s.count);
        s.var_y /= double(s.count);
        s.cov /= double(s.count);
        total += (2 * s.mean_x * s.mean_y + c1) * (2 * s.cov + c2) /
                 ((s.mean_x * s.mean_x + s.mean_y * s.mean_y + c1) *
                  (s.var_x + s.var_y + c2));
        ++count;
      }
  return total / double(count);
}

}  // namespace mtnet::metrics

#endif  // MTNET_METRICS_HPP_
