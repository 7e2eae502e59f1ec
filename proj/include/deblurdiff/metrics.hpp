#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "deblurdiff/tensor.hpp"

namespace deblurdiff::metrics {

// Returned by psnr for identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0)) throw ValueError("psnr: peak must be > 0");
  const double m = mse(a, b);
  if (m == 0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / m);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5, k1 = 0.01, k2 = 0.03, peak = 1.0;
};

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
  if (n % 2 == 0 || n == 0) throw ValueError("ssim: window must be odd");
  std::vector<double> g(n);
  const double r = double(n / 2);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += g[i] = std::exp(-(double(i) - r) * (double(i) - r) / (2 * sigma * sigma));
  for (auto& v : g) v /= s;
  return g;
}

namespace detail {
// Valid-position separable filtering of one H x W plane.
inline std::vector<double> filter_valid(const std::vector<double>& x, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t n = g.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += g[i] * x[y * w + x0 + i];
      rows[y * ow + x0] = s;
    }
  for (std::size_t y0 = 0; y0 < oh; ++y0)
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += g[i] * rows[(y0 + i) * ow + x0];
      out[y0 * ow + x0] = s;
    }
  return out;
}
}  // namespace detail

// Mean local SSIM over all valid window positions, averaged over channels.
// Accepts (H,W) or (c,H,W).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("ssim: expected (H,W) or (c,H,W), got " + shape_str(a.shape()));
  const auto g = gaussian_window(p.window, p.sigma);
  const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  if (h < p.window || w < p.window)
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " +
                     std::to_string(p.window));
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak), c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  const std::size_t plane = h * w;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = double(a[ch * plane + i]);
      y[i] = double(b[ch * plane + i]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g),
               sxy = detail::filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    count += mx.size();
  }
  return total / double(count);
}

struct QualityRow {
  std::string path;
  double psnr_db = 0, ssim = 0;
};

struct QualityReport {
  std::vector<QualityRow> rows;

  // A single identical pair makes the PSNR mean +inf.
  double mean_psnr() const {
    double s = 0;
    for (const auto& r : rows) s += r.psnr_db;
    return rows.empty() ? 0.0 : s / double(rows.size());
  }
  double mean_ssim() const {
    double s = 0;
    for (const auto& r : rows) s += r.ssim;
    return rows.empty() ? 0.0 : s / double(rows.size());
  }
};

inline std::string format_db(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_csv(std::ostream& out, const QualityReport& r) {
  out << "path,psnr_db,ssim\n";
  char buf[64];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.9g", row.ssim);
    out << row.path << ',' << format_db(row.psnr_db) << ',' << buf << '\n';
  }
}

}  // namespace deblurdiff::metrics
