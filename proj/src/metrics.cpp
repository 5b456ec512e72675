// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nrt {

namespace {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01, kK2 = 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> w = [] {
    std::vector<double> g(kWindow * kWindow);
    const int half = kWindow / 2;
    double total = 0.0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dy = y - half, dx = x - half;
        g[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        total += g[y * kWindow + x];
      }
    for (double& v : g) v /= total;
    return g;
  }();
  return w;
}

}  // namespace

double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw MetricError("psnr: size mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const std::vector<double>& a, const std::vector<double>& b, int height, int width,
            int channels) {
  if (a.size() != b.size() ||
      a.size() != static_cast<size_t>(height) * width * channels)
    throw MetricError("ssim: shape mismatch");
  if (height < kWindow || width < kWindow)
    throw MetricError("ssim: image smaller than the 11x11 window");

  const auto& win = gaussian_window();
  const double c1 = kK1 * kK1, c2 = kK2 * kK2;
  double total = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < channels; ++ch)
    for (int y = 0; y + kWindow <= height; ++y)
      for (int x = 0; x + kWindow <= width; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int wy = 0; wy < kWindow; ++wy)
          for (int wx = 0; wx < kWindow; ++wx) {
            const double wgt = win[wy * kWindow + wx];
            const double va = a[(static_cast<size_t>(y + wy) * width + x + wx) * channels + ch];
            const double vb = b[(static_cast<size_t>(y + wy) * width + x + wx) * channels + ch];
            mu_a += wgt * va;
            mu_b += wgt * vb;
            aa += wgt * va * va;
            bb += wgt * vb * vb;
            ab += wgt * va * vb;
          }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace nrt
