// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/adaptive_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nrt {

namespace {

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

void SamplePdf::validate() const {
  const size_t m = grid.size();
  if (m == 0 || density.size() != m || cdf.size() != m + 1)
    throw SamplingError("sample pdf: inconsistent array sizes");
  if (!(near < far) || cell_width <= 0.0) throw SamplingError("sample pdf: bad support");
  double mass = 0.0;
  for (double d : density) {
    if (d < 0.0) throw SamplingError("sample pdf: negative density");
    mass += d;
  }
  if (std::abs(mass * cell_width - 1.0) > 1e-9)
    throw SamplingError("sample pdf: density mass " + std::to_string(mass * cell_width));
  if (cdf.front() != 0.0 || cdf.back() != 1.0)
    throw SamplingError("sample pdf: cdf endpoints must be 0 and 1");
  for (size_t i = 0; i + 1 < cdf.size(); ++i)
    if (cdf[i + 1] < cdf[i]) throw SamplingError("sample pdf: cdf not monotone");
}

double gaussian_kernel(double d, double d_i, double h) {
  if (h <= 0.0) throw SamplingError("gaussian_kernel: bandwidth must be positive");
  const double z = (d - d_i) / h;
  return kInvSqrt2Pi / h * std::exp(-0.5 * z * z);
}

std::vector<double> nw_estimate(const std::vector<double>& depths,
                                const std::vector<double>& weights, double bandwidth,
                                const std::vector<double>& at) {
  if (bandwidth <= 0.0) throw SamplingError("nw_estimate: bandwidth must be positive");
  if (depths.size() != weights.size() || depths.empty())
    throw SamplingError("nw_estimate: depth/weight size mismatch");
  std::vector<double> out(at.size());
  std::vector<double> logk(depths.size());
  for (size_t j = 0; j < at.size(); ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < depths.size(); ++i) {
      const double z = (at[j] - depths[i]) / bandwidth;
      logk[i] = -0.5 * z * z;
      mx = std::max(mx, logk[i]);
    }
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < depths.size(); ++i) {
      const double k = std::exp(logk[i] - mx);  // shared shift cancels in the ratio
      num += weights[i] * k;
      den += k;
    }
    out[j] = num / den;
  }
  return out;
}

SamplePdf kernel_regress(const std::vector<double>& depths, const std::vector<double>& weights,
                         double bandwidth, int grid_size, double near, double far) {
  if (depths.size() != weights.size() || depths.empty())
    throw SamplingError("kernel_regress: depth/weight size mismatch");
  if (grid_size < 2) throw SamplingError("kernel_regress: grid too small");
  if (!(near < far)) throw SamplingError("kernel_regress: need near < far");
  if (bandwidth <= 0.0) throw SamplingError("kernel_regress: bandwidth must be positive");
  for (size_t i = 0; i + 1 < depths.size(); ++i)
    if (!(depths[i] < depths[i + 1]))
      throw SamplingError("kernel_regress: depths must be strictly increasing");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw SamplingError("kernel_regress: negative weight");
    wsum += w;
  }

  SamplePdf pdf;
  pdf.bandwidth = bandwidth;
  pdf.near = near;
  pdf.far = far;
  pdf.source_depths = depths;
  pdf.source_weights = weights;
  pdf.cell_width = (far - near) / grid_size;
  pdf.grid.resize(grid_size);
  for (int j = 0; j < grid_size; ++j) pdf.grid[j] = near + (j + 0.5) * pdf.cell_width;

  if (wsum == 0.0) {
    pdf.degenerate_uniform = true;
    pdf.density.assign(grid_size, 1.0 / (far - near));
  } else {
    if (std::abs(wsum - 1.0) > 1e-6)
      throw SamplingError("kernel_regress: weights must sum to 1, got " + std::to_string(wsum));
    pdf.density = nw_estimate(depths, weights, bandwidth, pdf.grid);
    double mass = 0.0;
    for (double& d : pdf.density) {
      d = std::max(d, 0.0);
      mass += d;
    }
    mass *= pdf.cell_width;
    if (mass <= 0.0) {
      pdf.degenerate_uniform = true;
      pdf.density.assign(grid_size, 1.0 / (far - near));
    } else {
      for (double& d : pdf.density) d /= mass;
    }
  }

  pdf.cdf.resize(grid_size + 1);
  pdf.cdf[0] = 0.0;
  for (int j = 0; j < grid_size; ++j) pdf.cdf[j + 1] = pdf.cdf[j] + pdf.density[j] * pdf.cell_width;
  pdf.cdf[grid_size] = 1.0;  // exact endpoint; rounding drift is ~1e-16
  pdf.validate();
  return pdf;
}

std::vector<double> inverse_transform_sample(const SamplePdf& pdf, int count, uint64_t seed,
                                             uint64_t stream, bool stratified) {
  pdf.validate();
  if (count < 0) throw SamplingError("inverse_transform_sample: negative count");
  std::vector<double> out;
  out.reserve(count);
  CounterRng rng(seed, stream);
  const int m = static_cast<int>(pdf.grid.size());
  for (int j = 0; j < count; ++j) {
    const double xi = stratified ? rng.uniform() : 0.5;
    const double u = (j + xi) / count;
    // first edge with cdf > u, then interpolate inside that cell
    const auto it = std::upper_bound(pdf.cdf.begin(), pdf.cdf.end(), u);
    int k = static_cast<int>(it - pdf.cdf.begin()) - 1;
    k = std::clamp(k, 0, m - 1);
    const double lo = pdf.cdf[k], hi = pdf.cdf[k + 1];
    const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.0;
    out.push_back(pdf.near + (k + frac) * pdf.cell_width);
  }
  return out;
}

std::vector<double> merge_depths(const std::vector<double>& a, const std::vector<double>& b,
                                 double tol) {
  std::vector<double> merged;
  merged.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(merged));
  std::vector<double> out;
  for (double d : merged)
    if (out.empty() || d - out.back() > tol) out.push_back(d);
  return out;
}

}  // namespace nrt
