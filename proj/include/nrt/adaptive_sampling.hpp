// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "nrt/rng.hpp"

namespace nrt {

// Smoothed, renormalized density over [near, far] built from per-sample
// attention weights. The grid holds M cell centers of M equal cells;
// density is normalized so sum(density) * cell_width == 1, and the CDF
// holds the M+1 cell-edge values (cdf[0] = 0, cdf[M] = 1), which makes the
// piecewise-linear inverse transform exact for the stored density.
// (The two-stage orchestration that feeds this lives in the render
// pipeline, which owns the transformer the stages share.)
struct SamplePdf {
  std::vector<double> grid;
  std::vector<double> density;
  std::vector<double> cdf;
  double cell_width = 0.0;
  double bandwidth = 0.0;
  double near = 0.0, far = 0.0;
  std::vector<double> source_depths;
  std::vector<double> source_weights;
  bool degenerate_uniform = false;  // all-zero weights fell back to uniform

  void validate() const;  // throws on any broken invariant
};

// (1 / (h sqrt(2 pi))) exp(-0.5 ((d - d_i) / h)^2); h must be positive.
double gaussian_kernel(double d, double d_i, double h);

// Direct evaluation of the weight regression sum_i w_i K(d, d_i) / sum_i
// K(d, d_i) at the given depths (computed with a shared exponent shift, so
// far-field evaluations stay finite). This is the pre-normalization
// estimate; kernel_regress rescales it into a proper density.
std::vector<double> nw_estimate(const std::vector<double>& depths,
                                const std::vector<double>& weights, double bandwidth,
                                const std::vector<double>& at);

// depths strictly increasing, weights a probability vector (all-zero
// weights fall back to the uniform density with degenerate_uniform set).
SamplePdf kernel_regress(const std::vector<double>& depths, const std::vector<double>& weights,
                         double bandwidth, int grid_size, double near, double far);

// Draws `count` depths through the inverse CDF, sorted. Stratified draws
// jitter u_j = (j + xi_j) / count from the (seed, stream) counter stream;
// unstratified uses the deterministic midpoints u_j = (j + 0.5) / count.
std::vector<double> inverse_transform_sample(const SamplePdf& pdf, int count, uint64_t seed,
                                             uint64_t stream, bool stratified);

// Sorted union of two sorted depth lists with near-duplicates (within tol)
// collapsed to the first occurrence.
std::vector<double> merge_depths(const std::vector<double>& a, const std::vector<double>& b,
                                 double tol = 1e-9);

}  // namespace nrt
