// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/local_geometry.hpp"

#include <cmath>

#include "nrt/global_context.hpp"

namespace nrt {

EpipolarFeatures gather_epipolar(const SamplePoints& points,
                                 const std::vector<Tensor>& feature_maps,
                                 const std::vector<Camera>& cameras, int scale) {
  if (feature_maps.empty() || feature_maps.size() != cameras.size())
    throw TensorError("gather_epipolar: need one feature map per camera");
  const int n = static_cast<int>(feature_maps.size());
  const int64_t rows = static_cast<int64_t>(points.positions.size());

  EpipolarFeatures epi;
  epi.rays = static_cast<int>(points.ray_count());
  epi.samples = points.samples_per_ray;
  epi.views = n;
  epi.valid.assign(rows * n, 0);

  std::vector<Tensor> per_view;
  std::vector<double> ys(rows), xs(rows);
  std::vector<uint8_t> ok(rows);
  for (int v = 0; v < n; ++v) {
    Projection proj = project(cameras[v], points.positions);
    for (int64_t i = 0; i < rows; ++i) {
      ok[i] = proj.in_frustum[i];
      ys[i] = proj.pixels[i].y() / scale;
      xs[i] = proj.pixels[i].x() / scale;
      epi.valid[i * n + v] = ok[i];
    }
    Tensor f = bilinear_sample(feature_maps[v], ys, xs, ok);  // [rows, C]
    per_view.push_back(reshape(f, {static_cast<int>(rows), 1, f.dim(1)}));
  }
  epi.values = concat(per_view, 1);
  return epi;
}

LocalGeometry::LocalGeometry(nn::ParamRegistry& reg, const LocalGeometryConfig& cfg, Rng& rng)
    : depth_proj(reg, "local.depth_proj", 2 * cfg.depth_octaves, cfg.channels, rng), cfg_(cfg) {
  if (cfg.vl_blocks < 1) throw TensorError("local geometry: need at least one block");
  for (int b = 0; b < cfg.vl_blocks; ++b) {
    const std::string base = "local.b" + std::to_string(b);
    view_layers.emplace_back(reg, base + ".view", cfg.channels, cfg.heads, cfg.ffn_mult, rng);
    fuse_layers.emplace_back(reg, base + ".fuse", 2 * cfg.channels, cfg.channels, rng);
    ray_layers.emplace_back(reg, base + ".ray", cfg.channels, cfg.heads, cfg.ffn_mult, rng);
    std::vector<double> tok(cfg.channels);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    for (double& x : tok) x = rng.uniform(-bound, bound);
    readout_tokens.push_back(reg.add(base + ".readout", {cfg.channels}, std::move(tok)));
  }
}

Tensor LocalGeometry::initial_tokens(const Tensor& fg,
                                     const std::vector<double>& unit_depths) const {
  const int r = fg.dim(0), c = cfg_.channels;
  const int64_t rows = static_cast<int64_t>(unit_depths.size());
  const int s = static_cast<int>(rows / r);
  if (static_cast<int64_t>(s) * r != rows)
    throw TensorError("initial_tokens: depth rows not divisible by ray count");

  const int fdim = 2 * cfg_.depth_octaves;
  std::vector<double> pe(rows * fdim);
  for (int64_t i = 0; i < rows; ++i) {
    auto ff = fourier_features(&unit_depths[i], 1, cfg_.depth_octaves);
    std::copy(ff.begin(), ff.end(), pe.begin() + i * fdim);
  }
  Tensor dpe = depth_proj(Tensor::from_data({static_cast<int>(rows), fdim}, std::move(pe)));
  // F_g per ray broadcast across that ray's samples
  Tensor fgs = reshape(permute(expand0(fg, s), {1, 0, 2}), {static_cast<int>(rows), c});
  return add(fgs, dpe);
}

Tensor LocalGeometry::view_stage(int block, const Tensor& tokens, const EpipolarFeatures& epi,
                                 Tensor* attn_weights) const {
  const int rows = tokens.dim(0), c = cfg_.channels;
  AttnMask mask;
  mask.shape = {rows, epi.views};
  mask.keep = epi.valid;
  AttnResult a =
      view_layers[block](reshape(tokens, {rows, 1, c}), epi.values, &mask);
  if (attn_weights) *attn_weights = a.weights;
  Tensor fl = reshape(a.out, {rows, c});
  // fully-occluded samples carry no view evidence; their F_l row is zeroed
  std::vector<double> cover(static_cast<size_t>(rows) * c, 0.0);
  bool any_occluded = false;
  for (int i = 0; i < rows; ++i) {
    const bool cov = epi.sample_covered(i);
    any_occluded = any_occluded || !cov;
    if (cov) std::fill(cover.begin() + static_cast<size_t>(i) * c,
                       cover.begin() + static_cast<size_t>(i + 1) * c, 1.0);
  }
  if (any_occluded) fl = mul(fl, Tensor::from_data({rows, c}, std::move(cover)));
  return fl;
}

Tensor LocalGeometry::fuse_stage(int block, const Tensor& fg_rows, const Tensor& fl) const {
  return fuse_layers[block](concat({fg_rows, fl}, 1));
}

LocalGeometry::RayStageOut LocalGeometry::ray_stage(
    int block, const Tensor& sample_tokens, const std::vector<uint8_t>* sample_valid) const {
  const int r = sample_tokens.dim(0), s = sample_tokens.dim(1), c = cfg_.channels;
  Tensor rd = expand0(reshape(readout_tokens[block], {1, c}), r);  // [R, 1, C]
  Tensor seq = concat({rd, sample_tokens}, 1);                     // [R, S+1, C]

  AttnMask mask;
  mask.shape = {r, s + 1};
  mask.keep.assign(static_cast<size_t>(r) * (s + 1), 1);
  if (sample_valid)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < s; ++j) mask.keep[i * (s + 1) + 1 + j] = (*sample_valid)[i * s + j];

  AttnResult a = ray_layers[block](seq, &mask);
  RayStageOut out;
  out.tokens = slice(a.out, 1, 1, s);
  out.readout = reshape(slice(a.out, 1, 0, 1), {r, c});
  out.weights = a.weights;
  return out;
}

std::vector<double> LocalGeometry::readout_weights(const Tensor& ray_weights,
                                                   const std::vector<uint8_t>* sample_valid) {
  const int r = ray_weights.dim(0), h = ray_weights.dim(1);
  const int s = ray_weights.dim(3) - 1;
  std::vector<double> out(static_cast<size_t>(r) * s, 0.0);
  const auto& w = ray_weights.values();
  for (int i = 0; i < r; ++i) {
    double total = 0.0;
    for (int j = 0; j < s; ++j) {
      if (sample_valid && !(*sample_valid)[i * s + j]) continue;
      double acc = 0.0;
      for (int hd = 0; hd < h; ++hd)
        acc += w[((static_cast<int64_t>(i) * h + hd) * (s + 1) + 0) * (s + 1) + 1 + j];
      out[static_cast<size_t>(i) * s + j] = acc / h;
      total += out[static_cast<size_t>(i) * s + j];
    }
    if (total > 0.0) {
      for (int j = 0; j < s; ++j) out[static_cast<size_t>(i) * s + j] /= total;
    } else {
      // readout collapsed onto itself; fall back to uniform over valid
      int nv = 0;
      for (int j = 0; j < s; ++j)
        nv += sample_valid ? (*sample_valid)[i * s + j] : 1;
      for (int j = 0; j < s; ++j)
        if (!sample_valid || (*sample_valid)[i * s + j])
          out[static_cast<size_t>(i) * s + j] = 1.0 / nv;
    }
  }
  return out;
}

LocalGeometry::Result LocalGeometry::run_blocks(const Tensor& fg, const EpipolarFeatures& epi,
                                                const std::vector<double>& unit_depths,
                                                const std::vector<uint8_t>* sample_valid) const {
  const int r = fg.dim(0), c = cfg_.channels, s = epi.samples;
  if (epi.rays != r) throw TensorError("run_blocks: ray count mismatch");
  if (static_cast<int64_t>(unit_depths.size()) != static_cast<int64_t>(r) * s)
    throw TensorError("run_blocks: depth count mismatch");

  Tensor fgs = reshape(permute(expand0(fg, s), {1, 0, 2}), {r * s, c});
  Tensor tokens = initial_tokens(fg, unit_depths);

  Result res;
  for (int b = 0; b < cfg_.vl_blocks; ++b) {
    Tensor fl = view_stage(b, tokens, epi);
    Tensor fgl = fuse_stage(b, fgs, fl);
    RayStageOut ro = ray_stage(b, reshape(fgl, {r, s, c}), sample_valid);
    tokens = reshape(ro.tokens, {r * s, c});
    if (b + 1 == cfg_.vl_blocks) {
      res.ray_feature = ro.readout;
      res.weights = readout_weights(ro.weights, sample_valid);
    }
  }

  res.sample_covered.resize(static_cast<size_t>(r) * s);
  res.ray_covered.assign(r, 0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < s; ++j) {
      const bool cov = epi.sample_covered(static_cast<int64_t>(i) * s + j);
      res.sample_covered[static_cast<size_t>(i) * s + j] = cov;
      if (cov) res.ray_covered[i] = 1;
    }
  return res;
}

}  // namespace nrt
