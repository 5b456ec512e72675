// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nrt/geometry.hpp"
#include "nrt/nn.hpp"

namespace nrt {

// Per-sample source-view features bilinearly read along the epipolar
// projections. Batched over rays: row i = (ray * samples + sample).
struct EpipolarFeatures {
  Tensor values;               // [R*S, N, C]; invalid entries zero-filled
  std::vector<uint8_t> valid;  // [R*S * N] in-frustum flags
  int rays = 0, samples = 0, views = 0;

  bool sample_covered(int64_t row) const {
    for (int v = 0; v < views; ++v)
      if (valid[row * views + v]) return true;
    return false;
  }
};

// Projects every sample into every source view and interpolates that view's
// feature map at pixel/scale coordinates (clamp-to-edge). Out-of-frustum
// samples come back invalid with a zero feature.
EpipolarFeatures gather_epipolar(const SamplePoints& points,
                                 const std::vector<Tensor>& feature_maps,
                                 const std::vector<Camera>& cameras, int scale);

struct LocalGeometryConfig {
  int channels = 32;
  int heads = 4;
  int vl_blocks = 4;  // view/ray alternations; the published setting is 8
  int ffn_mult = 2;
  int depth_octaves = 4;
};

// Alternating per-sample view transformer (cross-attention over the source
// views, seeded by the global context feature) and per-ray ray transformer
// (self-attention over samples plus a learned readout token). The final
// readout also provides the per-sample attention weights consumed by
// adaptive sampling.
class LocalGeometry {
 public:
  LocalGeometry(nn::ParamRegistry& reg, const LocalGeometryConfig& cfg, Rng& rng);

  struct Result {
    Tensor ray_feature;                 // [R, C]
    std::vector<double> weights;        // [R * S] probability vector per ray
    std::vector<uint8_t> ray_covered;   // any sample saw any view
    std::vector<uint8_t> sample_covered;  // [R * S]
  };

  // unit_depths: (d - near) / (far - near) per sample row. sample_valid
  // marks padding rows (from ragged stage-2 batches) to exclude from the
  // ray attention; real samples pass 1.
  Result run_blocks(const Tensor& fg, const EpipolarFeatures& epi,
                    const std::vector<double>& unit_depths,
                    const std::vector<uint8_t>* sample_valid = nullptr) const;

  // the individual stages, also usable standalone
  Tensor initial_tokens(const Tensor& fg, const std::vector<double>& unit_depths) const;
  // cross-attention over views; fully-occluded samples yield a zero row
  Tensor view_stage(int block, const Tensor& tokens, const EpipolarFeatures& epi,
                    Tensor* attn_weights = nullptr) const;
  // [F_g || F_l] -> C
  Tensor fuse_stage(int block, const Tensor& fg_rows, const Tensor& fl) const;
  struct RayStageOut {
    Tensor tokens;   // [R, S, C] updated sample tokens
    Tensor readout;  // [R, C]
    Tensor weights;  // [R, heads, S+1, S+1] raw attention of the layer
  };
  RayStageOut ray_stage(int block, const Tensor& sample_tokens,
                        const std::vector<uint8_t>* sample_valid) const;

  // head-average the readout row of a ray-stage attention map, drop the
  // self entry and renormalize over the valid samples
  static std::vector<double> readout_weights(const Tensor& ray_weights,
                                             const std::vector<uint8_t>* sample_valid);

  const LocalGeometryConfig& config() const { return cfg_; }

  std::vector<nn::CrossAttnLayer> view_layers;
  std::vector<nn::Linear> fuse_layers;
  std::vector<nn::SelfAttnLayer> ray_layers;
  std::vector<Tensor> readout_tokens;
  nn::Linear depth_proj;

 private:
  LocalGeometryConfig cfg_;
};

}  // namespace nrt
