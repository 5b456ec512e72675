// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nrt/geometry.hpp"
#include "nrt/sparse_attention.hpp"

namespace nrt {

// Latent token set produced by the encoder stack over all source views.
struct SceneRepresentation {
  Tensor tokens;  // [T, C], T = N * h * w of the (padded, cropped) grid
  int source_view_count = 0;
};

// sin/cos features at `octaves` frequencies (2^k * pi), octave-major with
// the input dims inner: args = (pi*v0, pi*v1, ..., 2pi*v0, ...), output is
// all sines of the args followed by all cosines. Length 2*dims*octaves.
std::vector<double> fourier_features(const double* v, int dims, int octaves);

struct GlobalContextConfig {
  int channels = 32;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_layers = 2;
  int ffn_mult = 2;
  int ray_octaves = 6;  // for origin + direction
  int pos_octaves = 4;  // for encoder token positions
  int block_p = 2;
  int grid_g = 2;
};

// Encodes 1/8-scale features of all source views into the scene token set
// and decodes a per-ray global context feature by cross-attention.
class GlobalContext {
 public:
  GlobalContext(nn::ParamRegistry& reg, const GlobalContextConfig& cfg, Rng& rng);

  // view_features: one [h, w, C] map per source view, same extents. Grids
  // that P/G do not divide are zero-padded behind a key mask and cropped
  // back after the blocks.
  SceneRepresentation encode_scene(const std::vector<Tensor>& view_features,
                                   const std::vector<Camera>& cameras) const;

  // Deterministic function of origin and direction only. Rays: [R, C].
  Tensor embed_rays(const RayBundle& rays) const;

  // Cross-attention decoder; query = ray embedding, keys/values = scene
  // tokens. Returns [R, C]. layer_weights, when given, receives each
  // layer's attention maps ([R, heads, 1, T]).
  Tensor decode_global(const Tensor& ray_embeds, const SceneRepresentation& scene,
                       std::vector<Tensor>* layer_weights = nullptr) const;

  const GlobalContextConfig& config() const { return cfg_; }

 private:
  GlobalContextConfig cfg_;
  nn::Linear pos_proj_;   // learned map of sinusoidal (y, x) position features
  nn::Linear pose_proj_;  // learned map of the flattened world-to-camera matrix
  std::vector<EncoderBlock> blocks_;
  nn::Linear ray_proj_;
  std::vector<nn::CrossAttnLayer> decoder_;
};

}  // namespace nrt
