// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <string>

#include "nrt/adaptive_sampling.hpp"
#include "nrt/features.hpp"
#include "nrt/global_context.hpp"
#include "nrt/local_geometry.hpp"

namespace nrt {

struct ModelConfig {
  int channels = 32;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_layers = 2;
  int vl_blocks = 4;   // view/ray alternations (published setting: 8)
  int n_coarse = 32;   // uniform samples per ray (published: 128)
  int n_fine = 16;     // adaptive samples per ray (published: 64)
  double bandwidth_factor = 1.5;  // h = factor * (far - near) / n_coarse
  int fourier_octaves = 6;
  int block_p = 2;
  int grid_g = 2;
  uint64_t seed = 1;
  int ffn_mult = 2;
  int depth_octaves = 4;
  int pos_octaves = 4;
  int pdf_grid_mult = 4;  // pdf grid cells = mult * n_coarse
  bool supervise_coarse = false;

  void validate() const;
  static ModelConfig paper_profile();  // C=64, 8 blocks, 128 + 64 samples, P=G=8

  // "key = value" lines (# comments) or a JSON object; keys match the field
  // names above. Unknown keys are rejected.
  static ModelConfig parse(const std::string& text);
  std::string to_text() const;
};

// Renderable per-ray result.
struct RenderedRay {
  std::array<double, 3> color{};     // sigmoid output, in (0,1)
  std::vector<double> depths;        // final (merged) sample depths
  std::vector<double> weights;       // final attention weights over depths
  double expected_depth = 0.0;       // sum w_i d_i
  bool covered = false;              // any sample saw any source view
};

// Immutable per-scene inputs: pyramids and the encoded scene tokens.
struct SceneState {
  std::vector<Camera> cameras;
  std::vector<Tensor> quarter_maps;
  SceneRepresentation scene;
};

struct ImageRender {
  int height = 0, width = 0;
  std::vector<double> rgb;       // [h*w*3] clamped to [0,1]
  std::vector<double> depth;     // expected depth per pixel
  std::vector<uint8_t> covered;  // epipolar coverage per pixel
};

class RenderModel {
 public:
  explicit RenderModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

  SceneState prepare(const std::vector<Tensor>& images,
                     const std::vector<Camera>& cameras) const;

  struct RenderOptions {
    bool jitter = false;           // stratified stage-1 depths (training)
    bool stratified_fine = false;  // jittered inverse-transform draws
    uint64_t seed = 0;
    uint64_t ray_index_base = 0;   // stream ids: pixel/ray index + base

    // diagnostics and test hooks
    std::vector<SamplePdf>* pdf_out = nullptr;
    std::vector<std::vector<double>>* fine_depths_out = nullptr;
    std::vector<double>* stage1_weights_out = nullptr;  // [R * n_coarse]
    std::vector<double>* stage1_depths_out = nullptr;   // [R * n_coarse]
    // When set: filled on first use, then pins the stage-2 sample depths so
    // repeated evaluations differentiate a fixed computation graph (the
    // resampling step itself is a detached routing decision).
    std::vector<std::vector<double>>* frozen_depths = nullptr;
  };

  struct RenderBatch {
    Tensor colors;         // [R, 3] on the autodiff graph
    Tensor coarse_colors;  // [R, 3], only when supervise_coarse
    std::vector<RenderedRay> rays;
  };

  // Two-stage rendering of a ray batch: uniform stage, kernel-regression
  // resampling, merged adaptive stage through the same transformer stack.
  RenderBatch render_rays(const RayBundle& rays, const SceneState& state,
                          const RenderOptions& opt = {}) const;

  RenderedRay render_ray(const RayBundle& single, const SceneState& state,
                         const RenderOptions& opt = {}) const;

  ImageRender render_image(const Camera& target, const SceneState& state, int chunk_size,
                           const RenderOptions& opt = {}) const;

  // Ranks candidates by optical-axis angle plus normalized center distance;
  // training samples n of the top k*n pool, evaluation takes the top n.
  static std::vector<int> select_source_views(const Camera& target,
                                              const std::vector<Camera>& candidates, int n,
                                              int k, bool training, uint64_t seed);

  const FeatureExtractor& features() const { return *fpn_; }
  const GlobalContext& context() const { return *ctx_; }
  const LocalGeometry& local() const { return *local_; }
  const nn::Mlp& color_mlp() const { return color_; }

 private:
  ModelConfig cfg_;
  nn::ParamRegistry reg_;
  std::unique_ptr<FeatureExtractor> fpn_;
  std::unique_ptr<GlobalContext> ctx_;
  std::unique_ptr<LocalGeometry> local_;
  nn::Mlp color_;
};

}  // namespace nrt
