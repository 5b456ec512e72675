// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/global_context.hpp"

#include <cmath>
#include <numeric>

namespace nrt {

std::vector<double> fourier_features(const double* v, int dims, int octaves) {
  std::vector<double> args;
  args.reserve(static_cast<size_t>(dims) * octaves);
  double freq = M_PI;
  for (int k = 0; k < octaves; ++k, freq *= 2.0)
    for (int d = 0; d < dims; ++d) args.push_back(freq * v[d]);
  std::vector<double> out;
  out.reserve(args.size() * 2);
  for (double a : args) out.push_back(std::sin(a));
  for (double a : args) out.push_back(std::cos(a));
  return out;
}

GlobalContext::GlobalContext(nn::ParamRegistry& reg, const GlobalContextConfig& cfg, Rng& rng)
    : cfg_(cfg),
      pos_proj_(reg, "ctx.pos_proj", 4 * cfg.pos_octaves, cfg.channels, rng),
      pose_proj_(reg, "ctx.pose_proj", 16, cfg.channels, rng),
      ray_proj_(reg, "ctx.ray_proj", 12 * cfg.ray_octaves, cfg.channels, rng) {
  for (int b = 0; b < cfg.encoder_blocks; ++b)
    blocks_.emplace_back(reg, "ctx.enc" + std::to_string(b), cfg.channels, cfg.heads,
                         cfg.ffn_mult, rng);
  for (int l = 0; l < cfg.decoder_layers; ++l)
    decoder_.emplace_back(reg, "ctx.dec" + std::to_string(l), cfg.channels, cfg.heads,
                          cfg.ffn_mult, rng);
}

SceneRepresentation GlobalContext::encode_scene(const std::vector<Tensor>& view_features,
                                                const std::vector<Camera>& cameras) const {
  if (view_features.empty()) throw TensorError("encode_scene: no views");
  if (view_features.size() != cameras.size())
    throw TensorError("encode_scene: need one camera per view");
  const int n = static_cast<int>(view_features.size());
  const int h = view_features[0].dim(0), w = view_features[0].dim(1);
  const int c = cfg_.channels;
  for (const auto& f : view_features)
    if (f.shape() != Shape{h, w, c})
      throw TensorError("encode_scene: view feature shapes differ");

  // [N, h, w, C] with positional and pose embeddings baked into the tokens
  std::vector<double> posf(static_cast<size_t>(h) * w * 4 * cfg_.pos_octaves);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double yx[2] = {h > 1 ? static_cast<double>(y) / (h - 1) : 0.0,
                            w > 1 ? static_cast<double>(x) / (w - 1) : 0.0};
      auto ff = fourier_features(yx, 2, cfg_.pos_octaves);
      std::copy(ff.begin(), ff.end(), posf.begin() + (static_cast<size_t>(y) * w + x) * ff.size());
    }
  Tensor pos = pos_proj_(Tensor::from_data({h, w, 4 * cfg_.pos_octaves}, std::move(posf)));

  std::vector<double> poses(static_cast<size_t>(n) * 16);
  for (int v = 0; v < n; ++v)
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col)
        poses[v * 16 + r * 4 + col] = cameras[v].world_to_camera(r, col);
  Tensor pose_embed = pose_proj_(Tensor::from_data({n, 16}, std::move(poses)));  // [N, C]

  std::vector<Tensor> views;
  for (int v = 0; v < n; ++v) {
    Tensor t = badd(view_features[v], reshape(slice(pose_embed, 0, v, 1), {c}));
    views.push_back(reshape(add(t, pos), {1, h, w, c}));
  }
  Tensor x = concat(views, 0);

  // pad to extents both P and G divide, mask the pad tokens, crop after
  const int unit = std::lcm(cfg_.block_p, cfg_.grid_g);
  const int ph = (h + unit - 1) / unit * unit;
  const int pw = (w + unit - 1) / unit * unit;
  std::vector<uint8_t> valid;
  if (ph != h || pw != w) {
    if (pw != w) x = concat({x, Tensor::zeros({n, h, pw - w, c})}, 2);
    if (ph != h) x = concat({x, Tensor::zeros({n, ph - h, pw, c})}, 1);
    valid.assign(static_cast<size_t>(ph) * pw, 0);
    for (int y = 0; y < h; ++y)
      for (int xc = 0; xc < w; ++xc) valid[y * pw + xc] = 1;
  }

  ViewFeatureGrid grid{x, cfg_.block_p, cfg_.grid_g};
  for (const auto& blk : blocks_)
    grid.tensor = blk.forward(grid, valid.empty() ? nullptr : &valid);
  Tensor out = grid.tensor;
  if (ph != h) out = slice(out, 1, 0, h);
  if (pw != w) out = slice(out, 2, 0, w);

  SceneRepresentation scene;
  scene.tokens = reshape(out, {n * h * w, c});
  scene.source_view_count = n;
  return scene;
}

Tensor GlobalContext::embed_rays(const RayBundle& rays) const {
  const int f = cfg_.ray_octaves;
  const int width = 12 * f;
  std::vector<double> feats(rays.size() * width);
  for (size_t r = 0; r < rays.size(); ++r) {
    auto fo = fourier_features(rays.origins[r].data(), 3, f);
    auto fd = fourier_features(rays.directions[r].data(), 3, f);
    std::copy(fo.begin(), fo.end(), feats.begin() + r * width);
    std::copy(fd.begin(), fd.end(), feats.begin() + r * width + fo.size());
  }
  return ray_proj_(Tensor::from_data({static_cast<int>(rays.size()), width}, std::move(feats)));
}

Tensor GlobalContext::decode_global(const Tensor& ray_embeds, const SceneRepresentation& scene,
                                    std::vector<Tensor>* layer_weights) const {
  if (ray_embeds.rank() != 2 || ray_embeds.dim(1) != cfg_.channels)
    throw TensorError("decode_global: ray embeddings must be [R, C] with C=" +
                      std::to_string(cfg_.channels));
  if (scene.tokens.dim(1) != cfg_.channels)
    throw TensorError("decode_global: scene token width mismatch");
  const int r = ray_embeds.dim(0);
  Tensor q = reshape(ray_embeds, {r, 1, cfg_.channels});
  for (const auto& layer : decoder_) {
    // project scene tokens once, then share them across all ray queries
    Tensor normed = layer.ln_kv(scene.tokens);
    Tensor k = expand0(layer.mha.wk(normed), r);
    Tensor v = expand0(layer.mha.wv(normed), r);
    AttnResult a = layer.mha.with_kv(layer.ln_q(q), k, v);
    if (layer_weights) layer_weights->push_back(a.weights);
    Tensor hres = add(q, a.out);
    q = add(hres, layer.ffn(layer.ln_ffn(hres)));
  }
  return reshape(q, {r, cfg_.channels});
}

}  // namespace nrt
