// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "nrt/gradcheck.hpp"
#include "nrt/global_context.hpp"

using namespace nrt;
using Eigen::Vector3d;

namespace {

Camera toy_camera(double x_off = 0.0) {
  return Camera::look_at(Vector3d(x_off, 0, -2), Vector3d(0, 0, 2), Vector3d(0, 1, 0), 24.0, 32,
                         32, 0.5, 8.0);
}

Tensor random_feat(Rng& rng, int h, int w, int c) {
  std::vector<double> v(static_cast<size_t>(h) * w * c);
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::from_data({h, w, c}, std::move(v));
}

RayBundle one_ray(const Vector3d& o, const Vector3d& d, double n = 0.5, double f = 8.0) {
  RayBundle rays;
  rays.origins = {o};
  rays.directions = {d.normalized()};
  rays.near = {n};
  rays.far = {f};
  return rays;
}

GlobalContextConfig tiny_cfg() {
  GlobalContextConfig cfg;
  cfg.channels = 16;
  cfg.heads = 2;
  cfg.encoder_blocks = 1;
  cfg.decoder_layers = 2;
  cfg.ray_octaves = 2;
  cfg.pos_octaves = 2;
  cfg.block_p = 2;
  cfg.grid_g = 2;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("global_context");

TEST_CASE("fourier feature layout is octave-major sin block then cos block") {
  const double dir[3] = {0.0, 0.0, 1.0};
  auto ff = fourier_features(dir, 3, 2);
  REQUIRE(ff.size() == 12);
  const double args[6] = {M_PI * 0, M_PI * 0, M_PI * 1, 2 * M_PI * 0, 2 * M_PI * 0, 2 * M_PI * 1};
  for (int i = 0; i < 6; ++i) {
    CHECK(ff[i] == doctest::Approx(std::sin(args[i])).epsilon(1e-15));
    CHECK(ff[6 + i] == doctest::Approx(std::cos(args[i])).epsilon(1e-15));
  }
}

TEST_CASE("ray embedding is deterministic and ignores the depth bounds") {
  Rng rng(50);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  RayBundle a = one_ray(Vector3d(0.1, 0.2, -1), Vector3d(0.3, -0.2, 1));
  RayBundle b = one_ray(Vector3d(0.1, 0.2, -1), Vector3d(0.3, -0.2, 1), 1.0, 3.0);
  Tensor ea = ctx.embed_rays(a);
  Tensor eb = ctx.embed_rays(b);
  CHECK(std::memcmp(ea.values().data(), eb.values().data(), ea.numel() * sizeof(double)) == 0);
  Tensor ea2 = ctx.embed_rays(a);
  CHECK(std::memcmp(ea.values().data(), ea2.values().data(), ea.numel() * sizeof(double)) == 0);
}

TEST_CASE("token count is N * h * w") {
  Rng rng(51);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  std::vector<Tensor> feats{random_feat(rng, 8, 8, 16), random_feat(rng, 8, 8, 16)};
  SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera(0.0), toy_camera(0.5)});
  CHECK(scene.tokens.shape() == Shape{2 * 8 * 8, 16});
  CHECK(scene.source_view_count == 2);
}

TEST_CASE("zero-init encoder reduces tokens to features + embeddings") {
  Rng rng(52);
  nn::ParamRegistry reg;
  GlobalContextConfig cfg = tiny_cfg();
  cfg.encoder_blocks = 1;
  GlobalContext ctx(reg, cfg, rng);
  // zero every output projection in the single encoder block
  for (const char* name :
       {"ctx.enc0.block.mha.wo.w", "ctx.enc0.grid.mha.wo.w", "ctx.enc0.view.mha.wo.w",
        "ctx.enc0.block.ffn.down.w", "ctx.enc0.grid.ffn.down.w", "ctx.enc0.view.ffn.down.w"}) {
    Tensor p = reg.find(name);
    REQUIRE(p.defined());
    std::fill(p.leaf_data().begin(), p.leaf_data().end(), 0.0);
  }
  Tensor feat = random_feat(rng, 4, 4, 16);
  Camera cam = toy_camera();
  SceneRepresentation scene = ctx.encode_scene({feat}, {cam});

  // expected: features + positional embedding + pose embedding
  std::vector<double> posef(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) posef[r * 4 + c] = cam.world_to_camera(r, c);
  Tensor pose = Tensor::from_data({1, 16}, posef);
  Tensor pe = reg.find("ctx.pose_proj.w");
  Tensor pb = reg.find("ctx.pose_proj.b");
  Tensor pose_embed = linear(pose, pe, pb);  // [1, 16]

  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double yx[2] = {y / 3.0, x / 3.0};
      auto pf = fourier_features(yx, 2, 2);
      Tensor pos = linear(Tensor::from_data({1, 8}, pf), reg.find("ctx.pos_proj.w"),
                          reg.find("ctx.pos_proj.b"));
      for (int c = 0; c < 16; ++c) {
        const double expect =
            feat.values()[(y * 4 + x) * 16 + c] + pos.values()[c] + pose_embed.values()[c];
        CHECK(scene.tokens.values()[(y * 4 + x) * 16 + c] ==
              doctest::Approx(expect).epsilon(1e-12));
      }
    }
}

TEST_CASE("decode attends fully to a single token and splits ties") {
  Rng rng(53);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  Tensor e = ctx.embed_rays(one_ray(Vector3d(0, 0, -1), Vector3d(0, 0, 1)));

  SceneRepresentation one;
  one.tokens = random_feat(rng, 1, 16, 1).detach();
  one.tokens = reshape(one.tokens, {1, 16});
  one.source_view_count = 1;
  std::vector<Tensor> lw;
  ctx.decode_global(e, one, &lw);
  REQUIRE(lw.size() == 2);
  for (const auto& w : lw)
    for (double v : w.values()) CHECK(v == doctest::Approx(1.0));

  SceneRepresentation dup;
  Tensor row = reshape(one.tokens, {1, 16});
  dup.tokens = reshape(concat({row, row}, 0), {2, 16});
  dup.source_view_count = 1;
  lw.clear();
  ctx.decode_global(e, dup, &lw);
  for (const auto& w : lw)
    for (double v : w.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("decode is invariant to token permutation") {
  Rng rng(54);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  std::vector<Tensor> feats{random_feat(rng, 4, 4, 16), random_feat(rng, 4, 4, 16)};
  SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera(0.0), toy_camera(0.4)});
  Tensor e = ctx.embed_rays(one_ray(Vector3d(0.2, 0, -1.5), Vector3d(-0.1, 0.05, 1)));
  Tensor fg = ctx.decode_global(e, scene);

  // reverse the token order
  const int t = scene.tokens.dim(0);
  std::vector<Tensor> rows;
  for (int i = t - 1; i >= 0; --i) rows.push_back(slice(scene.tokens, 0, i, 1));
  SceneRepresentation shuffled;
  shuffled.tokens = concat(rows, 0);
  shuffled.source_view_count = scene.source_view_count;
  Tensor fg2 = ctx.decode_global(e, shuffled);
  for (int64_t i = 0; i < fg.numel(); ++i)
    CHECK(std::abs(fg.values()[i] - fg2.values()[i]) < 1e-10);
}

TEST_CASE("permuting duplicate views leaves the decoded feature unchanged") {
  Rng rng(55);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  Tensor f = random_feat(rng, 4, 4, 16);
  Camera cam = toy_camera(0.0);
  SceneRepresentation ab = ctx.encode_scene({f, f}, {cam, cam});
  Tensor e = ctx.embed_rays(one_ray(Vector3d(0, 0.1, -1), Vector3d(0.2, 0, 1)));
  Tensor fg = ctx.decode_global(e, ab);
  // identical duplicate views: swapping them permutes tokens but F_g holds
  SceneRepresentation ba = ctx.encode_scene({f, f}, {cam, cam});
  // swap the two views' token halves
  const int half = ba.tokens.dim(0) / 2;
  ba.tokens = concat({slice(ba.tokens, 0, half, half), slice(ba.tokens, 0, 0, half)}, 0);
  Tensor fg2 = ctx.decode_global(e, ba);
  for (int64_t i = 0; i < fg.numel(); ++i)
    CHECK(std::abs(fg.values()[i] - fg2.values()[i]) < 1e-10);
}

TEST_CASE("batched decode equals per-ray decode bit-exactly") {
  Rng rng(56);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  std::vector<Tensor> feats{random_feat(rng, 4, 4, 16)};
  SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera()});

  RayBundle rays;
  for (int i = 0; i < 5; ++i) {
    rays.origins.push_back(Vector3d(0.1 * i, -0.05 * i, -1.5));
    rays.directions.push_back(Vector3d(0.05 * i, 0.02, 1).normalized());
    rays.near.push_back(0.5);
    rays.far.push_back(8.0);
  }
  Tensor fg_batch = ctx.decode_global(ctx.embed_rays(rays), scene);
  for (int i = 0; i < 5; ++i) {
    RayBundle single;
    single.origins = {rays.origins[i]};
    single.directions = {rays.directions[i]};  // exact bits, no re-normalization
    single.near = {rays.near[i]};
    single.far = {rays.far[i]};
    Tensor fg_one = ctx.decode_global(ctx.embed_rays(single), scene);
    for (int c = 0; c < 16; ++c)
      CHECK(fg_batch.values()[i * 16 + c] == fg_one.values()[c]);
  }
}

TEST_CASE("different ray directions decode to different features") {
  Rng rng(57);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);
  std::vector<Tensor> feats{random_feat(rng, 4, 4, 16)};
  SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera()});
  Tensor fa = ctx.decode_global(
      ctx.embed_rays(one_ray(Vector3d(0, 0, -1), Vector3d(0, 0, 1))), scene);
  Tensor fb = ctx.decode_global(
      ctx.embed_rays(one_ray(Vector3d(0, 0, -1), Vector3d(0.4, 0.3, 0.9))), scene);
  double dot = 0, na = 0, nb = 0;
  for (int c = 0; c < 16; ++c) {
    dot += fa.values()[c] * fb.values()[c];
    na += fa.values()[c] * fa.values()[c];
    nb += fb.values()[c] * fb.values()[c];
  }
  CHECK(dot / std::sqrt(na * nb) < 0.999);
}

TEST_CASE("gradient check through embed + decode") {
  Rng rng(58);
  nn::ParamRegistry reg;
  GlobalContextConfig cfg = tiny_cfg();
  cfg.channels = 8;
  cfg.encoder_blocks = 1;
  GlobalContext ctx(reg, cfg, rng);
  std::vector<Tensor> feats{random_feat(rng, 2, 2, 8)};
  RayBundle ray = one_ray(Vector3d(0.1, -0.2, -1), Vector3d(0.1, 0.2, 1));
  Tensor w = Tensor::from_data({1, 8}, {0.3, -0.2, 0.7, 0.1, -0.5, 0.4, 0.2, -0.8});
  GradCheckOptions opt;
  opt.max_per_param = 4;
  auto rep = grad_check(
      reg.params(),
      [&] {
        SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera()});
        Tensor fg = ctx.decode_global(ctx.embed_rays(ray), scene);
        return sum(mul(fg, w));
      },
      opt);
  INFO("max_rel_err=", rep.max_rel_err, " worst=", rep.worst.param);
  CHECK(rep.pass);
}

TEST_CASE("non-divisible grids are padded, masked and cropped") {
  Rng rng(59);
  nn::ParamRegistry reg;
  GlobalContext ctx(reg, tiny_cfg(), rng);  // P = G = 2
  std::vector<Tensor> feats{random_feat(rng, 3, 5, 16)};
  SceneRepresentation scene = ctx.encode_scene(feats, {toy_camera()});
  CHECK(scene.tokens.shape() == Shape{15, 16});
  for (double v : scene.tokens.values()) CHECK(std::isfinite(v));
}

TEST_SUITE_END();
