// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <sstream>

namespace nrt {

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* what) {
    if (v <= 0) throw TensorError(std::string("config: ") + what + " must be positive");
  };
  positive(channels, "channels");
  positive(heads, "heads");
  positive(encoder_blocks, "encoder_blocks");
  positive(decoder_layers, "decoder_layers");
  positive(vl_blocks, "vl_blocks");
  positive(n_coarse, "n_coarse");
  positive(fourier_octaves, "fourier_octaves");
  positive(block_p, "block_p");
  positive(grid_g, "grid_g");
  positive(ffn_mult, "ffn_mult");
  positive(depth_octaves, "depth_octaves");
  positive(pos_octaves, "pos_octaves");
  positive(pdf_grid_mult, "pdf_grid_mult");
  if (n_fine < 0) throw TensorError("config: n_fine must be non-negative");
  if (bandwidth_factor <= 0.0) throw TensorError("config: bandwidth_factor must be positive");
  if (channels % heads != 0) throw TensorError("config: channels must be divisible by heads");
  if (n_coarse < 2) throw TensorError("config: n_coarse must be at least 2");
}

ModelConfig ModelConfig::paper_profile() {
  ModelConfig cfg;
  cfg.channels = 64;
  cfg.vl_blocks = 8;
  cfg.n_coarse = 128;
  cfg.n_fine = 64;
  cfg.block_p = 8;
  cfg.grid_g = 8;
  return cfg;
}

namespace {

template <class F>
void for_each_key(ModelConfig& cfg, F&& visit) {
  visit("channels", cfg.channels);
  visit("heads", cfg.heads);
  visit("encoder_blocks", cfg.encoder_blocks);
  visit("decoder_layers", cfg.decoder_layers);
  visit("vl_blocks", cfg.vl_blocks);
  visit("n_coarse", cfg.n_coarse);
  visit("n_fine", cfg.n_fine);
  visit("fourier_octaves", cfg.fourier_octaves);
  visit("block_p", cfg.block_p);
  visit("grid_g", cfg.grid_g);
  visit("ffn_mult", cfg.ffn_mult);
  visit("depth_octaves", cfg.depth_octaves);
  visit("pos_octaves", cfg.pos_octaves);
  visit("pdf_grid_mult", cfg.pdf_grid_mult);
}

}  // namespace

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::map<std::string, std::string> kv;

  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j = nlohmann::json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it)
      kv[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
  } else {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw TensorError("config: expected key = value at line " + std::to_string(lineno));
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }

  auto take = [&kv](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  for_each_key(cfg, [&](const char* key, int& field) {
    if (const auto* v = take(key)) field = std::stoi(*v);
  });
  if (const auto* v = take("bandwidth_factor")) cfg.bandwidth_factor = std::stod(*v);
  if (const auto* v = take("seed")) cfg.seed = std::stoull(*v);
  if (const auto* v = take("supervise_coarse"))
    cfg.supervise_coarse = *v == "true" || *v == "1";

  static const std::vector<std::string> known = {
      "channels",       "heads",         "encoder_blocks", "decoder_layers",
      "vl_blocks",      "n_coarse",      "n_fine",         "fourier_octaves",
      "block_p",        "grid_g",        "ffn_mult",       "depth_octaves",
      "pos_octaves",    "pdf_grid_mult", "bandwidth_factor", "seed",
      "supervise_coarse"};
  for (const auto& [key, value] : kv)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw TensorError("config: unknown key '" + key + "'");

  cfg.validate();
  return cfg;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  ModelConfig copy = *this;
  for_each_key(copy, [&](const char* key, int& field) { os << key << " = " << field << "\n"; });
  os << "bandwidth_factor = " << bandwidth_factor << "\n";
  os << "seed = " << seed << "\n";
  os << "supervise_coarse = " << (supervise_coarse ? "true" : "false") << "\n";
  return os.str();
}

RenderModel::RenderModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  fpn_ = std::make_unique<FeatureExtractor>(reg_, cfg_.channels, rng);

  GlobalContextConfig gc;
  gc.channels = cfg_.channels;
  gc.heads = cfg_.heads;
  gc.encoder_blocks = cfg_.encoder_blocks;
  gc.decoder_layers = cfg_.decoder_layers;
  gc.ffn_mult = cfg_.ffn_mult;
  gc.ray_octaves = cfg_.fourier_octaves;
  gc.pos_octaves = cfg_.pos_octaves;
  gc.block_p = cfg_.block_p;
  gc.grid_g = cfg_.grid_g;
  ctx_ = std::make_unique<GlobalContext>(reg_, gc, rng);

  LocalGeometryConfig lc;
  lc.channels = cfg_.channels;
  lc.heads = cfg_.heads;
  lc.vl_blocks = cfg_.vl_blocks;
  lc.ffn_mult = cfg_.ffn_mult;
  lc.depth_octaves = cfg_.depth_octaves;
  local_ = std::make_unique<LocalGeometry>(reg_, lc, rng);

  color_ = nn::Mlp(reg_, "color_mlp", {cfg_.channels, 2 * cfg_.channels, 2 * cfg_.channels, 3},
                   rng);
}

SceneState RenderModel::prepare(const std::vector<Tensor>& images,
                                const std::vector<Camera>& cameras) const {
  if (images.empty() || images.size() != cameras.size())
    throw TensorError("prepare: need one camera per source image");
  SceneState state;
  state.cameras = cameras;
  std::vector<Tensor> eighth;
  for (const auto& img : images) {
    FeaturePyramid pyr = fpn_->extract(img);
    state.quarter_maps.push_back(pyr.quarter);
    eighth.push_back(pyr.eighth);
  }
  state.scene = ctx_->encode_scene(eighth, cameras);
  return state;
}

namespace {

std::vector<double> unit_depths(const std::vector<double>& depths, const RayBundle& rays,
                                int samples) {
  std::vector<double> ud(depths.size());
  for (size_t b = 0; b < rays.size(); ++b) {
    const double span = rays.far[b] - rays.near[b];
    for (int s = 0; s < samples; ++s)
      ud[b * samples + s] = (depths[b * samples + s] - rays.near[b]) / span;
  }
  return ud;
}

}  // namespace

RenderModel::RenderBatch RenderModel::render_rays(const RayBundle& rays,
                                                  const SceneState& state,
                                                  const RenderOptions& opt) const {
  if (rays.size() == 0) throw TensorError("render_rays: empty bundle");
  const int r = static_cast<int>(rays.size());
  const int nc = cfg_.n_coarse;

  Tensor fg = ctx_->decode_global(ctx_->embed_rays(rays), state.scene);

  // stage 1: uniform
  SamplePoints coarse =
      sample_uniform(rays, nc, opt.jitter, opt.seed, opt.ray_index_base);
  EpipolarFeatures epi1 = gather_epipolar(coarse, state.quarter_maps, state.cameras, 4);
  LocalGeometry::Result res1 =
      local_->run_blocks(fg, epi1, unit_depths(coarse.depths, rays, nc));
  if (opt.stage1_weights_out) *opt.stage1_weights_out = res1.weights;
  if (opt.stage1_depths_out) *opt.stage1_depths_out = coarse.depths;

  // resample: attention weights -> kernel-regressed pdf -> fine depths
  const bool freeze = opt.frozen_depths != nullptr;
  const bool have_frozen = freeze && !opt.frozen_depths->empty();
  std::vector<std::vector<double>> merged(r);
  int s2 = 0;
  for (int i = 0; i < r; ++i) {
    std::vector<double> ray_coarse(coarse.depths.begin() + static_cast<int64_t>(i) * nc,
                                   coarse.depths.begin() + static_cast<int64_t>(i + 1) * nc);
    if (have_frozen) {
      merged[i] = (*opt.frozen_depths)[i];
    } else if (cfg_.n_fine > 0 || opt.pdf_out) {
      std::vector<double> w(res1.weights.begin() + static_cast<int64_t>(i) * nc,
                            res1.weights.begin() + static_cast<int64_t>(i + 1) * nc);
      const double h = cfg_.bandwidth_factor * (rays.far[i] - rays.near[i]) / nc;
      SamplePdf pdf = kernel_regress(ray_coarse, w, h, cfg_.pdf_grid_mult * nc, rays.near[i],
                                     rays.far[i]);
      std::vector<double> fine =
          cfg_.n_fine > 0
              ? inverse_transform_sample(pdf, cfg_.n_fine, opt.seed + 1,
                                         opt.ray_index_base + i, opt.stratified_fine)
              : std::vector<double>();
      if (opt.pdf_out) opt.pdf_out->push_back(std::move(pdf));
      if (opt.fine_depths_out) opt.fine_depths_out->push_back(fine);
      merged[i] = merge_depths(ray_coarse, fine);
    } else {
      merged[i] = std::move(ray_coarse);
    }
    s2 = std::max(s2, static_cast<int>(merged[i].size()));
  }
  if (freeze && !have_frozen) *opt.frozen_depths = merged;

  // stage 2: all samples through the same transformer, ragged rays padded
  SamplePoints fine_pts;
  fine_pts.samples_per_ray = s2;
  fine_pts.depths.resize(static_cast<int64_t>(r) * s2);
  fine_pts.positions.resize(static_cast<int64_t>(r) * s2);
  std::vector<uint8_t> sample_valid(static_cast<int64_t>(r) * s2, 1);
  std::vector<double> ud2(static_cast<int64_t>(r) * s2, 0.0);
  for (int i = 0; i < r; ++i) {
    const auto& m = merged[i];
    const double span = rays.far[i] - rays.near[i];
    for (int s = 0; s < s2; ++s) {
      const bool real = s < static_cast<int>(m.size());
      // pad slots reuse the last real depth; they are masked out everywhere
      const double d = real ? m[s] : m.back();
      fine_pts.depths[static_cast<int64_t>(i) * s2 + s] = d;
      fine_pts.positions[static_cast<int64_t>(i) * s2 + s] =
          rays.origins[i] + d * rays.directions[i];
      ud2[static_cast<int64_t>(i) * s2 + s] = (d - rays.near[i]) / span;
      if (!real) sample_valid[static_cast<int64_t>(i) * s2 + s] = 0;
    }
  }
  EpipolarFeatures epi2 = gather_epipolar(fine_pts, state.quarter_maps, state.cameras, 4);
  // padding must stay invisible to the ray attention even when in-frustum
  for (int64_t row = 0; row < static_cast<int64_t>(r) * s2; ++row)
    if (!sample_valid[row])
      for (int v = 0; v < epi2.views; ++v) epi2.valid[row * epi2.views + v] = 0;
  LocalGeometry::Result res2 = local_->run_blocks(fg, epi2, ud2, &sample_valid);

  RenderBatch out;
  out.colors = sigmoid(color_(res2.ray_feature));
  if (cfg_.supervise_coarse) out.coarse_colors = sigmoid(color_(res1.ray_feature));

  out.rays.resize(r);
  for (int i = 0; i < r; ++i) {
    RenderedRay& rr = out.rays[i];
    for (int c = 0; c < 3; ++c) rr.color[c] = out.colors.values()[i * 3 + c];
    const int real = static_cast<int>(merged[i].size());
    rr.depths = merged[i];
    rr.weights.assign(res2.weights.begin() + static_cast<int64_t>(i) * s2,
                      res2.weights.begin() + static_cast<int64_t>(i) * s2 + real);
    rr.expected_depth = 0.0;
    for (int s = 0; s < real; ++s) rr.expected_depth += rr.weights[s] * rr.depths[s];
    rr.covered = res2.ray_covered[i];
  }
  return out;
}

RenderedRay RenderModel::render_ray(const RayBundle& single, const SceneState& state,
                                    const RenderOptions& opt) const {
  if (single.size() != 1) throw TensorError("render_ray: bundle must hold exactly one ray");
  return render_rays(single, state, opt).rays[0];
}

ImageRender RenderModel::render_image(const Camera& target, const SceneState& state,
                                      int chunk_size, const RenderOptions& opt) const {
  if (chunk_size < 1) throw TensorError("render_image: chunk_size must be >= 1");
  target.validate();
  ImageRender img;
  img.height = target.height;
  img.width = target.width;
  img.rgb.assign(static_cast<size_t>(target.height) * target.width * 3, 0.0);
  img.depth.assign(static_cast<size_t>(target.height) * target.width, 0.0);
  img.covered.assign(static_cast<size_t>(target.height) * target.width, 0);

  const int total = target.height * target.width;
  for (int start = 0; start < total; start += chunk_size) {
    const int count = std::min(chunk_size, total - start);
    std::vector<std::pair<int, int>> pixels;
    pixels.reserve(count);
    for (int i = 0; i < count; ++i)
      pixels.emplace_back((start + i) / target.width, (start + i) % target.width);
    RayBundle rays = generate_rays(target, pixels);
    RenderOptions chunk_opt = opt;
    chunk_opt.ray_index_base = opt.ray_index_base + start;  // per-pixel streams
    NoGradGuard ng;
    RenderBatch batch = render_rays(rays, state, chunk_opt);
    for (int i = 0; i < count; ++i) {
      for (int c = 0; c < 3; ++c)
        img.rgb[(static_cast<size_t>(start) + i) * 3 + c] =
            std::clamp(batch.rays[i].color[c], 0.0, 1.0);
      img.depth[start + i] = batch.rays[i].expected_depth;
      img.covered[start + i] = batch.rays[i].covered;
    }
  }
  return img;
}

std::vector<int> RenderModel::select_source_views(const Camera& target,
                                                  const std::vector<Camera>& candidates, int n,
                                                  int k, bool training, uint64_t seed) {
  if (candidates.empty()) throw TensorError("select_source_views: no candidates");
  if (n < 1 || k < 1) throw TensorError("select_source_views: n and k must be positive");
  const Eigen::Vector3d axis = target.optical_axis();
  const Eigen::Vector3d center = target.center();
  double max_dist = 0.0;
  for (const auto& cam : candidates)
    max_dist = std::max(max_dist, (cam.center() - center).norm());

  std::vector<std::pair<double, int>> ranked;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double cosang =
        std::clamp(axis.dot(candidates[i].optical_axis()), -1.0, 1.0);
    const double score = std::acos(cosang) +
                         (max_dist > 0 ? (candidates[i].center() - center).norm() / max_dist : 0.0);
    ranked.emplace_back(score, static_cast<int>(i));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  if (static_cast<int>(candidates.size()) <= n) {
    std::vector<int> all;
    for (const auto& [score, idx] : ranked) all.push_back(idx);
    return all;
  }
  if (!training) {
    std::vector<int> top(n);
    for (int i = 0; i < n; ++i) top[i] = ranked[i].second;
    return top;
  }
  const int pool = std::min<int>(static_cast<int>(candidates.size()), k * n);
  std::vector<int> indices(pool);
  for (int i = 0; i < pool; ++i) indices[i] = i;
  Rng rng(seed);
  for (int i = 0; i < n; ++i)  // partial Fisher-Yates over the pool
    std::swap(indices[i], indices[i + rng.uniform_index(pool - i)]);
  std::vector<int> chosen;
  for (int i = 0; i < n; ++i) chosen.push_back(ranked[indices[i]].second);
  std::sort(chosen.begin(), chosen.end(), [&](int a, int b) {
    auto rank_of = [&](int idx) {
      for (size_t j = 0; j < ranked.size(); ++j)
        if (ranked[j].second == idx) return j;
      return ranked.size();
    };
    return rank_of(a) < rank_of(b);
  });
  return chosen;
}

}  // namespace nrt
