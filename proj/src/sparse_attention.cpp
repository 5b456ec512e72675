// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/sparse_attention.hpp"

#include <sstream>

namespace nrt {

void ViewFeatureGrid::validate() const {
  if (!tensor.defined() || tensor.rank() != 4)
    throw TensorError("view grid: tensor must be [N, H, W, C]");
  if (block_size < 1 || grid_size < 1) throw TensorError("view grid: P and G must be positive");
  if (height() % block_size != 0 || width() % block_size != 0)
    throw TensorError("view grid: H and W must be divisible by P=" +
                      std::to_string(block_size) + ", got " + shape_str(tensor.shape()));
  if (height() % grid_size != 0 || width() % grid_size != 0)
    throw TensorError("view grid: H and W must be divisible by G=" + std::to_string(grid_size) +
                      ", got " + shape_str(tensor.shape()));
}

std::vector<int> block_group_of(int h, int w, int p) {
  std::vector<int> out(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out[y * w + x] = (y / p) * (w / p) + x / p;
  return out;
}

std::vector<int> grid_group_of(int h, int w, int g) {
  const int ch = h / g, cw = w / g;  // stride between tokens of one group
  std::vector<int> out(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out[y * w + x] = (y % ch) * cw + x % cw;
  return out;
}

namespace {

struct Regrouped {
  Tensor tokens;  // [batch, t, C]
  std::optional<AttnMask> mask;
};

AttnMask replicate_group_mask(const std::vector<uint8_t>& group_keep, int views, int groups,
                              int t) {
  AttnMask m;
  m.shape = {views * groups, t};
  m.keep.resize(static_cast<size_t>(views) * groups * t);
  for (int v = 0; v < views; ++v)
    std::copy(group_keep.begin(), group_keep.end(),
              m.keep.begin() + static_cast<size_t>(v) * groups * t);
  return m;
}

Regrouped to_block_tokens(const ViewFeatureGrid& x, const std::vector<uint8_t>* pixel_valid) {
  const int n = x.views(), h = x.height(), w = x.width(), c = x.channels();
  const int p = x.block_size, gh = h / p, gw = w / p;
  Tensor t = reshape(x.tensor, {n, gh, p, gw, p, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  Regrouped r;
  r.tokens = reshape(t, {n * gh * gw, p * p, c});
  if (pixel_valid) {
    std::vector<uint8_t> keep(static_cast<size_t>(gh) * gw * p * p);
    size_t i = 0;
    for (int by = 0; by < gh; ++by)
      for (int bx = 0; bx < gw; ++bx)
        for (int iy = 0; iy < p; ++iy)
          for (int ix = 0; ix < p; ++ix)
            keep[i++] = (*pixel_valid)[(by * p + iy) * w + bx * p + ix];
    r.mask = replicate_group_mask(keep, n, gh * gw, p * p);
  }
  return r;
}

Tensor from_block_tokens(const Tensor& tokens, const ViewFeatureGrid& x) {
  const int n = x.views(), h = x.height(), w = x.width(), c = x.channels();
  const int p = x.block_size, gh = h / p, gw = w / p;
  Tensor t = reshape(tokens, {n, gh, gw, p, p, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {n, h, w, c});
}

Regrouped to_grid_tokens(const ViewFeatureGrid& x, const std::vector<uint8_t>* pixel_valid) {
  const int n = x.views(), h = x.height(), w = x.width(), c = x.channels();
  const int g = x.grid_size, ch = h / g, cw = w / g;
  Tensor t = reshape(x.tensor, {n, g, ch, g, cw, c});
  t = permute(t, {0, 2, 4, 1, 3, 5});
  Regrouped r;
  r.tokens = reshape(t, {n * ch * cw, g * g, c});
  if (pixel_valid) {
    std::vector<uint8_t> keep(static_cast<size_t>(ch) * cw * g * g);
    size_t i = 0;
    for (int by = 0; by < ch; ++by)
      for (int bx = 0; bx < cw; ++bx)
        for (int ay = 0; ay < g; ++ay)
          for (int ax = 0; ax < g; ++ax)
            keep[i++] = (*pixel_valid)[(ay * ch + by) * w + ax * cw + bx];
    r.mask = replicate_group_mask(keep, n, ch * cw, g * g);
  }
  return r;
}

Tensor from_grid_tokens(const Tensor& tokens, const ViewFeatureGrid& x) {
  const int n = x.views(), h = x.height(), w = x.width(), c = x.channels();
  const int g = x.grid_size, ch = h / g, cw = w / g;
  Tensor t = reshape(tokens, {n, ch, cw, g, g, c});
  t = permute(t, {0, 3, 1, 4, 2, 5});
  return reshape(t, {n, h, w, c});
}

}  // namespace

Tensor block_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                       const std::vector<uint8_t>* pixel_valid) {
  x.validate();
  Regrouped r = to_block_tokens(x, pixel_valid);
  AttnResult a = mha(r.tokens, r.tokens, r.mask ? &*r.mask : nullptr);
  return from_block_tokens(a.out, x);
}

Tensor grid_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                      const std::vector<uint8_t>* pixel_valid) {
  x.validate();
  Regrouped r = to_grid_tokens(x, pixel_valid);
  AttnResult a = mha(r.tokens, r.tokens, r.mask ? &*r.mask : nullptr);
  return from_grid_tokens(a.out, x);
}

Tensor interview_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                           const std::vector<uint8_t>* pixel_valid) {
  x.validate();
  const int n = x.views(), h = x.height(), w = x.width(), c = x.channels();
  Tensor t = permute(reshape(x.tensor, {n, h * w, c}), {1, 0, 2});  // [H*W, N, C]
  std::optional<AttnMask> mask;
  if (pixel_valid) {
    mask.emplace();
    mask->shape = {h * w, n};
    mask->keep.resize(static_cast<size_t>(h) * w * n);
    for (int pxl = 0; pxl < h * w; ++pxl)
      for (int v = 0; v < n; ++v) mask->keep[pxl * n + v] = (*pixel_valid)[pxl];
  }
  AttnResult a = mha(t, t, mask ? &*mask : nullptr);
  return reshape(permute(a.out, {1, 0, 2}), {n, h, w, c});
}

EncoderBlock::EncoderBlock(nn::ParamRegistry& reg, const std::string& name, int dim, int heads,
                           int ffn_mult, Rng& rng)
    : mha_block(reg, name + ".block.mha", dim, heads, rng),
      mha_grid(reg, name + ".grid.mha", dim, heads, rng),
      mha_view(reg, name + ".view.mha", dim, heads, rng),
      ln_block(reg, name + ".block.ln_attn", dim),
      ln_block_ffn(reg, name + ".block.ln_ffn", dim),
      ln_grid(reg, name + ".grid.ln_attn", dim),
      ln_grid_ffn(reg, name + ".grid.ln_ffn", dim),
      ln_view(reg, name + ".view.ln_attn", dim),
      ln_view_ffn(reg, name + ".view.ln_ffn", dim),
      ffn_block(reg, name + ".block.ffn", dim, ffn_mult, rng),
      ffn_grid(reg, name + ".grid.ffn", dim, ffn_mult, rng),
      ffn_view(reg, name + ".view.ffn", dim, ffn_mult, rng) {}

Tensor EncoderBlock::forward(const ViewFeatureGrid& x,
                             const std::vector<uint8_t>* pixel_valid) const {
  x.validate();
  Tensor t = x.tensor;
  const int p = x.block_size, g = x.grid_size;

  t = add(t, block_attention(mha_block, {ln_block(t), p, g}, pixel_valid));
  t = add(t, ffn_block(ln_block_ffn(t)));
  t = add(t, grid_attention(mha_grid, {ln_grid(t), p, g}, pixel_valid));
  t = add(t, ffn_grid(ln_grid_ffn(t)));
  t = add(t, interview_attention(mha_view, {ln_view(t), p, g}, pixel_valid));
  t = add(t, ffn_view(ln_view_ffn(t)));
  return t;
}

// ---- cost model ---------------------------------------------------------------

namespace {

// one attention sub-layer (proj + scores rows) and its ffn row, in MACs
void push_attention_stage(std::vector<CostStage>& rows, const std::string& stage,
                          uint64_t tokens, uint64_t group_tokens, uint64_t c, uint64_t mult,
                          uint64_t blocks) {
  const uint64_t proj_macs = 4 * tokens * c * c;
  const uint64_t score_macs = 2 * tokens * group_tokens * c;
  const uint64_t ffn_macs = 2 * tokens * c * (mult * c);
  const int64_t proj_params = 4 * (static_cast<int64_t>(c) * c + c) + 2 * c;
  const int64_t ffn_params =
      static_cast<int64_t>(c) * (mult * c) + mult * c + static_cast<int64_t>(mult * c) * c + c +
      2 * c;
  rows.push_back({stage + ".proj", 2 * proj_macs * blocks, proj_params * static_cast<int64_t>(blocks)});
  rows.push_back({stage + ".scores", 2 * score_macs * blocks, 0});
  rows.push_back({stage + ".ffn", 2 * ffn_macs * blocks, ffn_params * static_cast<int64_t>(blocks)});
}

CostReport finish_report(std::vector<CostStage> rows) {
  CostReport rep;
  rep.breakdown = std::move(rows);
  for (const auto& r : rep.breakdown) {
    rep.flops += r.flops;
    rep.parameters += r.parameters;
  }
  return rep;
}

void require_positive(std::initializer_list<int> vals) {
  for (int v : vals)
    if (v <= 0) throw TensorError("cost model: all arguments must be positive");
}

}  // namespace

CostReport cost_model(int h, int w, int c, int n, int p, int g, int heads, int blocks,
                      int ffn_mult) {
  require_positive({h, w, c, n, p, g, heads, blocks, ffn_mult});
  if (h % p || w % p || h % g || w % g)
    throw TensorError("cost model: H and W must be divisible by P and G");
  const uint64_t tokens = static_cast<uint64_t>(n) * h * w;
  std::vector<CostStage> rows;
  push_attention_stage(rows, "block_attn", tokens, static_cast<uint64_t>(p) * p, c, ffn_mult,
                       blocks);
  push_attention_stage(rows, "grid_attn", tokens, static_cast<uint64_t>(g) * g, c, ffn_mult,
                       blocks);
  push_attention_stage(rows, "interview_attn", tokens, n, c, ffn_mult, blocks);
  return finish_report(std::move(rows));
}

CostReport cost_model_full(int h, int w, int c, int n, int heads, int blocks, int ffn_mult) {
  require_positive({h, w, c, n, heads, blocks, ffn_mult});
  const uint64_t tokens = static_cast<uint64_t>(n) * h * w;
  std::vector<CostStage> rows;
  push_attention_stage(rows, "full_attn", tokens, tokens, c, ffn_mult, blocks);
  return finish_report(std::move(rows));
}

uint64_t attention_score_flops(const CostReport& report) {
  uint64_t total = 0;
  for (const auto& r : report.breakdown)
    if (r.stage.size() > 7 && r.stage.substr(r.stage.size() - 7) == ".scores") total += r.flops;
  return total;
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "stage,flops,parameters\n";
  for (const auto& r : breakdown)
    os << r.stage << ',' << r.flops << ',' << r.parameters << '\n';
  os << "total," << flops << ',' << parameters << '\n';
  return os.str();
}

}  // namespace nrt
