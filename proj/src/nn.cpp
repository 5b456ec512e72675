// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/nn.hpp"

#include <cmath>

namespace nrt::nn {

Tensor ParamRegistry::add(const std::string& name, const Shape& shape,
                          std::vector<double> init) {
  for (const auto& p : params_)
    if (p->name == name) throw TensorError("duplicate parameter name: " + name);
  Tensor t = Tensor::param(shape, std::move(init), name);
  params_.push_back(t);
  return t;
}

Tensor ParamRegistry::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p;
  return {};
}

int64_t ParamRegistry::total_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) const_cast<Tensor&>(p).zero_grad();
}

std::vector<double> xavier_init(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(fan_in) * fan_out);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng) {
  w = reg.add(name + ".w", {in, out}, xavier_init(rng, in, out));
  b = reg.add(name + ".b", {out}, std::vector<double>(out, 0.0));
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name, int dim) {
  gamma = reg.add(name + ".gamma", {dim}, std::vector<double>(dim, 1.0));
  beta = reg.add(name + ".beta", {dim}, std::vector<double>(dim, 0.0));
}

Ffn::Ffn(ParamRegistry& reg, const std::string& name, int dim, int mult, Rng& rng)
    : up(reg, name + ".up", dim, dim * mult, rng), down(reg, name + ".down", dim * mult, dim, rng) {}

Mlp::Mlp(ParamRegistry& reg, const std::string& name, const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw TensorError("mlp: need at least input and output dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(reg, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
}

Tensor Mlp::operator()(Tensor x) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i + 1 < layers.size()) x = relu(x);
  }
  return x;
}

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg, const std::string& name, int dim,
                                       int heads_, Rng& rng)
    : wq(reg, name + ".wq", dim, dim, rng),
      wk(reg, name + ".wk", dim, dim, rng),
      wv(reg, name + ".wv", dim, dim, rng),
      wo(reg, name + ".wo", dim, dim, rng),
      heads(heads_) {
  if (dim % heads_ != 0) throw TensorError("attention width not divisible by heads");
}

AttnResult MultiHeadAttention::operator()(const Tensor& q_in, const Tensor& kv_in,
                                          const AttnMask* mask) const {
  return with_kv(q_in, wk(kv_in), wv(kv_in), mask);
}

AttnResult MultiHeadAttention::with_kv(const Tensor& q_in, const Tensor& k_proj,
                                       const Tensor& v_proj, const AttnMask* mask) const {
  AttnResult core = attention(wq(q_in), k_proj, v_proj, heads, mask);
  return {wo(core.out), core.weights};
}

SelfAttnLayer::SelfAttnLayer(ParamRegistry& reg, const std::string& name, int dim, int heads,
                             int ffn_mult, Rng& rng)
    : ln_attn(reg, name + ".ln_attn", dim),
      ln_ffn(reg, name + ".ln_ffn", dim),
      mha(reg, name + ".mha", dim, heads, rng),
      ffn(reg, name + ".ffn", dim, ffn_mult, rng) {}

AttnResult SelfAttnLayer::operator()(const Tensor& x, const AttnMask* mask) const {
  Tensor normed = ln_attn(x);
  AttnResult a = mha(normed, normed, mask);
  Tensor h = add(x, a.out);
  Tensor out = add(h, ffn(ln_ffn(h)));
  return {out, a.weights};
}

CrossAttnLayer::CrossAttnLayer(ParamRegistry& reg, const std::string& name, int dim, int heads,
                               int ffn_mult, Rng& rng)
    : ln_q(reg, name + ".ln_q", dim),
      ln_kv(reg, name + ".ln_kv", dim),
      ln_ffn(reg, name + ".ln_ffn", dim),
      mha(reg, name + ".mha", dim, heads, rng),
      ffn(reg, name + ".ffn", dim, ffn_mult, rng) {}

AttnResult CrossAttnLayer::operator()(const Tensor& q, const Tensor& kv,
                                      const AttnMask* mask) const {
  AttnResult a = mha(ln_q(q), ln_kv(kv), mask);
  Tensor h = add(q, a.out);
  Tensor out = add(h, ffn(ln_ffn(h)));
  return {out, a.weights};
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  Tensor d = sub(pred, target);
  return mean(mul(d, d));
}

}  // namespace nrt::nn
