// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "nrt/rng.hpp"
#include "nrt/tensor.hpp"

namespace nrt::nn {

// Flat, ordered collection of every learnable tensor in a model. Iteration
// order is construction order, which fixes initialization draws, checkpoint
// layout and optimizer state indexing.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, const Shape& shape, std::vector<double> init);
  const std::vector<Tensor>& params() const { return params_; }
  Tensor find(const std::string& name) const;  // undefined Tensor when absent
  int64_t total_count() const;
  void zero_grad();

 private:
  std::vector<Tensor> params_;
};

// Xavier-uniform block: +-sqrt(6/(fan_in+fan_out)).
std::vector<double> xavier_init(Rng& rng, int fan_in, int fan_out);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
  int in_dim() const { return w.dim(0); }
  int out_dim() const { return w.dim(1); }
};

struct LayerNorm {
  Tensor gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }
};

// linear -> relu -> linear, hidden = mult * dim
struct Ffn {
  Linear up, down;
  Ffn() = default;
  Ffn(ParamRegistry& reg, const std::string& name, int dim, int mult, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(relu(up(x))); }
};

// Stack of linears with relu between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& name, const std::vector<int>& dims, Rng& rng);
  Tensor operator()(Tensor x) const;
};

// Learned q/k/v/out projections around the scaled dot-product core.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry& reg, const std::string& name, int dim, int heads, Rng& rng);
  AttnResult operator()(const Tensor& q_in, const Tensor& kv_in,
                        const AttnMask* mask = nullptr) const;
  // Variant with externally precomputed k/v projections (shared across many
  // queries, e.g. scene tokens reused by every ray).
  AttnResult with_kv(const Tensor& q_in, const Tensor& k_proj, const Tensor& v_proj,
                     const AttnMask* mask = nullptr) const;
};

// Pre-norm residual self-attention + feed-forward layer.
struct SelfAttnLayer {
  LayerNorm ln_attn, ln_ffn;
  MultiHeadAttention mha;
  Ffn ffn;
  SelfAttnLayer() = default;
  SelfAttnLayer(ParamRegistry& reg, const std::string& name, int dim, int heads, int ffn_mult,
                Rng& rng);
  // Returns the updated tokens and the attention weights of this layer.
  AttnResult operator()(const Tensor& x, const AttnMask* mask = nullptr) const;
};

// Pre-norm residual cross-attention + feed-forward layer (query stream
// attends to a separate key/value stream).
struct CrossAttnLayer {
  LayerNorm ln_q, ln_kv, ln_ffn;
  MultiHeadAttention mha;
  Ffn ffn;
  CrossAttnLayer() = default;
  CrossAttnLayer(ParamRegistry& reg, const std::string& name, int dim, int heads, int ffn_mult,
                 Rng& rng);
  AttnResult operator()(const Tensor& q, const Tensor& kv, const AttnMask* mask = nullptr) const;
};

Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace nrt::nn
