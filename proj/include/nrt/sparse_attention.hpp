// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nrt/nn.hpp"
#include "nrt/tensor.hpp"

namespace nrt {

// Per-view feature maps plus the two sparsity extents.
struct ViewFeatureGrid {
  Tensor tensor;       // [N, H, W, C]
  int block_size = 1;  // P: side of the non-overlapping local windows
  int grid_size = 1;   // G: count of strided positions per axis

  int views() const { return tensor.dim(0); }
  int height() const { return tensor.dim(1); }
  int width() const { return tensor.dim(2); }
  int channels() const { return tensor.dim(3); }
  void validate() const;  // divisibility of H, W by P and G
};

// Group index per pixel (row-major H*W) for the two intra-view partitions.
// Group ids are dense in [0, group_count).
std::vector<int> block_group_of(int h, int w, int p);
std::vector<int> grid_group_of(int h, int w, int g);

// The three sparse attention forms. Each regroups tokens, runs the given
// projected multi-head attention within groups, and restores [N, H, W, C].
// pixel_valid (H*W bytes, shared by all views) excludes padding tokens from
// the key sets; pass nullptr when everything is real.
Tensor block_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                       const std::vector<uint8_t>* pixel_valid = nullptr);
Tensor grid_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                      const std::vector<uint8_t>* pixel_valid = nullptr);
Tensor interview_attention(const nn::MultiHeadAttention& mha, const ViewFeatureGrid& x,
                           const std::vector<uint8_t>* pixel_valid = nullptr);

// block -> grid -> inter-view attention in sequence, each as a pre-norm
// residual sub-layer followed by its own feed-forward sub-layer.
class EncoderBlock {
 public:
  EncoderBlock(nn::ParamRegistry& reg, const std::string& name, int dim, int heads, int ffn_mult,
               Rng& rng);
  Tensor forward(const ViewFeatureGrid& x,
                 const std::vector<uint8_t>* pixel_valid = nullptr) const;

  nn::MultiHeadAttention mha_block, mha_grid, mha_view;
  nn::LayerNorm ln_block, ln_block_ffn, ln_grid, ln_grid_ffn, ln_view, ln_view_ffn;
  nn::Ffn ffn_block, ffn_grid, ffn_view;
};

// ---- cost model -------------------------------------------------------------

struct CostStage {
  std::string stage;
  uint64_t flops = 0;       // 1 multiply-add = 2 FLOPs
  int64_t parameters = 0;
};

struct CostReport {
  uint64_t flops = 0;
  int64_t parameters = 0;
  std::vector<CostStage> breakdown;
  std::string to_csv() const;  // stage,flops,parameters rows plus a total row
};

// Closed-form multiply-accumulate counts for the encoder stack: q/k/v/out
// projections, attention score and value products, and feed-forward layers.
// Totals cover `blocks` encoder blocks; embeddings outside the blocks are
// not modeled. Head count does not change multiply-add totals and is
// accepted for signature parity with the instrumented runs.
CostReport cost_model(int h, int w, int c, int n, int p, int g, int heads, int blocks,
                      int ffn_mult = 2);
// Joint attention over all N*H*W tokens per block, same sub-layer shapes.
CostReport cost_model_full(int h, int w, int c, int n, int heads, int blocks, int ffn_mult = 2);

// Sum of the attention score/value product rows (the near-linear vs
// quadratic part of the comparison).
uint64_t attention_score_flops(const CostReport& report);

}  // namespace nrt
