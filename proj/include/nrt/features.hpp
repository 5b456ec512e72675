// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nrt/nn.hpp"
#include "nrt/tensor.hpp"

namespace nrt {

// Per-view multi-scale feature maps, [H/s, W/s, C] each.
struct FeaturePyramid {
  Tensor quarter;
  Tensor eighth;
  Tensor sixteenth;  // produced for parity with the pyramid contract; the
                     // rendering path consumes only 1/4 and 1/8
};

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1;
  Conv2dLayer() = default;
  Conv2dLayer(nn::ParamRegistry& reg, const std::string& name, int k, int cin, int cout,
              int stride, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride); }
};

// FPN-lite: a stride-2 bottom-up stack to 1/4, 1/8 and 1/16 resolution,
// 1x1 lateral projections, nearest upsample-add top-down merges, and a 3x3
// output head per level. One weight set shared by every view.
class FeatureExtractor {
 public:
  FeatureExtractor(nn::ParamRegistry& reg, int channels, Rng& rng);

  // image: [H, W, 3] with values in [0, 1], H and W at least 16. Inputs are
  // reflect-padded up to multiples of 16 and the pyramid is cropped back to
  // ceil(H/s) x ceil(W/s).
  FeaturePyramid extract(const Tensor& image) const;

  int channels() const { return channels_; }

 private:
  int channels_;
  Conv2dLayer stem_, down4_, down8_, down16_;
  Conv2dLayer lat4_, lat8_, lat16_;
  Conv2dLayer head4_, head8_, head16_;
};

}  // namespace nrt
