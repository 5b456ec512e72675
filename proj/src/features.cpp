// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/features.hpp"

#include <cmath>

namespace nrt {

namespace {

std::vector<double> conv_init(Rng& rng, int k, int cin, int cout) {
  const double bound = std::sqrt(6.0 / (k * k * cin + k * k * cout));
  std::vector<double> v(static_cast<size_t>(k) * k * cin * cout);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

int reflect(int i, int n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

// reflect-pad on the bottom/right up to (th, tw); plain data, images are leaves
Tensor pad_to(const Tensor& img, int th, int tw) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h == th && w == tw) return img;
  std::vector<double> out(static_cast<size_t>(th) * tw * c);
  const auto& src = img.values();
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      const int sy = reflect(y, h), sx = reflect(x, w);
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<size_t>(y) * tw + x) * c + ch] =
            src[(static_cast<size_t>(sy) * w + sx) * c + ch];
    }
  return Tensor::from_data({th, tw, c}, std::move(out));
}

Tensor crop(const Tensor& x, int h, int w) {
  Tensor t = x;
  if (t.dim(0) != h) t = slice(t, 0, 0, h);
  if (t.dim(1) != w) t = slice(t, 1, 0, w);
  return t;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

Conv2dLayer::Conv2dLayer(nn::ParamRegistry& reg, const std::string& name, int k, int cin,
                         int cout, int stride_, Rng& rng) {
  w = reg.add(name + ".w", {k, k, cin, cout}, conv_init(rng, k, cin, cout));
  b = reg.add(name + ".b", {cout}, std::vector<double>(cout, 0.0));
  stride = stride_;
}

FeatureExtractor::FeatureExtractor(nn::ParamRegistry& reg, int channels, Rng& rng)
    : channels_(channels),
      stem_(reg, "fpn.stem", 3, 3, channels, 2, rng),
      down4_(reg, "fpn.down4", 3, channels, channels, 2, rng),
      down8_(reg, "fpn.down8", 3, channels, channels, 2, rng),
      down16_(reg, "fpn.down16", 3, channels, channels, 2, rng),
      lat4_(reg, "fpn.lat4", 1, channels, channels, 1, rng),
      lat8_(reg, "fpn.lat8", 1, channels, channels, 1, rng),
      lat16_(reg, "fpn.lat16", 1, channels, channels, 1, rng),
      head4_(reg, "fpn.head4", 3, channels, channels, 1, rng),
      head8_(reg, "fpn.head8", 3, channels, channels, 1, rng),
      head16_(reg, "fpn.head16", 3, channels, channels, 1, rng) {}

FeaturePyramid FeatureExtractor::extract(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw TensorError("extract: image must be [H, W, 3]");
  const int h = image.dim(0), w = image.dim(1);
  if (h < 16 || w < 16)
    throw TensorError("extract: image must be at least 16x16, got " + shape_str(image.shape()));

  Tensor x = pad_to(image, ceil_div(h, 16) * 16, ceil_div(w, 16) * 16);
  Tensor c2 = relu(stem_(x));      // 1/2
  Tensor c4 = relu(down4_(c2));    // 1/4
  Tensor c8 = relu(down8_(c4));    // 1/8
  Tensor c16 = relu(down16_(c8));  // 1/16

  Tensor p16 = lat16_(c16);
  Tensor p8 = add(lat8_(c8), upsample2x(p16));
  Tensor p4 = add(lat4_(c4), upsample2x(p8));

  FeaturePyramid pyr;
  pyr.quarter = crop(head4_(p4), ceil_div(h, 4), ceil_div(w, 4));
  pyr.eighth = crop(head8_(p8), ceil_div(h, 8), ceil_div(w, 8));
  pyr.sixteenth = crop(head16_(p16), ceil_div(h, 16), ceil_div(w, 16));
  return pyr;
}

}  // namespace nrt
