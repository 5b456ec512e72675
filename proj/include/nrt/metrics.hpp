// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace nrt {

// 10 log10(1 / MSE) for [0,1] images, capped at 99 dB for identical inputs.
double psnr(const std::vector<double>& a, const std::vector<double>& b);

// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), k1=0.01, k2=0.03,
// L=1, valid windows only, averaged over windows and channels.
double ssim(const std::vector<double>& a, const std::vector<double>& b, int height, int width,
            int channels);

}  // namespace nrt
