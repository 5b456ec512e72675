// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace nrt {

// 8-bit RGB PNG from [0,1] doubles (row-major h*w*3).
void write_png(const std::string& path, int height, int width,
               const std::vector<double>& rgb01);

// Lossless float dump: one-line JSON header ({"h":..,"w":..,"c":..,
// "dtype":"f64"}) followed by raw little-endian float64 payload.
void write_float_image(const std::string& path, int height, int width, int channels,
                       const std::vector<double>& data);

struct FloatImage {
  int height = 0, width = 0, channels = 0;
  std::vector<double> data;
};
FloatImage read_float_image(const std::string& path);

}  // namespace nrt
