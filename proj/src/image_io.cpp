// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace nrt {

namespace {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void push_u32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

void write_chunk(std::ofstream& os, const char type[4],
                 const std::vector<unsigned char>& payload) {
  std::vector<unsigned char> head;
  push_u32(head, static_cast<uint32_t>(payload.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!payload.empty())
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
  std::vector<unsigned char> tail;
  push_u32(tail, static_cast<uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png(const std::string& path, int height, int width,
               const std::vector<double>& rgb01) {
  if (height <= 0 || width <= 0 ||
      rgb01.size() != static_cast<size_t>(height) * width * 3)
    throw IoError("write_png: buffer does not match " + std::to_string(height) + "x" +
                  std::to_string(width) + "x3");

  // filter 0 scanlines
  std::vector<unsigned char> raw(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  size_t p = 0, src = 0;
  for (int y = 0; y < height; ++y) {
    raw[p++] = 0;
    for (int i = 0; i < width * 3; ++i) {
      const double v = std::clamp(rgb01[src++], 0.0, 1.0);
      raw[p++] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("write_png: zlib compression failed");
  idat.resize(bound);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_png: cannot open " + path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  push_u32(ihdr, static_cast<uint32_t>(width));
  push_u32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // filtering
  ihdr.push_back(0);   // no interlace
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", idat);
  write_chunk(os, "IEND", {});
  if (!os) throw IoError("write_png: write failed for " + path);
}

void write_float_image(const std::string& path, int height, int width, int channels,
                       const std::vector<double>& data) {
  if (data.size() != static_cast<size_t>(height) * width * channels)
    throw IoError("write_float_image: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_float_image: cannot open " + path);
  nlohmann::json j{{"h", height}, {"w", width}, {"c", channels}, {"dtype", "f64"}};
  os << j.dump() << '\n';
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw IoError("write_float_image: write failed for " + path);
}

FloatImage read_float_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_float_image: cannot open " + path);
  std::string header;
  std::getline(is, header);
  nlohmann::json j = nlohmann::json::parse(header);
  FloatImage img;
  img.height = j.at("h").get<int>();
  img.width = j.at("w").get<int>();
  img.channels = j.at("c").get<int>();
  if (j.at("dtype").get<std::string>() != "f64")
    throw IoError("read_float_image: unsupported dtype");
  img.data.resize(static_cast<size_t>(img.height) * img.width * img.channels);
  is.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(double)));
  if (!is) throw IoError("read_float_image: truncated payload in " + path);
  return img;
}

}  // namespace nrt
