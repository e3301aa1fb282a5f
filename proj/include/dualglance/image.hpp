// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dualglance/core.hpp"
#include "dualglance/tensor.hpp"

namespace dualglance {

// Images are CxHxW tensors with values in [0,1].

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

inline double bilinear_sample(const Tensor& image, int channel, double y,
                              double x) {
  const int h = image.dim(1), w = image.dim(2);
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * image.at(channel, y0, x0) +
                     fx * image.at(channel, y0, x1)) +
         fy * ((1 - fx) * image.at(channel, y1, x0) +
               fx * image.at(channel, y1, x1));
}

// Crop the box region and resize it to out_h x out_w with bilinear sampling.
inline Tensor crop_resize(const Tensor& image, const BoundingBox& box,
                          int out_h, int out_w) {
  if (!box.valid()) throw DegenerateBox("crop of a degenerate box");
  const int c = image.dim(0);
  Tensor out({c, out_h, out_w});
  const double sx = box.width() / out_w;
  const double sy = box.height() / out_h;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox)
        out.at(ch, oy, ox) = bilinear_sample(
            image, ch, box.y_min + (oy + 0.5) * sy - 0.5,
            box.x_min + (ox + 0.5) * sx - 0.5);
  return out;
}

inline Tensor hflip(const Tensor& image) {
  Tensor out(image.shape);
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

inline BoundingBox hflip_box(const BoundingBox& b, double image_width) {
  return BoundingBox{image_width - b.x_max, b.y_min, image_width - b.x_min,
                     b.y_max};
}

// ---------------------------------------------------------------------------
// PPM (P6) input images
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.dim(0) != 3) throw DataError("PPM writer expects 3 channels");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(
            std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0 + 0.5);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError(path + ": not a binary PPM");
  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw DataError(path + ": truncated PPM header");
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw DataError(path + ": only maxval 255 supported");
  in.get();  // single whitespace after header
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError(path + ": truncated pixel data");
  Tensor image({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) =
            bytes[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
  return image;
}

// ---------------------------------------------------------------------------
// PNG output (stored-deflate, no external compression dependency)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, size_t n,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const unsigned char* data, size_t n) {
  std::uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::vector<unsigned char> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32_be(out, crc32(body.data(), body.size()));
}

}  // namespace detail

// 8-bit RGB canvas for rendered artifacts.
struct Canvas {
  int width = 0, height = 0;
  std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel

  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}

  void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }

  void fill_rect(int x0, int y0, int x1, int y1, unsigned char r,
                 unsigned char g, unsigned char b) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, r, g, b);
  }

  void stroke_rect(int x0, int y0, int x1, int y1, unsigned char r,
                   unsigned char g, unsigned char b, int thickness = 1) {
    for (int t = 0; t < thickness; ++t) {
      for (int x = x0; x <= x1; ++x) {
        set(x, y0 + t, r, g, b);
        set(x, y1 - t, r, g, b);
      }
      for (int y = y0; y <= y1; ++y) {
        set(x0 + t, y, r, g, b);
        set(x1 - t, y, r, g, b);
      }
    }
  }
};

// Nearest-neighbor blow-up of a [0,1] image tensor onto a canvas.
inline Canvas canvas_from_image(const Tensor& image, int scale) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Canvas canvas(w * scale, h * scale);
  for (int y = 0; y < h * scale; ++y)
    for (int x = 0; x < w * scale; ++x) {
      const int sy = y / scale, sx = x / scale;
      auto channel = [&](int ch) {
        const int src = c == 3 ? ch : 0;
        return static_cast<unsigned char>(
            std::clamp(image.at(src, sy, sx), 0.0, 1.0) * 255.0 + 0.5);
      };
      canvas.set(x, y, channel(0), channel(1), channel(2));
    }
  return canvas;
}

// Writes an RGB PNG. Deflate uses stored blocks only, so the file is larger
// than a compressed one but needs no zlib. Metadata pairs become tEXt
// chunks (config hash + version tagging for every artifact).
inline void write_png(const std::string& path, const Canvas& canvas,
                      const std::vector<std::pair<std::string, std::string>>&
                          metadata = {}) {
  using namespace detail;
  std::vector<unsigned char> file = {137, 80, 78, 71, 13, 10, 26, 10};

  std::vector<unsigned char> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  png_chunk(file, "IHDR", ihdr);

  for (const auto& [key, text] : metadata) {
    std::vector<unsigned char> payload(key.begin(), key.end());
    payload.push_back(0);
    payload.insert(payload.end(), text.begin(), text.end());
    png_chunk(file, "tEXt", payload);
  }

  // Raw scanlines, each preceded by filter byte 0.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(canvas.height) * (1 + 3 * canvas.width));
  for (int y = 0; y < canvas.height; ++y) {
    raw.push_back(0);
    const size_t off = static_cast<size_t>(y) * canvas.width * 3;
    raw.insert(raw.end(), canvas.rgb.begin() + static_cast<std::ptrdiff_t>(off),
               canvas.rgb.begin() + static_cast<std::ptrdiff_t>(off) +
                   3 * canvas.width);
  }

  std::vector<unsigned char> idat = {0x78, 0x01};  // zlib header
  size_t pos = 0;
  while (true) {
    const size_t chunk = std::min<size_t>(raw.size() - pos, 65535);
    const bool final = pos + chunk == raw.size();
    idat.push_back(final ? 1 : 0);
    idat.push_back(static_cast<unsigned char>(chunk & 0xFF));
    idat.push_back(static_cast<unsigned char>(chunk >> 8));
    idat.push_back(static_cast<unsigned char>(~chunk & 0xFF));
    idat.push_back(static_cast<unsigned char>((~chunk >> 8) & 0xFF));
    idat.insert(idat.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
                raw.begin() + static_cast<std::ptrdiff_t>(pos + chunk));
    pos += chunk;
    if (final) break;
  }
  put_u32_be(idat, adler32(raw.data(), raw.size()));
  png_chunk(file, "IDAT", idat);
  png_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(file.data()),
            static_cast<std::streamsize>(file.size()));
}

// Dark-blue to yellow ramp for heatmaps, v in [0,1].
inline std::array<unsigned char, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  static const double stops[5][3] = {{13, 8, 135},
                                     {126, 3, 168},
                                     {204, 71, 120},
                                     {248, 149, 64},
                                     {240, 249, 33}};
  const double t = v * 4.0;
  const int i = std::min(static_cast<int>(t), 3);
  const double f = t - i;
  std::array<unsigned char, 3> c{};
  for (int ch = 0; ch < 3; ++ch)
    c[static_cast<size_t>(ch)] = static_cast<unsigned char>(
        stops[i][ch] + f * (stops[i + 1][ch] - stops[i][ch]) + 0.5);
  return c;
}

}  // namespace dualglance
