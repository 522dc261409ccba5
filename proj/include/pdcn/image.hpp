#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pdcn/tensor.hpp"

namespace pdcn {

/// Images are (height, width, 3) float tensors holding raw 0..255 intensities.
using Image = Tensor;

namespace image_detail {

inline void skip_ws_and_comments(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
}

inline std::size_t read_uint(const std::string& buf, std::size_t& pos, const std::string& path) {
  skip_ws_and_comments(buf, pos);
  std::size_t start = pos;
  std::size_t v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    if (v > (1u << 24)) throw ImageError(path + ": header value out of range");
    ++pos;
  }
  if (pos == start) throw ImageError(path + ": malformed PPM header");
  return v;
}

}  // namespace image_detail

/// Decodes a binary (P6) PPM with maxval <= 255.
inline Image decode_ppm(const std::string& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.compare(1, 3, "PNG") == 0)
      throw ImageError(path + ": PNG input is not supported by this build; convert to binary PPM (P6)");
    throw ImageError(path + ": not a binary PPM (P6) file");
  }
  std::size_t pos = 2;
  const std::size_t w = image_detail::read_uint(bytes, pos, path);
  const std::size_t h = image_detail::read_uint(bytes, pos, path);
  const std::size_t maxval = image_detail::read_uint(bytes, pos, path);
  if (w < 1 || h < 1) throw ImageError(path + ": empty image");
  if (maxval < 1 || maxval > 255) throw ImageError(path + ": only 8-bit PPM is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ImageError(path + ": malformed PPM header");
  ++pos;
  const std::size_t n = w * h * 3;
  if (bytes.size() - pos < n) throw ImageError(path + ": truncated pixel data");
  Image img(Shape(std::vector<std::size_t>{h, w, 3}));
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<unsigned char>(bytes[pos + i]);
    img[i] = maxval == 255 ? static_cast<float>(v) : static_cast<float>(v * scale);
  }
  return img;
}

inline Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(path.string() + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes, path.string());
}

/// Rounds to the nearest integer and clamps to 0..255.
inline std::string encode_ppm(const Image& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw ImageError("encode_ppm expects an (H, W, 3) image");
  std::string out = "P6\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (float v : img.values()) {
    const long r = std::lround(std::clamp(v, 0.0f, 255.0f));
    out.push_back(static_cast<char>(static_cast<unsigned char>(r)));
  }
  return out;
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError(path.string() + ": cannot write");
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Bilinear sample at fractional (y, x); coordinates are clamped to the image
/// (nearest-edge fill). Interpolates by successive lerps so a constant field
/// stays exactly constant.
inline void sample_bilinear(const Image& img, double y, double x, float* out) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const float fy = static_cast<float>(y - static_cast<double>(y0));
  const float fx = static_cast<float>(x - static_cast<double>(x0));
  const float* p00 = img.raw() + (y0 * w + x0) * c;
  const float* p01 = img.raw() + (y0 * w + x1) * c;
  const float* p10 = img.raw() + (y1 * w + x0) * c;
  const float* p11 = img.raw() + (y1 * w + x1) * c;
  for (std::size_t k = 0; k < c; ++k) {
    const float top = p00[k] + fx * (p01[k] - p00[k]);
    const float bottom = p10[k] + fx * (p11[k] - p10[k]);
    out[k] = top + fy * (bottom - top);
  }
}

/// Corner-aligned bilinear resize: output corners sample input corners exactly.
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Image out(Shape(std::vector<std::size_t>{out_h, out_w, c}));
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double y = out_h > 1 ? static_cast<double>(oy) * static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double x =
          out_w > 1 ? static_cast<double>(ox) * static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
      sample_bilinear(img, y, x, out.raw() + (oy * out_w + ox) * c);
    }
  }
  return out;
}

/// Axis-aligned pixel rectangle [x0, x1) x [y0, y1).
struct PixelBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Clamps a fractional (x, y, width, height) box to the frame; throws
/// CropError when less than one pixel remains.
inline PixelBox clamp_box(double x, double y, double bw, double bh, std::size_t frame_w, std::size_t frame_h) {
  auto clampd = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  const double fx0 = clampd(std::floor(x), static_cast<double>(frame_w));
  const double fy0 = clampd(std::floor(y), static_cast<double>(frame_h));
  const double fx1 = clampd(std::ceil(x + bw), static_cast<double>(frame_w));
  const double fy1 = clampd(std::ceil(y + bh), static_cast<double>(frame_h));
  if (!(fx1 - fx0 >= 1.0) || !(fy1 - fy0 >= 1.0)) throw CropError("bounding box is empty after clamping to the frame");
  return {static_cast<std::size_t>(fx0), static_cast<std::size_t>(fy0), static_cast<std::size_t>(fx1),
          static_cast<std::size_t>(fy1)};
}

inline Image crop(const Image& frame, const PixelBox& box) {
  const std::size_t w = frame.dim(1), c = frame.dim(2);
  const std::size_t ch = box.y1 - box.y0, cw = box.x1 - box.x0;
  Image out(Shape(std::vector<std::size_t>{ch, cw, c}));
  for (std::size_t y = 0; y < ch; ++y) {
    const float* src = frame.raw() + ((box.y0 + y) * w + box.x0) * c;
    std::copy(src, src + cw * c, out.raw() + y * cw * c);
  }
  return out;
}

}  // namespace pdcn
