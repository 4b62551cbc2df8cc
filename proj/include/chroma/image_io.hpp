#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/errors.hpp"

namespace chroma {

// Decodes an 8-bit PNG to unit-interval RGB; alpha and palette variants are
// converted, 16-bit files are narrowed.
inline RgbImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  RgbImage out = RgbImage::blank(static_cast<int>(image.width),
                                 static_cast<int>(image.height));
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
  }
  return out;
}

// Encodes unit-interval RGB as an 8-bit PNG. Same pixels in, same bytes out.
inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::uint8_t> buffer(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, img.pixels[i]));
    buffer[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(),
                               0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

inline RgbImage crop(const RgbImage& img, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > img.width ||
      y + h > img.height) {
    throw PreconditionError(
        "crop rectangle (" + std::to_string(x) + "," + std::to_string(y) +
        "," + std::to_string(w) + "," + std::to_string(h) +
        ") outside image " + std::to_string(img.width) + "x" +
        std::to_string(img.height));
  }
  RgbImage out = RgbImage::blank(w, h);
  for (int row = 0; row < h; ++row) {
    const float* src = img.pixels.data() +
                       (static_cast<std::size_t>(y + row) * img.width + x) * 3;
    float* dst = out.pixels.data() + static_cast<std::size_t>(row) * w * 3;
    std::copy(src, src + static_cast<std::size_t>(w) * 3, dst);
  }
  return out;
}

// Bilinear resampling with pixel-center alignment. Constant images stay
// constant; a same-size call is the identity.
inline RgbImage resize_bilinear(const RgbImage& img, int w, int h) {
  if (w <= 0 || h <= 0) throw PreconditionError("resize target must be positive");
  if (w == img.width && h == img.height) return img;
  RgbImage out = RgbImage::blank(w, h);
  const double sx = static_cast<double>(img.width) / w;
  const double sy = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const auto at = [&](int yy, int xx) {
          return static_cast<double>(
              img.pixels[(static_cast<std::size_t>(yy) * img.width + xx) * 3 +
                         c]);
        };
        const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

// Largest centered square, used to shape arbitrary inputs for the network.
inline RgbImage center_crop_square(const RgbImage& img) {
  const int side = std::min(img.width, img.height);
  const int x = (img.width - side) / 2;
  const int y = (img.height - side) / 2;
  if (x == 0 && y == 0 && side == img.width && side == img.height) return img;
  return crop(img, x, y, side, side);
}

}  // namespace chroma
