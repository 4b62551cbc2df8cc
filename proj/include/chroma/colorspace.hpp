#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "chroma/tensor.hpp"

namespace chroma {

// Interleaved RGB image with unit-interval components.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // r,g,b per pixel, row-major

  static RgbImage blank(int w, int h) {
    RgbImage img;
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
    return img;
  }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
};

// Planar CIELAB image: L in [0,100], a/b in the signed chrominance range.
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<float> L, a, b;

  static LabImage blank(int w, int h) {
    LabImage img;
    img.width = w;
    img.height = h;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    img.L.assign(n, 0.0f);
    img.a.assign(n, 0.0f);
    img.b.assign(n, 0.0f);
    return img;
  }
};

namespace cie {

// sRGB primaries with the D65 white point, 2-degree observer.
inline constexpr double kXn = 0.95047;
inline constexpr double kYn = 1.0;
inline constexpr double kZn = 1.08883;

inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

inline constexpr double kXyzToRgb[3][3] = {
    {3.2404542, -1.5371385, -0.4985314},
    {-0.9692660, 1.8760108, 0.0415560},
    {0.0556434, -0.2040259, 1.0572252},
};

inline constexpr double kDelta = 6.0 / 29.0;
inline constexpr double kDelta3 = kDelta * kDelta * kDelta;

inline double srgb_decode(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double srgb_encode(double c) {
  return c <= 0.0031308 ? 12.92 * c
                        : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  return t > kDelta3 ? std::cbrt(t)
                     : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

inline double lab_f_inv(double ft) {
  return ft > kDelta ? ft * ft * ft
                     : 3.0 * kDelta * kDelta * (ft - 4.0 / 29.0);
}

}  // namespace cie

// One pixel sRGB -> CIELAB. Inputs are clamped to [0,1] first.
inline void srgb_to_lab(double r, double g, double b, double& L, double& A,
                        double& B) {
  using namespace cie;
  r = srgb_decode(std::clamp(r, 0.0, 1.0));
  g = srgb_decode(std::clamp(g, 0.0, 1.0));
  b = srgb_decode(std::clamp(b, 0.0, 1.0));
  const double x = kRgbToXyz[0][0] * r + kRgbToXyz[0][1] * g + kRgbToXyz[0][2] * b;
  const double y = kRgbToXyz[1][0] * r + kRgbToXyz[1][1] * g + kRgbToXyz[1][2] * b;
  const double z = kRgbToXyz[2][0] * r + kRgbToXyz[2][1] * g + kRgbToXyz[2][2] * b;
  const double fx = lab_f(x / kXn);
  const double fy = lab_f(y / kYn);
  const double fz = lab_f(z / kZn);
  L = 116.0 * fy - 16.0;
  A = 500.0 * (fx - fy);
  B = 200.0 * (fy - fz);
}

// One pixel CIELAB -> sRGB, clamped to [0,1] (hard gamut policy).
inline void lab_to_srgb(double L, double A, double B, double& r, double& g,
                        double& b) {
  using namespace cie;
  const double fy = (L + 16.0) / 116.0;
  const double fx = fy + A / 500.0;
  const double fz = fy - B / 200.0;
  const double x = kXn * lab_f_inv(fx);
  const double y = kYn * lab_f_inv(fy);
  const double z = kZn * lab_f_inv(fz);
  r = srgb_encode(kXyzToRgb[0][0] * x + kXyzToRgb[0][1] * y + kXyzToRgb[0][2] * z);
  g = srgb_encode(kXyzToRgb[1][0] * x + kXyzToRgb[1][1] * y + kXyzToRgb[1][2] * z);
  b = srgb_encode(kXyzToRgb[2][0] * x + kXyzToRgb[2][1] * y + kXyzToRgb[2][2] * z);
  r = std::clamp(r, 0.0, 1.0);
  g = std::clamp(g, 0.0, 1.0);
  b = std::clamp(b, 0.0, 1.0);
}

inline LabImage rgb_to_lab(const RgbImage& img) {
  LabImage out = LabImage::blank(img.width, img.height);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    double L, A, B;
    srgb_to_lab(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2],
                L, A, B);
    out.L[i] = static_cast<float>(L);
    out.a[i] = static_cast<float>(A);
    out.b[i] = static_cast<float>(B);
  }
  return out;
}

inline RgbImage lab_to_rgb(const LabImage& img) {
  RgbImage out = RgbImage::blank(img.width, img.height);
  const std::size_t n = out.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    double r, g, b;
    lab_to_srgb(img.L[i], img.a[i], img.b[i], r, g, b);
    out.pixels[3 * i] = static_cast<float>(r);
    out.pixels[3 * i + 1] = static_cast<float>(g);
    out.pixels[3 * i + 2] = static_cast<float>(b);
  }
  return out;
}

// Network-space normalization constants: L/100 maps lightness to [0,1] and
// a,b/110 keep the sRGB gamut inside roughly [-1,1] without clipping.
inline constexpr float kLScale = 100.0f;
inline constexpr float kAbScale = 110.0f;

// Grayscale input plane: the L channel scaled to [0,1], shaped [1,1,H,W].
inline Tensor<float> extract_grayscale(const RgbImage& img) {
  const LabImage lab = rgb_to_lab(img);
  Tensor<float> t({1, 1, img.height, img.width});
  float* d = t.data();
  for (std::size_t i = 0; i < lab.L.size(); ++i) d[i] = lab.L[i] / kLScale;
  return t;
}

// Normalized training planes for one image.
struct NetImagePair {
  Tensor<float> input_L;   // [1,1,H,W], L/100
  Tensor<float> target_a;  // [1,1,H,W], a/110
  Tensor<float> target_b;  // [1,1,H,W], b/110
};

inline NetImagePair lab_to_net(const LabImage& lab) {
  const std::size_t n = lab.L.size();
  NetImagePair pair{Tensor<float>({1, 1, lab.height, lab.width}),
                    Tensor<float>({1, 1, lab.height, lab.width}),
                    Tensor<float>({1, 1, lab.height, lab.width})};
  for (std::size_t i = 0; i < n; ++i) {
    pair.input_L.data()[i] = lab.L[i] / kLScale;
    pair.target_a.data()[i] = lab.a[i] / kAbScale;
    pair.target_b.data()[i] = lab.b[i] / kAbScale;
  }
  return pair;
}

// Denormalizes network-space planes and renders to sRGB. Accepts [1,1,H,W]
// or [H,W]-shaped tensors as long as the three shapes agree.
inline RgbImage assemble(const Tensor<float>& L_norm,
                         const Tensor<float>& a_norm,
                         const Tensor<float>& b_norm) {
  if (L_norm.shape() != a_norm.shape() || L_norm.shape() != b_norm.shape()) {
    throw ShapeError("assemble plane shape mismatch: " +
                     shape_str(L_norm.shape()) + " vs " +
                     shape_str(a_norm.shape()) + " vs " +
                     shape_str(b_norm.shape()));
  }
  const auto& s = L_norm.shape();
  if (s.size() < 2) throw ShapeError("assemble requires spatial planes");
  const int h = static_cast<int>(s[s.size() - 2]);
  const int w = static_cast<int>(s[s.size() - 1]);
  if (h * w != L_norm.size()) {
    throw ShapeError("assemble planes must be single-channel, got " +
                     shape_str(s));
  }
  LabImage lab = LabImage::blank(w, h);
  for (std::int64_t i = 0; i < L_norm.size(); ++i) {
    lab.L[static_cast<std::size_t>(i)] = L_norm.data()[i] * kLScale;
    lab.a[static_cast<std::size_t>(i)] = a_norm.data()[i] * kAbScale;
    lab.b[static_cast<std::size_t>(i)] = b_norm.data()[i] * kAbScale;
  }
  return lab_to_rgb(lab);
}

}  // namespace chroma
