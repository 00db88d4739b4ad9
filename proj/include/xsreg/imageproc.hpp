// Plain (non-differentiable) image filters shared by metrics, vessels and
// the phantom generator.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "xsreg/common.hpp"

namespace xsreg {

inline std::vector<float> gaussian_kernel1d(float sigma) {
  int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<float> k(2 * r + 1);
  float s = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5f * i * i / (sigma * sigma));
    s += k[i + r];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable Gaussian blur with replicate borders.
inline Image gaussian_blur(const Image& img, float sigma) {
  if (sigma <= 0) return img;
  auto k = gaussian_kernel1d(sigma);
  int r = static_cast<int>(k.size() / 2);
  auto clampi = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  Image tmp(img.c, img.h, img.w), out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * img.at(c, y, clampi(x + i, img.w));
        tmp.at(c, y, x) = acc;
      }
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp.at(c, clampi(y + i, img.h), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

// Grayscale dilation/erosion with a square structuring element and
// replicate borders.
inline Image dilate(const Image& img, int ksize) {
  int r = ksize / 2;
  auto clampi = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  Image out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float best = -1e30f;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            best = std::max(best,
                            img.at(c, clampi(y + dy, img.h), clampi(x + dx, img.w)));
        out.at(c, y, x) = best;
      }
  return out;
}

inline Image erode(const Image& img, int ksize) {
  int r = ksize / 2;
  auto clampi = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  Image out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float best = 1e30f;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            best = std::min(best,
                            img.at(c, clampi(y + dy, img.h), clampi(x + dx, img.w)));
        out.at(c, y, x) = best;
      }
  return out;
}

inline Image opening(const Image& img, int ksize) {
  return dilate(erode(img, ksize), ksize);
}

// Dilation minus erosion with a 3x3 element, on luminance. The standard
// nonlinear edge map used throughout the evaluation.
inline Image morph_gradient(const Image& img) {
  Image lum = luminance(img);
  Image d = dilate(lum, 3), e = erode(lum, 3);
  Image out(1, lum.h, lum.w);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = d.data[i] - e.data[i];
  return out;
}

}  // namespace xsreg
