// xsreg: unsupervised cross-spectral image registration toolkit.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace xsreg {

// Error taxonomy. Config errors mean a bad knob, data errors a bad input
// file, numeric errors a blown-up computation (NaN guard).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense CHW float raster. Values are nominally in [-1,1] once normalized,
// but the container itself is range-agnostic.
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c_, int h_, int w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

  float& at(int ch, int y, int x) {
    return data[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  float at(int ch, int y, int x) const {
    return data[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
  bool finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Rec.601 luminance; single-channel images pass through.
inline Image luminance(const Image& img) {
  if (img.c == 1) return img;
  if (img.c != 3) throw std::invalid_argument("luminance: need 1 or 3 channels");
  Image out(1, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      out.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) +
                        0.114f * img.at(2, y, x);
  return out;
}

inline float img_mean(const Image& img) {
  double s = 0;
  for (float v : img.data) s += v;
  return static_cast<float>(s / static_cast<double>(img.data.size()));
}

inline float img_min(const Image& img) {
  float m = img.data[0];
  for (float v : img.data) m = std::min(m, v);
  return m;
}

inline float img_max(const Image& img) {
  float m = img.data[0];
  for (float v : img.data) m = std::max(m, v);
  return m;
}

// Split-mix style stream derivation so one user seed can feed many
// independent mt19937 consumers.
inline std::mt19937 seeded_rng(uint64_t seed, uint64_t stream = 0) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return std::mt19937(static_cast<uint32_t>(z ^ (z >> 31)));
}

}  // namespace xsreg
