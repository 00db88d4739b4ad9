// Thermal vasculature extraction: edge-preserving (Perona-Malik) diffusion,
// contrast-limited adaptive histogram equalization, and white top-hat
// segmentation, plus the PSNR-based identity comparison between maps.
#pragma once

#include <opencv2/imgproc.hpp>

#include "xsreg/imageproc.hpp"
#include "xsreg/metrics.hpp"

namespace xsreg {

enum class Conductance { exp_, rational };

struct VesselConfig {
  int diffusion_iters = 20;
  float kappa = 30.f;  // edge threshold on the 0..255 scale
  float lambda = 0.2f;
  Conductance conductance = Conductance::exp_;
  float clahe_clip = 2.f;
  int clahe_tiles = 8;
  int tophat_kernel = 11;

  void validate() const {
    if (!(lambda > 0.f && lambda <= 0.25f))
      throw ConfigError("vessels: lambda must lie in (0, 0.25]");
    if (tophat_kernel < 3 || tophat_kernel % 2 == 0)
      throw ConfigError("vessels: tophat_kernel must be odd and >= 3");
    if (diffusion_iters < 0 || kappa <= 0.f || clahe_clip <= 0.f ||
        clahe_tiles < 1)
      throw ConfigError("vessels: nonpositive parameter");
  }
};

namespace vessels {

// Explicit Perona-Malik scheme, 4-neighbor fluxes, zero-flux (reflective)
// boundaries; the symmetric flux form conserves the mean exactly.
inline Image anisotropic_diffusion(const Image& image,
                                   const VesselConfig& cfg) {
  cfg.validate();
  if (image.c != 1)
    throw std::invalid_argument("anisotropic_diffusion: single-channel only");
  // kappa is quoted on 0..255; rescale to the actual input span
  float span = std::max(img_max(image) - img_min(image), 1e-6f);
  float k = cfg.kappa / 255.f * span;
  auto g = [&](float d) {
    float r = d / k;
    return cfg.conductance == Conductance::exp_ ? std::exp(-r * r)
                                                : 1.f / (1.f + r * r);
  };
  Image cur = image, next = image;
  int H = image.h, W = image.w;
  for (int it = 0; it < cfg.diffusion_iters; ++it) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float c = cur.at(0, y, x);
        float dn = (y > 0 ? cur.at(0, y - 1, x) : c) - c;
        float ds = (y + 1 < H ? cur.at(0, y + 1, x) : c) - c;
        float dw = (x > 0 ? cur.at(0, y, x - 1) : c) - c;
        float de = (x + 1 < W ? cur.at(0, y, x + 1) : c) - c;
        next.at(0, y, x) = c + cfg.lambda * (g(dn) * dn + g(ds) * ds +
                                             g(dw) * dw + g(de) * de);
      }
    std::swap(cur, next);
  }
  return cur;
}

// CLAHE over a fixed representable range [lo, hi]; input values are
// clamped into it. Degenerate (constant) images pass through.
inline Image clahe(const Image& image, float clip = 2.f, int tiles = 8,
                   float lo = 0.f, float hi = 1.f) {
  if (image.c != 1) throw std::invalid_argument("clahe: single-channel only");
  if (tiles > image.h || tiles > image.w)
    throw ConfigError("clahe: more tiles than pixels per side");
  if (img_max(image) - img_min(image) < 1e-12f) return image;

  cv::Mat m8(image.h, image.w, CV_8U);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      float v = (image.at(0, y, x) - lo) / (hi - lo);
      m8.at<uint8_t>(y, x) = static_cast<uint8_t>(
          std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
    }
  auto alg = cv::createCLAHE(clip, cv::Size(tiles, tiles));
  cv::Mat out8;
  alg->apply(m8, out8);
  Image out(1, image.h, image.w);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      out.at(0, y, x) = lo + (hi - lo) * out8.at<uint8_t>(y, x) / 255.f;
  return out;
}

// White top-hat: image minus its morphological opening; keeps bright
// structures thinner than the kernel.
inline Image top_hat(const Image& image, int kernel) {
  if (image.c != 1)
    throw std::invalid_argument("top_hat: single-channel only");
  if (kernel < 3 || kernel % 2 == 0)
    throw ConfigError("top_hat: kernel must be odd and >= 3");
  Image opened = opening(image, kernel);
  Image out = image;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::max(image.data[i] - opened.data[i], 0.f);
  return out;
}

// Full extraction pipeline; result normalized to [0,1] (all-zero response
// stays zero).
inline Image vessel_map(const Image& thermal, const VesselConfig& cfg = {}) {
  cfg.validate();
  Image lum = luminance(thermal);
  // work in [0,1]
  float lo = img_min(lum), hi = img_max(lum);
  if (hi > lo)
    for (auto& v : lum.data) v = (v - lo) / (hi - lo);
  else
    for (auto& v : lum.data) v = 0.f;
  Image d = anisotropic_diffusion(lum, cfg);
  Image e = clahe(d, cfg.clahe_clip, cfg.clahe_tiles);
  Image t = top_hat(e, cfg.tophat_kernel);
  float tmin = img_min(t), tmax = img_max(t);
  if (tmax - tmin > 1e-12f)
    for (auto& v : t.data) v = (v - tmin) / (tmax - tmin);
  else
    for (auto& v : t.data) v = 0.f;
  return t;
}

// PSNR between the two vessel maps (maps live in [0,1], so span 1).
inline double identity_similarity(const Image& thermal_a,
                                  const Image& thermal_b,
                                  const VesselConfig& cfg = {}) {
  metrics::check_dims(thermal_a, thermal_b, "identity_similarity");
  return metrics::psnr(vessel_map(thermal_a, cfg), vessel_map(thermal_b, cfg),
                       1.f);
}

}  // namespace vessels
}  // namespace xsreg
