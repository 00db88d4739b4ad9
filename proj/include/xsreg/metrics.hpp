// Registration quality metrics: SSIM/NCC on morphological edge maps,
// histogram mutual information, perceptual distance, PSNR, and the
// red/blue difference-map overlay. All plain image math, no autodiff.
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include "json.hpp"
#include "xsreg/dataio.hpp"
#include "xsreg/imageproc.hpp"
#include "xsreg/losses.hpp"

namespace xsreg {
namespace metrics {

inline void check_dims(const Image& a, const Image& b, const char* who) {
  if (a.c != b.c || a.h != b.h || a.w != b.w)
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

// Classic single-scale SSIM: 11x11 Gaussian window (sigma 1.5), stabilizers
// C1=(0.01 L)^2, C2=(0.03 L)^2 with L the value-range span (2 for [-1,1]).
inline double ssim(const Image& a, const Image& b, float span = 2.f) {
  check_dims(a, b, "ssim");
  if (a.c != 1) throw std::invalid_argument("ssim: single-channel only");
  const double c1 = 0.01 * span * 0.01 * span;
  const double c2 = 0.03 * span * 0.03 * span;

  auto blur = [](const Image& x) { return gaussian_blur(x, 1.5f); };
  Image mu_a = blur(a), mu_b = blur(b);
  Image aa = a, bb = b, ab = a;
  for (size_t i = 0; i < aa.data.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  Image s_aa = blur(aa), s_bb = blur(bb), s_ab = blur(ab);

  double acc = 0;
  for (size_t i = 0; i < aa.data.size(); ++i) {
    double ma = mu_a.data[i], mb = mu_b.data[i];
    double va = s_aa.data[i] - ma * ma;
    double vb = s_bb.data[i] - mb * mb;
    double cab = s_ab.data[i] - ma * mb;
    acc += (2 * ma * mb + c1) * (2 * cab + c2) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(aa.data.size());
}

// Zero-mean normalized cross-correlation over all pixels.
inline double ncc(const Image& a, const Image& b) {
  check_dims(a, b, "ncc");
  size_t n = a.data.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.data[i];
    mb += b.data[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double va = 0, vb = 0, cov = 0;
  for (size_t i = 0; i < n; ++i) {
    double da = a.data[i] - ma, db = b.data[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  if (va <= 0 || vb <= 0)
    throw NumericError("ncc: undefined statistic (zero-variance input)");
  return cov / std::sqrt(va * vb);
}

// MI of the joint histogram in nats; each image is binned over its own
// min..max range (a constant image carries no information -> MI 0).
inline double mutual_information(const Image& a, const Image& b,
                                 int bins = 32) {
  check_dims(a, b, "mutual_information");
  if (bins < 2) throw std::invalid_argument("mutual_information: bins >= 2");
  auto bin_of = [bins](float v, float lo, float hi) {
    if (hi <= lo) return 0;
    int k = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::min(std::max(k, 0), bins - 1);
  };
  float alo = img_min(a), ahi = img_max(a);
  float blo = img_min(b), bhi = img_max(b);
  size_t n = a.data.size();
  std::vector<double> joint(static_cast<size_t>(bins) * bins, 0.0);
  for (size_t i = 0; i < n; ++i)
    joint[static_cast<size_t>(bin_of(a.data[i], alo, ahi)) * bins +
          bin_of(b.data[i], blo, bhi)] += 1.0;
  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      joint[static_cast<size_t>(i) * bins + j] /= static_cast<double>(n);
      pa[i] += joint[static_cast<size_t>(i) * bins + j];
      pb[j] += joint[static_cast<size_t>(i) * bins + j];
    }
  double mi = 0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      double p = joint[static_cast<size_t>(i) * bins + j];
      if (p > 0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  return std::max(mi, 0.0);
}

inline double entropy(const Image& a, int bins = 32) {
  return mutual_information(a, a, bins);
}

// SSIM/NCC over morphological gradients of both inputs (edge maps).
inline std::pair<double, double> edge_metrics(const Image& visible,
                                              const Image& thermal) {
  check_dims(visible, thermal, "edge_metrics");
  Image ev = morph_gradient(visible), et = morph_gradient(thermal);
  return {ssim(ev, et), ncc(ev, et)};
}

inline double psnr(const Image& a, const Image& b, float span = 2.f) {
  check_dims(a, b, "psnr");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(span * static_cast<double>(span) / mse);
}

inline double lpips(const Image& a, const Image& b,
                    const losses::FeatureExtractor& feat) {
  check_dims(a, b, "lpips");
  Image a3 = a.c == 3 ? a : replicate_channels(a, 3);
  Image b3 = b.c == 3 ? b : replicate_channels(b, 3);
  return feat.distance(ad::from_image(a3), ad::from_image(b3))->v[0];
}

// Red/blue overlay: visible intensity in the red channel, thermal in the
// blue. Each input is min-max normalized to [0,1]; a constant input maps
// to its clamped raw value, so an all-zero thermal leaves pure red.
inline Image difference_map(const Image& visible, const Image& thermal) {
  check_dims(visible, thermal, "difference_map");
  Image lv = luminance(visible), lt = luminance(thermal);
  auto normalize = [](Image& x) {
    float lo = img_min(x), hi = img_max(x);
    for (auto& v : x.data)
      v = hi > lo ? (v - lo) / (hi - lo) : std::min(std::max(v, 0.f), 1.f);
  };
  normalize(lv);
  normalize(lt);
  Image out(3, lv.h, lv.w);
  size_t plane = static_cast<size_t>(lv.h) * lv.w;
  // map display intensities back to the [-1,1] convention of write_image
  for (size_t i = 0; i < plane; ++i) {
    out.data[i] = 2.f * lv.data[i] - 1.f;            // red
    out.data[plane + i] = -1.f;                      // green
    out.data[2 * plane + i] = 2.f * lt.data[i] - 1.f;  // blue
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PairEval {
  std::string pair_id;
  double ssim_edges = 0, ncc_edges = 0, mutual_info = 0;
  std::optional<double> lpips, psnr;
};

struct EvalReport {
  std::vector<PairEval> pairs;

  template <typename F>
  double mean_of(F field) const {
    if (pairs.empty()) return 0;
    double s = 0;
    for (auto& p : pairs) s += field(p);
    return s / static_cast<double>(pairs.size());
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "pair_id,ssim_edges,ncc_edges,mutual_info,lpips,psnr\n";
    auto opt = [](const std::optional<double>& v) {
      return v ? std::to_string(*v) : std::string();
    };
    for (auto& p : pairs)
      f << p.pair_id << ',' << p.ssim_edges << ',' << p.ncc_edges << ','
        << p.mutual_info << ',' << opt(p.lpips) << ',' << opt(p.psnr) << '\n';
  }

  void write_summary_json(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["pairs"] = pairs.size();
    j["ssim_edges"] = mean_of([](const PairEval& p) { return p.ssim_edges; });
    j["ncc_edges"] = mean_of([](const PairEval& p) { return p.ncc_edges; });
    j["mutual_info"] =
        mean_of([](const PairEval& p) { return p.mutual_info; });
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << j.dump(2) << '\n';
  }
};

}  // namespace metrics
}  // namespace xsreg
