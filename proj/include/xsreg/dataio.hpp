// Pair ingestion, manifest parsing, the synthetic-misalignment benchmark
// generator and the robustness perturbations.
#pragma once

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xsreg/common.hpp"
#include "xsreg/geometry.hpp"
#include "xsreg/imageproc.hpp"

namespace xsreg {

enum class Lighting { hard, low, none };
enum class Split { train, test };

struct PairRecord {
  std::string pair_id;
  std::string visible_path;
  std::string thermal_path;
  std::string subject_id;
  Lighting lighting = Lighting::hard;
  Split split = Split::train;
};

struct PairManifest {
  std::vector<PairRecord> records;
};

inline Lighting parse_lighting(const std::string& s) {
  if (s.empty() || s == "hard") return Lighting::hard;
  if (s == "low") return Lighting::low;
  if (s == "none") return Lighting::none;
  throw DataError("manifest: unknown lighting '" + s + "'");
}

inline const char* lighting_name(Lighting l) {
  switch (l) {
    case Lighting::hard: return "hard";
    case Lighting::low: return "low";
    default: return "none";
  }
}

namespace detail_csv {
inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' '))
      cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}
}  // namespace detail_csv

// CSV manifest with header row:
// pair_id,visible_path,thermal_path,subject_id,lighting,split
inline PairManifest load_manifest(const std::filesystem::path& path,
                                  bool check_files = true) {
  std::ifstream f(path);
  if (!f) throw DataError("load_manifest: cannot open " + path.string());
  PairManifest m;
  std::string line;
  if (!std::getline(f, line)) return m;  // empty manifest is legal
  auto header = detail_csv::split_row(line);
  auto col = [&](const std::string& name) -> int {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  int c_id = col("pair_id"), c_vis = col("visible_path"),
      c_thr = col("thermal_path"), c_sub = col("subject_id"),
      c_light = col("lighting"), c_split = col("split");
  if (c_id < 0 || c_vis < 0 || c_thr < 0)
    throw DataError("load_manifest: missing required columns in " +
                    path.string());
  std::set<std::string> seen;
  std::vector<std::string> problems;
  auto base = path.parent_path();
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = detail_csv::split_row(line);
    auto get = [&](int c) -> std::string {
      return (c >= 0 && c < static_cast<int>(cells.size())) ? cells[c] : "";
    };
    PairRecord r;
    r.pair_id = get(c_id);
    r.visible_path = get(c_vis);
    r.thermal_path = get(c_thr);
    r.subject_id = get(c_sub);
    r.lighting = parse_lighting(get(c_light));
    r.split = get(c_split) == "test" ? Split::test : Split::train;
    if (!seen.insert(r.pair_id).second)
      problems.push_back("duplicate pair_id '" + r.pair_id + "'");
    for (auto* p : {&r.visible_path, &r.thermal_path}) {
      std::filesystem::path fp(*p);
      if (fp.is_relative()) fp = base / fp;
      *p = fp.string();
      if (check_files && !std::filesystem::exists(fp))
        problems.push_back("missing file '" + fp.string() + "' (pair '" +
                           r.pair_id + "')");
    }
    m.records.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string msg = "load_manifest: invalid manifest " + path.string() + ":";
    for (auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Image file I/O (8-bit rasters via OpenCV), normalized to [-1,1].

inline Image read_image(const std::string& path, int target_size,
                        int channels = 3) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("read_image: cannot read " + path);
  cv::Mat img;
  if (raw.channels() == 4)
    cv::cvtColor(raw, img, cv::COLOR_BGRA2BGR);
  else
    img = raw;
  if (target_size > 0 && (img.rows != target_size || img.cols != target_size))
    cv::resize(img, img, cv::Size(target_size, target_size), 0, 0,
               cv::INTER_AREA);
  cv::Mat f;
  img.convertTo(f, CV_32F, 2.0 / 255.0, -1.0);
  Image out(channels, f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) {
      if (f.channels() == 1) {
        for (int c = 0; c < channels; ++c)
          out.at(c, y, x) = f.at<float>(y, x);
      } else {
        cv::Vec3f px = f.at<cv::Vec3f>(y, x);
        if (channels == 1)
          out.at(0, y, x) =
              0.114f * px[0] + 0.587f * px[1] + 0.299f * px[2];  // BGR order
        else
          for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[2 - c];  // to RGB
      }
    }
  return out;
}

// Writes a [-1,1] image as an 8-bit PNG (lossless).
inline void write_image(const std::string& path, const Image& img) {
  cv::Mat m;
  if (img.c == 1) {
    m.create(img.h, img.w, CV_8UC1);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        m.at<uint8_t>(y, x) = static_cast<uint8_t>(
            std::clamp((img.at(0, y, x) + 1.f) * 127.5f, 0.f, 255.f));
  } else {
    m.create(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        cv::Vec3b& px = m.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c)
          px[2 - c] = static_cast<uint8_t>(
              std::clamp((img.at(c, y, x) + 1.f) * 127.5f, 0.f, 255.f));
      }
  }
  if (!cv::imwrite(path, m)) throw DataError("write_image: cannot write " + path);
}

inline std::pair<Image, Image> load_pair(const PairRecord& rec,
                                         int image_size = 256) {
  Image vis = read_image(rec.visible_path, image_size, 3);
  Image thr = read_image(rec.thermal_path, image_size, 3);
  return {vis, thr};
}

// ---------------------------------------------------------------------------
// Phantom generation: structured synthetic images (smooth gradients +
// blobs + shapes + optional thin bright curves) so tests and the synthetic
// benchmark need no external data.

struct PhantomOptions {
  int blobs = 6;
  int rects = 2;
  bool thin_curves = false;
  float blur_sigma = 2.5f;
};

inline Image make_phantom(int height, int width, uint64_t seed,
                          PhantomOptions opt = {}) {
  auto rng = seeded_rng(seed, 101);
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  Image img(1, height, width);
  float gx = (u01(rng) - 0.5f), gy = (u01(rng) - 0.5f);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img.at(0, y, x) = gx * (2.f * x / width - 1.f) + gy * (2.f * y / height - 1.f);
  for (int b = 0; b < opt.blobs; ++b) {
    float cx = u01(rng) * width, cy = u01(rng) * height;
    float sx = (0.08f + 0.17f * u01(rng)) * width;
    float sy = (0.08f + 0.17f * u01(rng)) * height;
    float amp = (u01(rng) < 0.5f ? -1.f : 1.f) * (0.4f + 0.6f * u01(rng));
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        float dx = (x - cx) / sx, dy = (y - cy) / sy;
        img.at(0, y, x) += amp * std::exp(-0.5f * (dx * dx + dy * dy));
      }
  }
  for (int r = 0; r < opt.rects; ++r) {
    int x0 = static_cast<int>(u01(rng) * width * 0.7f);
    int y0 = static_cast<int>(u01(rng) * height * 0.7f);
    int rw = static_cast<int>((0.1f + 0.3f * u01(rng)) * width);
    int rh = static_cast<int>((0.1f + 0.3f * u01(rng)) * height);
    float amp = (u01(rng) < 0.5f ? -0.6f : 0.6f);
    for (int y = y0; y < std::min(height, y0 + rh); ++y)
      for (int x = x0; x < std::min(width, x0 + rw); ++x)
        img.at(0, y, x) += amp;
  }
  img = gaussian_blur(img, opt.blur_sigma);
  if (opt.thin_curves) {
    // Bright sinusoidal curves ~1 px wide, drawn after the blur so they
    // stay thin (vasculature stand-in).
    int curves = 3;
    for (int c = 0; c < curves; ++c) {
      float phase = u01(rng) * 6.28f, freq = 1.f + 2.f * u01(rng);
      float row0 = (0.2f + 0.6f * u01(rng)) * height;
      float amp = 0.12f * height;
      for (int x = 0; x < width; ++x) {
        int y = static_cast<int>(row0 +
                                 amp * std::sin(freq * 6.28f * x / width + phase));
        if (y >= 0 && y < height) img.at(0, y, x) = 1.2f;
      }
    }
  }
  // Squash into [-1,1] with headroom.
  float mx = std::max(std::fabs(img_min(img)), std::fabs(img_max(img)));
  if (mx > 1e-6f)
    for (auto& v : img.data) v = std::tanh(1.2f * v / mx);
  return img;
}

inline Image replicate_channels(const Image& img, int channels) {
  if (img.c == channels) return img;
  Image out(channels, img.h, img.w);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(c, y, x) = img.at(0, y, x);
  return out;
}

// Fake thermal modality: monotone-decreasing nonlinear intensity remap of
// the visible structure, lightly smoothed. Shares geometry, not intensity.
inline Image to_fake_thermal(const Image& visible) {
  Image lum = luminance(visible);
  Image out(1, lum.h, lum.w);
  for (size_t i = 0; i < lum.data.size(); ++i)
    out.data[i] = std::tanh(-1.4f * lum.data[i] + 0.2f);
  return gaussian_blur(out, 1.0f);
}

// ---------------------------------------------------------------------------
// Synthetic misalignment

struct ThetaRange {
  float rot_deg = 10.f;
  float scale = 0.15f;
  float trans = 0.2f;  // bound on |tx|,|ty| in normalized units
  float shear = 0.f;
};

struct SyntheticPair {
  Image fixed;          // visible, aligned frame
  Image moving;         // thermal, misaligned by theta_true
  AffineParams theta_true;
  uint64_t seed = 0;
};

inline AffineParams sample_theta(const ThetaRange& range, std::mt19937& rng) {
  if (range.scale >= 1.f)
    throw std::invalid_argument("sample_theta: degenerate scale range");
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  float rot = range.rot_deg * u(rng) * 3.14159265f / 180.f;
  float sx = 1.f + range.scale * u(rng);
  float sy = 1.f + range.scale * u(rng);
  float sh = range.shear * u(rng);
  float tx = range.trans * u(rng);
  float ty = range.trans * u(rng);
  float cr = std::cos(rot), sr = std::sin(rot);
  AffineParams t;
  // R * diag(sx, sy) * shear(sh), plus translation.
  t.t[0] = cr * sx + (-sr) * sy * 0.f;
  t.t[1] = cr * sx * sh - sr * sy;
  t.t[3] = sr * sx;
  t.t[4] = sr * sx * sh + cr * sy;
  t.t[2] = tx;
  t.t[5] = ty;
  return t;
}

// moving = warp(fake_thermal(aligned), grid(theta_true)); recovering the
// alignment means regressing invert_affine(theta_true).
inline SyntheticPair make_synthetic(const Image& aligned_visible,
                                    const ThetaRange& range, uint64_t seed) {
  auto rng = seeded_rng(seed, 202);
  SyntheticPair p;
  p.seed = seed;
  p.fixed = aligned_visible;
  p.theta_true = sample_theta(range, rng);
  Image thermal = to_fake_thermal(aligned_visible);
  p.moving = warp_affine(thermal, p.theta_true);
  return p;
}

// ---------------------------------------------------------------------------
// Robustness perturbations

enum class PerturbKind { erase_visible, erase_thermal, vflip };

inline Image perturb(const Image& image, PerturbKind kind, uint64_t seed) {
  Image out = image;
  if (kind == PerturbKind::vflip) {
    for (int c = 0; c < image.c; ++c)
      for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
          out.at(c, y, x) = image.at(c, image.h - 1 - y, x);
    return out;
  }
  auto rng = seeded_rng(seed, 303);
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  float area = 0.10f + 0.20f * u01(rng);          // fraction of frame
  float aspect = 0.5f + 1.5f * u01(rng);
  int rh = std::clamp(
      static_cast<int>(std::sqrt(area * image.h * image.w / aspect)), 1,
      image.h);
  int rw = std::clamp(static_cast<int>(area * image.h * image.w / rh), 1,
                      image.w);
  int y0 = static_cast<int>(u01(rng) * (image.h - rh));
  int x0 = static_cast<int>(u01(rng) * (image.w - rw));
  for (int c = 0; c < image.c; ++c)
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) out.at(c, y, x) = 0.f;  // padding value
  return out;
}

}  // namespace xsreg
