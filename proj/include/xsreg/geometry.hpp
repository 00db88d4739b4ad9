// Affine parameterization and differentiable warping.
//
// Coordinate convention (used everywhere): normalized coordinates span
// [-1,1] inclusive with pixel centers at the endpoints (align-corners).
// A sampling grid stores, per output pixel, the normalized source
// coordinate (x, y). Out-of-bounds samples read as 0, the mid-gray of
// the [-1,1] intensity range.
#pragma once

#include <array>
#include <cmath>

#include "xsreg/autodiff.hpp"
#include "xsreg/common.hpp"

namespace xsreg {

// Six reals, row-major 2x3 matrix [[a,b,tx],[c,d,ty]] acting on normalized
// homogeneous coordinates (x, y, 1).
struct AffineParams {
  std::array<float, 6> t{1.f, 0.f, 0.f, 0.f, 1.f, 0.f};

  static AffineParams identity() { return {}; }
  static AffineParams translation(float tx, float ty) {
    return {{1.f, 0.f, tx, 0.f, 1.f, ty}};
  }
  bool finite() const {
    for (float v : t)
      if (!std::isfinite(v)) return false;
    return true;
  }
  // Maps a normalized point through the matrix.
  std::array<float, 2> apply(float x, float y) const {
    return {t[0] * x + t[1] * y + t[2], t[3] * x + t[4] * y + t[5]};
  }
};

struct SamplingGrid {
  int h = 0, w = 0;
  std::vector<float> g;  // (h, w, 2): x then y per pixel

  float& x(int i, int j) { return g[(static_cast<size_t>(i) * w + j) * 2]; }
  float& y(int i, int j) { return g[(static_cast<size_t>(i) * w + j) * 2 + 1]; }
  float x(int i, int j) const { return g[(static_cast<size_t>(i) * w + j) * 2]; }
  float y(int i, int j) const {
    return g[(static_cast<size_t>(i) * w + j) * 2 + 1];
  }
};

inline float norm_coord(int idx, int n) {
  return n > 1 ? 2.f * idx / (n - 1) - 1.f : 0.f;
}

inline SamplingGrid theta_to_grid(const AffineParams& theta, int height,
                                  int width) {
  if (height < 2 || width < 2)
    throw std::invalid_argument("theta_to_grid: need height, width >= 2");
  if (!theta.finite())
    throw std::invalid_argument("theta_to_grid: non-finite theta");
  SamplingGrid grid;
  grid.h = height;
  grid.w = width;
  grid.g.resize(static_cast<size_t>(height) * width * 2);
  for (int i = 0; i < height; ++i) {
    float yn = norm_coord(i, height);
    for (int j = 0; j < width; ++j) {
      float xn = norm_coord(j, width);
      auto p = theta.apply(xn, yn);
      grid.x(i, j) = p[0];
      grid.y(i, j) = p[1];
    }
  }
  return grid;
}

// compose_affine(a, b): warping an image by b and then by a is equivalent
// to a single warp by the result (sampling composes right-to-left, so the
// homogeneous matrices multiply as B·A).
inline AffineParams compose_affine(const AffineParams& a,
                                   const AffineParams& b) {
  if (!a.finite() || !b.finite())
    throw std::invalid_argument("compose_affine: non-finite input");
  const auto& A = a.t;
  const auto& B = b.t;
  AffineParams r;
  r.t[0] = B[0] * A[0] + B[1] * A[3];
  r.t[1] = B[0] * A[1] + B[1] * A[4];
  r.t[2] = B[0] * A[2] + B[1] * A[5] + B[2];
  r.t[3] = B[3] * A[0] + B[4] * A[3];
  r.t[4] = B[3] * A[1] + B[4] * A[4];
  r.t[5] = B[3] * A[2] + B[4] * A[5] + B[5];
  return r;
}

inline AffineParams invert_affine(const AffineParams& theta) {
  const auto& t = theta.t;
  float det = t[0] * t[4] - t[1] * t[3];
  if (std::fabs(det) <= 1e-8f)
    throw NumericError("invert_affine: singular linear part");
  float inv = 1.f / det;
  AffineParams r;
  r.t[0] = t[4] * inv;
  r.t[1] = -t[1] * inv;
  r.t[3] = -t[3] * inv;
  r.t[4] = t[0] * inv;
  r.t[2] = -(r.t[0] * t[2] + r.t[1] * t[5]);
  r.t[5] = -(r.t[3] * t[2] + r.t[4] * t[5]);
  return r;
}

// Bilinear resampling at grid coordinates; zero padding outside the frame.
inline Image warp(const Image& image, const SamplingGrid& grid) {
  if (grid.h < 1 || grid.w < 1 || image.c < 1)
    throw std::invalid_argument("warp: empty input");
  const int H = image.h, W = image.w;
  Image out(image.c, grid.h, grid.w);
  for (int i = 0; i < grid.h; ++i)
    for (int j = 0; j < grid.w; ++j) {
      float px = (grid.x(i, j) + 1.f) * 0.5f * (W - 1);
      float py = (grid.y(i, j) + 1.f) * 0.5f * (H - 1);
      int x0 = static_cast<int>(std::floor(px));
      int y0 = static_cast<int>(std::floor(py));
      float fx = px - x0, fy = py - y0;
      for (int c = 0; c < image.c; ++c) {
        float acc = 0.f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
            float wgt = (dx ? fx : 1.f - fx) * (dy ? fy : 1.f - fy);
            acc += wgt * image.at(c, yy, xx);
          }
        out.at(c, i, j) = acc;
      }
    }
  return out;
}

inline Image warp_affine(const Image& image, const AffineParams& theta) {
  return warp(image, theta_to_grid(theta, image.h, image.w));
}

// Mean displacement, in pixels of a height x width frame, between the two
// transforms' images of the four frame corners.
inline float corner_error_px(const AffineParams& a, const AffineParams& b,
                             int height, int width) {
  const float cs[4][2] = {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
  float acc = 0;
  for (auto& c : cs) {
    auto pa = a.apply(c[0], c[1]);
    auto pb = b.apply(c[0], c[1]);
    float dx = (pa[0] - pb[0]) * 0.5f * (width - 1);
    float dy = (pa[1] - pb[1]) * 0.5f * (height - 1);
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc / 4.f;
}

// ---------------------------------------------------------------------------
// Differentiable versions for the training graph.

namespace ad_ops {

// theta {6} -> grid {H, W, 2}; affine (hence linear) in theta.
inline ad::Var theta_to_grid(const ad::Var& theta, int height, int width) {
  if (theta->numel() != 6)
    throw std::invalid_argument("theta_to_grid: theta must have 6 entries");
  if (height < 2 || width < 2)
    throw std::invalid_argument("theta_to_grid: need height, width >= 2");
  for (float v : theta->v)
    if (!std::isfinite(v))
      throw std::invalid_argument("theta_to_grid: non-finite theta");
  auto out = ad::detail::make_op(
      {height, width, 2}, {theta}, [theta, height, width](ad::Node& n) {
        for (int i = 0; i < height; ++i) {
          float yn = norm_coord(i, height);
          for (int j = 0; j < width; ++j) {
            float xn = norm_coord(j, width);
            const float* gp = n.g.data() + (static_cast<size_t>(i) * width + j) * 2;
            theta->g[0] += gp[0] * xn;
            theta->g[1] += gp[0] * yn;
            theta->g[2] += gp[0];
            theta->g[3] += gp[1] * xn;
            theta->g[4] += gp[1] * yn;
            theta->g[5] += gp[1];
          }
        }
      });
  const float* t = theta->v.data();
  for (int i = 0; i < height; ++i) {
    float yn = norm_coord(i, height);
    for (int j = 0; j < width; ++j) {
      float xn = norm_coord(j, width);
      float* gp = out->v.data() + (static_cast<size_t>(i) * width + j) * 2;
      gp[0] = t[0] * xn + t[1] * yn + t[2];
      gp[1] = t[3] * xn + t[4] * yn + t[5];
    }
  }
  return out;
}

// image {C,H,W}, grid {Ho,Wo,2} -> {C,Ho,Wo}. Differentiable in both.
inline ad::Var grid_sample(const ad::Var& image, const ad::Var& grid) {
  if (image->shape.size() != 3 || grid->shape.size() != 3 ||
      grid->shape[2] != 2)
    throw std::invalid_argument("grid_sample: bad shapes");
  const int C = image->shape[0], H = image->shape[1], W = image->shape[2];
  const int Ho = grid->shape[0], Wo = grid->shape[1];
  auto out = ad::detail::make_op(
      {C, Ho, Wo}, {image, grid}, [image, grid, C, H, W, Ho, Wo](ad::Node& n) {
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            const float* gp =
                grid->v.data() + (static_cast<size_t>(i) * Wo + j) * 2;
            float px = (gp[0] + 1.f) * 0.5f * (W - 1);
            float py = (gp[1] + 1.f) * 0.5f * (H - 1);
            int x0 = static_cast<int>(std::floor(px));
            int y0 = static_cast<int>(std::floor(py));
            float fx = px - x0, fy = py - y0;
            float gx = 0.f, gy = 0.f;
            for (int c = 0; c < C; ++c) {
              float go = n.g[(static_cast<size_t>(c) * Ho + i) * Wo + j];
              if (go == 0.f && !grid->requires_grad) continue;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  int xx = x0 + dx, yy = y0 + dy;
                  if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                  float wx = dx ? fx : 1.f - fx;
                  float wy = dy ? fy : 1.f - fy;
                  float val = image->v[(static_cast<size_t>(c) * H + yy) * W + xx];
                  if (image->requires_grad)
                    image->g[(static_cast<size_t>(c) * H + yy) * W + xx] +=
                        go * wx * wy;
                  gx += go * (dx ? 1.f : -1.f) * wy * val;
                  gy += go * (dy ? 1.f : -1.f) * wx * val;
                }
            }
            if (grid->requires_grad) {
              grid->g[(static_cast<size_t>(i) * Wo + j) * 2] +=
                  gx * 0.5f * (W - 1);
              grid->g[(static_cast<size_t>(i) * Wo + j) * 2 + 1] +=
                  gy * 0.5f * (H - 1);
            }
          }
      });
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j) {
      const float* gp = grid->v.data() + (static_cast<size_t>(i) * Wo + j) * 2;
      float px = (gp[0] + 1.f) * 0.5f * (W - 1);
      float py = (gp[1] + 1.f) * 0.5f * (H - 1);
      int x0 = static_cast<int>(std::floor(px));
      int y0 = static_cast<int>(std::floor(py));
      float fx = px - x0, fy = py - y0;
      for (int c = 0; c < C; ++c) {
        float acc = 0.f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
            float wgt = (dx ? fx : 1.f - fx) * (dy ? fy : 1.f - fy);
            acc += wgt * image->v[(static_cast<size_t>(c) * H + yy) * W + xx];
          }
        out->v[(static_cast<size_t>(c) * Ho + i) * Wo + j] = acc;
      }
    }
  return out;
}

inline ad::Var warp(const ad::Var& image, const ad::Var& theta) {
  return grid_sample(image,
                     theta_to_grid(theta, image->shape[1], image->shape[2]));
}

}  // namespace ad_ops

}  // namespace xsreg
