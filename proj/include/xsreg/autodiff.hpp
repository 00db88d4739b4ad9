// Minimal reverse-mode autodiff over dense float tensors. Dynamic graph,
// shared_ptr nodes, Eigen-backed matmul/conv. Shapes are small vectors;
// a scalar is shape {1}.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "xsreg/common.hpp"

namespace xsreg::ad {

using Mat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  std::vector<int> shape;
  std::vector<float> v;
  std::vector<float> g;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backfn;

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.f);
  }
};

inline Var make_leaf(std::vector<int> shape, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->v.assign(n->numel(), 0.f);
  n->requires_grad = requires_grad;
  return n;
}

inline Var from_image(const Image& img, bool requires_grad = false) {
  auto n = make_leaf({img.c, img.h, img.w}, requires_grad);
  n->v = img.data;
  return n;
}

inline Image to_image(const Var& x) {
  if (x->shape.size() != 3) throw std::invalid_argument("to_image: need CHW");
  Image img(x->shape[0], x->shape[1], x->shape[2]);
  img.data = x->v;
  return img;
}

inline Var constant_scalar(float value) {
  auto n = make_leaf({1});
  n->v[0] = value;
  return n;
}

inline Var detach(const Var& x) {
  auto n = make_leaf(x->shape);
  n->v = x->v;
  return n;
}

namespace detail {

inline Var make_op(std::vector<int> shape, std::vector<Var> parents,
                   std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->v.assign(n->numel(), 0.f);
  for (auto& p : parents) n->requires_grad |= p->requires_grad;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backfn = std::move(backfn);
  return n;
}

inline void check_same_shape(const Var& a, const Var& b, const char* who) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

}  // namespace detail

// Backward pass from a scalar loss. Topological order by DFS over parents.
inline void backward(const Var& loss) {
  if (loss->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->g[0] = 1.f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backfn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_op(a->shape, {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i];
    if (b->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) b->g[i] += n.g[i];
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
  return out;
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_op(a->shape, {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i];
    if (b->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) b->g[i] -= n.g[i];
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] - b->v[i];
  return out;
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_op(a->shape, {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i] * b->v[i];
    if (b->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) b->g[i] += n.g[i] * a->v[i];
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] * b->v[i];
  return out;
}

inline Var scale(const Var& a, float s) {
  auto out = detail::make_op(a->shape, {a}, [a, s](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i] * s;
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] * s;
  return out;
}

inline Var add_scalar(const Var& a, float s) {
  auto out = detail::make_op(a->shape, {a}, [a](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i];
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + s;
  return out;
}

// Generic unary elementwise. dfun(v_in, v_out) returns d out / d in.
inline Var unary(const Var& a, float (*fun)(float),
                 float (*dfun)(float, float)) {
  auto out = detail::make_op(a->shape, {a}, [a, dfun](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i)
      a->g[i] += n.g[i] * dfun(a->v[i], n.v[i]);
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = fun(a->v[i]);
  return out;
}

inline Var relu(const Var& a) {
  return unary(
      a, +[](float x) { return x > 0 ? x : 0.f; },
      +[](float x, float) { return x > 0 ? 1.f : 0.f; });
}

inline Var leaky_relu(const Var& a, float slope = 0.2f) {
  auto out = detail::make_op(a->shape, {a}, [a, slope](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i)
      a->g[i] += n.g[i] * (a->v[i] > 0 ? 1.f : slope);
  });
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = a->v[i] > 0 ? a->v[i] : slope * a->v[i];
  return out;
}

inline Var tanh_(const Var& a) {
  return unary(
      a, +[](float x) { return std::tanh(x); },
      +[](float, float y) { return 1.f - y * y; });
}

inline Var sigmoid(const Var& a) {
  return unary(
      a, +[](float x) { return 1.f / (1.f + std::exp(-x)); },
      +[](float, float y) { return y * (1.f - y); });
}

// log(1+exp(x)), numerically stable.
inline Var softplus(const Var& a) {
  return unary(
      a,
      +[](float x) {
        return x > 20.f ? x : (x < -20.f ? std::exp(x) : std::log1p(std::exp(x)));
      },
      +[](float x, float) { return 1.f / (1.f + std::exp(-x)); });
}

inline Var abs_(const Var& a) {
  return unary(
      a, +[](float x) { return std::fabs(x); },
      +[](float x, float) { return x > 0 ? 1.f : (x < 0 ? -1.f : 0.f); });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var sqrt_eps(const Var& a, float eps = 1e-12f) {
  auto out = detail::make_op(a->shape, {a}, [a](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i)
      a->g[i] += n.g[i] * 0.5f / std::max(n.v[i], 1e-12f);
  });
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = std::sqrt(a->v[i] + eps);
  return out;
}

// atan2(y, x) elementwise; used for Fourier phase.
inline Var atan2_(const Var& y, const Var& x) {
  detail::check_same_shape(y, x, "atan2");
  auto out = detail::make_op(y->shape, {y, x}, [y, x](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i) {
      float yy = y->v[i], xx = x->v[i];
      float d = xx * xx + yy * yy;
      if (d < 1e-20f) continue;
      if (y->requires_grad) y->g[i] += n.g[i] * xx / d;
      if (x->requires_grad) x->g[i] += n.g[i] * -yy / d;
    }
  });
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = std::atan2(y->v[i], x->v[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

inline Var sum(const Var& a) {
  auto out = detail::make_op({1}, {a}, [a](Node& n) {
    for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += n.g[0];
  });
  double s = 0;
  for (float x : a->v) s += x;
  out->v[0] = static_cast<float>(s);
  return out;
}

inline Var mean(const Var& a) {
  const float inv = 1.f / static_cast<float>(a->numel());
  auto out = detail::make_op({1}, {a}, [a, inv](Node& n) {
    for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += n.g[0] * inv;
  });
  double s = 0;
  for (float x : a->v) s += x;
  out->v[0] = static_cast<float>(s * inv);
  return out;
}

// Broadcast-subtract a scalar node from every element.
inline Var sub_bcast(const Var& a, const Var& s) {
  if (s->numel() != 1) throw std::invalid_argument("sub_bcast: scalar needed");
  auto out = detail::make_op(a->shape, {a, s}, [a, s](Node& n) {
    if (a->requires_grad)
      for (size_t i = 0; i < n.g.size(); ++i) a->g[i] += n.g[i];
    if (s->requires_grad) {
      double acc = 0;
      for (size_t i = 0; i < n.g.size(); ++i) acc -= n.g[i];
      s->g[0] += static_cast<float>(acc);
    }
  });
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] - s->v[0];
  return out;
}

inline Var mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty");
  const float inv = 1.f / static_cast<float>(scalars.size());
  auto out = detail::make_op({1}, scalars, [scalars, inv](Node& n) {
    for (auto& s : scalars)
      if (s->requires_grad) s->g[0] += n.g[0] * inv;
  });
  double acc = 0;
  for (auto& s : scalars) acc += s->v[0];
  out->v[0] = static_cast<float>(acc * inv);
  return out;
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  if (n != a->numel()) throw std::invalid_argument("reshape: numel mismatch");
  auto out = detail::make_op(std::move(shape), {a}, [a](Node& nn) {
    for (size_t i = 0; i < nn.g.size(); ++i) a->g[i] += nn.g[i];
  });
  out->v = a->v;
  return out;
}

// Concatenate along dim 0; trailing dims must agree.
inline Var concat0(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat0: empty");
  std::vector<int> shape = xs[0]->shape;
  size_t stride = xs[0]->numel() / static_cast<size_t>(shape[0]);
  int total = 0;
  for (auto& x : xs) {
    if (std::vector<int>(x->shape.begin() + 1, x->shape.end()) !=
        std::vector<int>(shape.begin() + 1, shape.end()))
      throw std::invalid_argument("concat0: trailing dims mismatch");
    total += x->shape[0];
  }
  shape[0] = total;
  auto out = detail::make_op(shape, xs, [xs, stride](Node& n) {
    size_t off = 0;
    for (auto& x : xs) {
      size_t len = static_cast<size_t>(x->shape[0]) * stride;
      if (x->requires_grad)
        for (size_t i = 0; i < len; ++i) x->g[i] += n.g[off + i];
      off += len;
    }
  });
  size_t off = 0;
  for (auto& x : xs) {
    std::copy(x->v.begin(), x->v.end(), out->v.begin() + off);
    off += x->v.size();
  }
  return out;
}

// Column slice of a row-major {rows, cols} matrix.
inline Var slice_cols(const Var& a, int c0, int c1) {
  if (a->shape.size() != 2) throw std::invalid_argument("slice_cols: need 2D");
  int rows = a->shape[0], cols = a->shape[1];
  int width = c1 - c0;
  auto out =
      detail::make_op({rows, width}, {a}, [a, rows, cols, c0, width](Node& n) {
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < width; ++c)
            a->g[static_cast<size_t>(r) * cols + c0 + c] +=
                n.g[static_cast<size_t>(r) * width + c];
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c)
      out->v[static_cast<size_t>(r) * width + c] =
          a->v[static_cast<size_t>(r) * cols + c0 + c];
  return out;
}

// Row slice of a row-major {rows, cols} matrix.
inline Var slice_rows(const Var& a, int r0, int r1) {
  if (a->shape.size() != 2) throw std::invalid_argument("slice_rows: need 2D");
  int cols = a->shape[1], height = r1 - r0;
  auto out = detail::make_op({height, cols}, {a}, [a, cols, r0, height](Node& n) {
    size_t len = static_cast<size_t>(height) * cols;
    size_t off = static_cast<size_t>(r0) * cols;
    for (size_t i = 0; i < len; ++i) a->g[off + i] += n.g[i];
  });
  std::copy(a->v.begin() + static_cast<size_t>(r0) * cols,
            a->v.begin() + static_cast<size_t>(r1) * cols, out->v.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

// A {m,k} times B {k,n}.
inline Var matmul(const Var& a, const Var& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 ||
      a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: bad shapes");
  int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = detail::make_op({m, n}, {a, b}, [a, b, m, k, n](Node& nn) {
    CMapM G(nn.g.data(), m, n);
    if (a->requires_grad) {
      MapM Ag(a->g.data(), m, k);
      CMapM B(b->v.data(), k, n);
      Ag.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      MapM Bg(b->g.data(), k, n);
      CMapM A(a->v.data(), m, k);
      Bg.noalias() += A.transpose() * G;
    }
  });
  CMapM A(a->v.data(), m, k);
  CMapM B(b->v.data(), k, n);
  MapM O(out->v.data(), m, n);
  O.noalias() = A * B;
  return out;
}

inline Var transpose(const Var& a) {
  if (a->shape.size() != 2) throw std::invalid_argument("transpose: 2-D only");
  int m = a->shape[0], n = a->shape[1];
  auto out = detail::make_op({n, m}, {a}, [a, m, n](Node& nn) {
    MapM Ag(a->g.data(), m, n);
    CMapM G(nn.g.data(), n, m);
    Ag += G.transpose();
  });
  MapM(out->v.data(), n, m) = CMapM(a->v.data(), m, n).transpose();
  return out;
}

// X {rows,in} · Wᵀ + b, with W {out,in}, b {out}.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->shape.size() != 2 || x->shape[1] != w->shape[1] ||
      w->shape[0] != b->shape[0])
    throw std::invalid_argument("linear: bad shapes");
  int rows = x->shape[0], in = x->shape[1], out_dim = w->shape[0];
  auto out =
      detail::make_op({rows, out_dim}, {x, w, b}, [x, w, b, rows, in, out_dim](Node& n) {
        CMapM G(n.g.data(), rows, out_dim);
        if (x->requires_grad) {
          MapM Xg(x->g.data(), rows, in);
          CMapM W(w->v.data(), out_dim, in);
          Xg.noalias() += G * W;
        }
        if (w->requires_grad) {
          MapM Wg(w->g.data(), out_dim, in);
          CMapM X(x->v.data(), rows, in);
          Wg.noalias() += G.transpose() * X;
        }
        if (b->requires_grad) {
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out_dim; ++c)
              b->g[c] += n.g[static_cast<size_t>(r) * out_dim + c];
        }
      });
  CMapM X(x->v.data(), rows, in);
  CMapM W(w->v.data(), out_dim, in);
  MapM O(out->v.data(), rows, out_dim);
  O.noalias() = X * W.transpose();
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->v.data(), out_dim);
  return out;
}

inline Var softmax_rows(const Var& x) {
  if (x->shape.size() != 2) throw std::invalid_argument("softmax: need 2D");
  int rows = x->shape[0], cols = x->shape[1];
  auto out = detail::make_op(x->shape, {x}, [x, rows, cols](Node& n) {
    for (int r = 0; r < rows; ++r) {
      const float* y = n.v.data() + static_cast<size_t>(r) * cols;
      const float* gy = n.g.data() + static_cast<size_t>(r) * cols;
      float* gx = x->g.data() + static_cast<size_t>(r) * cols;
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += static_cast<double>(gy[c]) * y[c];
      for (int c = 0; c < cols; ++c)
        gx[c] += y[c] * (gy[c] - static_cast<float>(dot));
    }
  });
  for (int r = 0; r < rows; ++r) {
    const float* in = x->v.data() + static_cast<size_t>(r) * cols;
    float* o = out->v.data() + static_cast<size_t>(r) * cols;
    float mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double s = 0;
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    float inv = static_cast<float>(1.0 / s);
    for (int c = 0; c < cols; ++c) o[c] *= inv;
  }
  return out;
}

// Row-wise layer norm with affine params gamma/beta of width cols.
inline Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta,
                          float eps = 1e-5f) {
  int rows = x->shape[0], cols = x->shape[1];
  auto out = detail::make_op(
      x->shape, {x, gamma, beta}, [x, gamma, beta, rows, cols, eps](Node& n) {
        for (int r = 0; r < rows; ++r) {
          const float* xv = x->v.data() + static_cast<size_t>(r) * cols;
          const float* gy = n.g.data() + static_cast<size_t>(r) * cols;
          double mu = 0;
          for (int c = 0; c < cols; ++c) mu += xv[c];
          mu /= cols;
          double var = 0;
          for (int c = 0; c < cols; ++c) var += (xv[c] - mu) * (xv[c] - mu);
          var /= cols;
          float istd = 1.f / std::sqrt(static_cast<float>(var) + eps);
          // dL/dxhat, then the standard layernorm backward.
          double sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int c = 0; c < cols; ++c) {
            float xhat = (xv[c] - static_cast<float>(mu)) * istd;
            float dxhat = gy[c] * gamma->v[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
            if (gamma->requires_grad) gamma->g[c] += gy[c] * xhat;
            if (beta->requires_grad) beta->g[c] += gy[c];
          }
          if (x->requires_grad) {
            float* gx = x->g.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
              float xhat = (xv[c] - static_cast<float>(mu)) * istd;
              float dxhat = gy[c] * gamma->v[c];
              gx[c] += istd * (dxhat - static_cast<float>(sum_dxhat) / cols -
                               xhat * static_cast<float>(sum_dxhat_xhat) / cols);
            }
          }
        }
      });
  for (int r = 0; r < rows; ++r) {
    const float* xv = x->v.data() + static_cast<size_t>(r) * cols;
    float* o = out->v.data() + static_cast<size_t>(r) * cols;
    double mu = 0;
    for (int c = 0; c < cols; ++c) mu += xv[c];
    mu /= cols;
    double var = 0;
    for (int c = 0; c < cols; ++c) var += (xv[c] - mu) * (xv[c] - mu);
    var /= cols;
    float istd = 1.f / std::sqrt(static_cast<float>(var) + eps);
    for (int c = 0; c < cols; ++c)
      o[c] = (xv[c] - static_cast<float>(mu)) * istd * gamma->v[c] +
             beta->v[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (CHW single image); im2col + GEMM.

namespace detail {

inline void im2col(const float* src, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int Ho, int Wo, float* col) {
  // col is {C*kh*kw, Ho*Wo} row-major
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        float* dst =
            col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[static_cast<size_t>(oy) * Wo + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? src[(static_cast<size_t>(c) * H + iy) * W + ix]
                    : 0.f;
          }
        }
      }
}

inline void col2im_add(const float* col, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int Ho, int Wo, float* dst) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const float* src =
            col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            dst[(static_cast<size_t>(c) * H + iy) * W + ix] +=
                src[static_cast<size_t>(oy) * Wo + ox];
          }
        }
      }
}

}  // namespace detail

// x {Ci,H,W}, w {Co,Ci,kh,kw}, b {Co}.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1,
                  int pad = 1) {
  if (x->shape.size() != 3 || w->shape.size() != 4 ||
      x->shape[0] != w->shape[1])
    throw std::invalid_argument("conv2d: bad shapes");
  int Ci = x->shape[0], H = x->shape[1], W = x->shape[2];
  int Co = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  int K = Ci * kh * kw;
  auto col = std::make_shared<std::vector<float>>(
      static_cast<size_t>(K) * Ho * Wo);
  detail::im2col(x->v.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                 col->data());
  auto out = detail::make_op(
      {Co, Ho, Wo}, {x, w, b},
      [x, w, b, col, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K](Node& n) {
        CMapM G(n.g.data(), Co, Ho * Wo);
        if (w->requires_grad) {
          CMapM Col(col->data(), K, Ho * Wo);
          MapM Wg(w->g.data(), Co, K);
          Wg.noalias() += G * Col.transpose();
        }
        if (b->requires_grad) {
          for (int co = 0; co < Co; ++co) {
            double s = 0;
            const float* gp = n.g.data() + static_cast<size_t>(co) * Ho * Wo;
            for (int i = 0; i < Ho * Wo; ++i) s += gp[i];
            b->g[co] += static_cast<float>(s);
          }
        }
        if (x->requires_grad) {
          Mat colg(K, Ho * Wo);
          CMapM Wm(w->v.data(), Co, K);
          colg.noalias() = Wm.transpose() * G;
          detail::col2im_add(colg.data(), Ci, H, W, kh, kw, stride, pad, Ho,
                             Wo, x->g.data());
        }
      });
  CMapM Wm(w->v.data(), Co, K);
  CMapM Col(col->data(), K, Ho * Wo);
  MapM O(out->v.data(), Co, Ho * Wo);
  O.noalias() = Wm * Col;
  for (int co = 0; co < Co; ++co) {
    float* o = out->v.data() + static_cast<size_t>(co) * Ho * Wo;
    for (int i = 0; i < Ho * Wo; ++i) o[i] += b->v[co];
  }
  return out;
}

// Per-channel instance norm over the spatial extent, with affine params.
inline Var instance_norm(const Var& x, const Var& gamma, const Var& beta,
                         float eps = 1e-5f) {
  if (x->shape.size() != 3) throw std::invalid_argument("instance_norm: CHW");
  int C = x->shape[0], HW = x->shape[1] * x->shape[2];
  auto out = detail::make_op(
      x->shape, {x, gamma, beta}, [x, gamma, beta, C, HW, eps](Node& n) {
        for (int c = 0; c < C; ++c) {
          const float* xv = x->v.data() + static_cast<size_t>(c) * HW;
          const float* gy = n.g.data() + static_cast<size_t>(c) * HW;
          double mu = 0;
          for (int i = 0; i < HW; ++i) mu += xv[i];
          mu /= HW;
          double var = 0;
          for (int i = 0; i < HW; ++i) var += (xv[i] - mu) * (xv[i] - mu);
          var /= HW;
          float istd = 1.f / std::sqrt(static_cast<float>(var) + eps);
          double sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int i = 0; i < HW; ++i) {
            float xhat = (xv[i] - static_cast<float>(mu)) * istd;
            float dxhat = gy[i] * gamma->v[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
            if (gamma->requires_grad) gamma->g[c] += gy[i] * xhat;
            if (beta->requires_grad) beta->g[c] += gy[i];
          }
          if (x->requires_grad) {
            float* gx = x->g.data() + static_cast<size_t>(c) * HW;
            for (int i = 0; i < HW; ++i) {
              float xhat = (xv[i] - static_cast<float>(mu)) * istd;
              float dxhat = gy[i] * gamma->v[c];
              gx[i] += istd * (dxhat - static_cast<float>(sum_dxhat) / HW -
                               xhat * static_cast<float>(sum_dxhat_xhat) / HW);
            }
          }
        }
      });
  for (int c = 0; c < C; ++c) {
    const float* xv = x->v.data() + static_cast<size_t>(c) * HW;
    float* o = out->v.data() + static_cast<size_t>(c) * HW;
    double mu = 0;
    for (int i = 0; i < HW; ++i) mu += xv[i];
    mu /= HW;
    double var = 0;
    for (int i = 0; i < HW; ++i) var += (xv[i] - mu) * (xv[i] - mu);
    var /= HW;
    float istd = 1.f / std::sqrt(static_cast<float>(var) + eps);
    for (int i = 0; i < HW; ++i)
      o[i] = (xv[i] - static_cast<float>(mu)) * istd * gamma->v[c] +
             beta->v[c];
  }
  return out;
}

inline Var upsample_nearest2x(const Var& x) {
  if (x->shape.size() != 3) throw std::invalid_argument("upsample: CHW");
  int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  auto out = detail::make_op({C, 2 * H, 2 * W}, {x}, [x, C, H, W](Node& n) {
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx)
          x->g[(static_cast<size_t>(c) * H + y / 2) * W + xx / 2] +=
              n.g[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + xx];
  });
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx)
        out->v[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + xx] =
            x->v[(static_cast<size_t>(c) * H + y / 2) * W + xx / 2];
  return out;
}

// Depthwise 3x3 binomial low-pass then stride-2 subsample (anti-aliased
// downsampling). Reflect padding.
inline Var blurpool2(const Var& x) {
  if (x->shape.size() != 3) throw std::invalid_argument("blurpool2: CHW");
  static const float k[3] = {0.25f, 0.5f, 0.25f};
  int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  auto out = detail::make_op({C, Ho, Wo}, {x}, [x, C, H, W, Ho, Wo, refl](Node& n) {
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          float gy = n.g[(static_cast<size_t>(c) * Ho + oy) * Wo + ox];
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int iy = refl(2 * oy + dy, H), ix = refl(2 * ox + dx, W);
              x->g[(static_cast<size_t>(c) * H + iy) * W + ix] +=
                  gy * k[dy + 1] * k[dx + 1];
            }
        }
  });
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        float acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int iy = refl(2 * oy + dy, H), ix = refl(2 * ox + dx, W);
            acc += x->v[(static_cast<size_t>(c) * H + iy) * W + ix] *
                   k[dy + 1] * k[dx + 1];
          }
        out->v[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] = acc;
      }
  return out;
}

// 3x3 max filter with replicate borders (grayscale dilation). Gradient
// routes to the argmax sample.
inline Var maxfilt3x3(const Var& x) {
  if (x->shape.size() != 3) throw std::invalid_argument("maxfilt3x3: CHW");
  int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  auto arg = std::make_shared<std::vector<int>>(x->numel());
  auto out = detail::make_op({C, H, W}, {x, }, [x, arg](Node& n) {
    for (size_t i = 0; i < n.g.size(); ++i) x->g[(*arg)[i]] += n.g[i];
  });
  auto clampi = [](int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        float best = -1e30f;
        int besti = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int iy = clampi(y + dy, H), ix = clampi(xx + dx, W);
            int idx = (c * H + iy) * W + ix;
            if (x->v[idx] > best) {
              best = x->v[idx];
              besti = idx;
            }
          }
        size_t o = (static_cast<size_t>(c) * H + y) * W + xx;
        out->v[o] = best;
        (*arg)[o] = besti;
      }
  return out;
}

}  // namespace xsreg::ad
