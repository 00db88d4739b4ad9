// Training losses: perceptual distance over a calibrated feature stack,
// L1 reconstruction, morphological-gradient triplet, Fourier amplitude and
// phase, and the relativistic adversarial pair.
#pragma once

#include <map>
#include <mutex>

#include "xsreg/autodiff.hpp"
#include "xsreg/geometry.hpp"
#include "xsreg/nn.hpp"

namespace xsreg {

struct LossWeights {
  float perc = 1.f;
  float recon = 1.f;
  float morph = 1.f;
  float fourier = 1.f;
};

// Named scalar loss components for one step. Adversarial terms are
// sign-free logits-based values; everything else is >= 0.
struct LossBundle {
  float perc = 0, recon = 0, morph = 0, fourier = 0;
  float adv_g = 0, adv_d = 0, total_g = 0;
  LossWeights weights;

  bool finite() const {
    for (float v : {perc, recon, morph, fourier, adv_g, adv_d, total_g})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace losses {

inline void check_dims(const ad::Var& a, const ad::Var& b, const char* who) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

// Luminance as a 1x3 matmul so gradients flow to the image.
inline ad::Var luminance(const ad::Var& x) {
  if (x->shape.size() != 3) throw std::invalid_argument("luminance: CHW");
  if (x->shape[0] == 1) return x;
  int H = x->shape[1], W = x->shape[2];
  auto wts = ad::make_leaf({1, 3});
  wts->v = {0.299f, 0.587f, 0.114f};
  auto flat = ad::reshape(x, {3, H * W});
  return ad::reshape(ad::matmul(wts, flat), {1, H, W});
}

// ---------------------------------------------------------------------------
// Perceptual feature stack. A small strided conv pyramid with fixed
// weights and a per-layer linear calibration; hermetic mode initializes
// both from a seed so the suite never downloads anything, production mode
// loads calibrated weights from a checkpoint through the same store.
struct FeatureExtractor {
  nn::ParamStore ps;
  std::vector<nn::Conv2d> convs;
  std::vector<ad::Var> taus;  // per-layer positive channel calibration
  int stages = 3;

  explicit FeatureExtractor(uint64_t seed = 1234, int base = 12,
                            int stages_ = 3)
      : stages(stages_) {
    auto rng = seeded_rng(seed, 7);
    int in = 3;
    for (int s = 0; s < stages; ++s) {
      int out = base << s;
      nn::Conv2d c;
      c.w = ps.add("feat.conv" + std::to_string(s) + ".w", {out, in, 3, 3},
                   false);
      c.b = ps.add("feat.conv" + std::to_string(s) + ".b", {out}, false);
      c.stride = 2;
      c.pad = 1;
      nn::init_kaiming(c.w, rng);
      convs.push_back(c);
      auto tau = ps.add("feat.tau" + std::to_string(s), {out}, false);
      std::uniform_real_distribution<float> u(0.2f, 1.f);
      for (auto& v : tau->v) v = u(rng);
      taus.push_back(tau);
      in = out;
    }
  }

  std::vector<ad::Var> features(const ad::Var& x) const {
    std::vector<ad::Var> out;
    ad::Var h = x;
    for (auto& c : convs) {
      h = ad::leaky_relu(c(h), 0.1f);
      out.push_back(h);
    }
    return out;
  }

  // Sum over layers of the spatial/channel mean of squared calibrated
  // feature differences.
  ad::Var distance(const ad::Var& x, const ad::Var& y) const {
    auto fx = features(x), fy = features(y);
    std::vector<ad::Var> terms;
    for (int s = 0; s < stages; ++s) {
      auto diff = ad::sub(fx[s], fy[s]);
      // scale channel c by tau[c]
      int C = diff->shape[0], HW = diff->shape[1] * diff->shape[2];
      auto tau = taus[s];
      auto calibrated = ad::detail::make_op(
          diff->shape, {diff}, [diff, tau, C, HW](ad::Node& n) {
            for (int c = 0; c < C; ++c)
              for (int i = 0; i < HW; ++i)
                diff->g[static_cast<size_t>(c) * HW + i] +=
                    n.g[static_cast<size_t>(c) * HW + i] * tau->v[c];
          });
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i)
          calibrated->v[static_cast<size_t>(c) * HW + i] =
              diff->v[static_cast<size_t>(c) * HW + i] * tau->v[c];
      terms.push_back(ad::mean(ad::square(calibrated)));
    }
    ad::Var total = terms[0];
    for (int s = 1; s < stages; ++s) total = ad::add(total, terms[s]);
    return total;
  }
};

// Eq-style perceptual loss over the two image pairs of the flow graph.
inline ad::Var perceptual_loss(const ad::Var& b_hat, const ad::Var& b,
                               const ad::Var& a, const ad::Var& a_hat2,
                               const FeatureExtractor& feat) {
  check_dims(b_hat, b, "perceptual_loss");
  check_dims(a, a_hat2, "perceptual_loss");
  return ad::add(feat.distance(b_hat, b), feat.distance(a, a_hat2));
}

inline ad::Var recon_loss(const ad::Var& a, const ad::Var& a_hat2) {
  check_dims(a, a_hat2, "recon_loss");
  return ad::mean(ad::abs_(ad::sub(a, a_hat2)));
}

// Grayscale dilation minus erosion, 3x3 element, on luminance.
inline ad::Var morph_gradient(const ad::Var& image) {
  auto lum = luminance(image);
  auto d = ad::maxfilt3x3(lum);
  auto e = ad::scale(ad::maxfilt3x3(ad::scale(lum, -1.f)), -1.f);
  return ad::sub(d, e);
}

// Hinge triplet on morphological gradients with margin 1; anchor is the
// registered thermal image, positive the visible, negative the raw thermal.
inline ad::Var morph_triplet_loss(const ad::Var& b_r, const ad::Var& a,
                                  const ad::Var& b) {
  check_dims(b_r, a, "morph_triplet_loss");
  check_dims(b_r, b, "morph_triplet_loss");
  auto g_br = morph_gradient(b_r);
  auto g_a = morph_gradient(a);
  auto g_b = morph_gradient(b);
  auto d_pos = ad::mean(ad::square(ad::sub(g_br, g_a)));
  auto d_neg = ad::mean(ad::square(ad::sub(g_br, g_b)));
  return ad::relu(ad::add_scalar(ad::sub(d_pos, d_neg), 1.f));
}

// ---------------------------------------------------------------------------
// 2D DFT via explicit cosine/sine matrices; returns {2,H,W} (real, imag).
// Fine at the frame sizes used here, and trivially differentiable.
inline ad::Var dft2(const ad::Var& x) {
  if (x->shape.size() != 3 || x->shape[0] != 1)
    throw std::invalid_argument("dft2: single-channel CHW");
  const int H = x->shape[1], W = x->shape[2];
  using DMat = Eigen::MatrixXd;
  auto basis = [](int n) {
    DMat C(n, n), S(n, n);
    for (int u = 0; u < n; ++u)
      for (int y = 0; y < n; ++y) {
        double ang = 2.0 * M_PI * u * y / n;
        C(u, y) = std::cos(ang);
        S(u, y) = std::sin(ang);
      }
    return std::make_pair(C, S);
  };
  auto [Ch, Sh] = basis(H);
  auto [Cw, Sw] = basis(W);
  auto CH = std::make_shared<DMat>(Ch), SH = std::make_shared<DMat>(Sh);
  auto CW = std::make_shared<DMat>(Cw), SW = std::make_shared<DMat>(Sw);
  auto out = ad::detail::make_op({2, H, W}, {x}, [x, CH, SH, CW, SW, H, W](ad::Node& n) {
    DMat gRe = Eigen::Map<const ad::Mat>(n.g.data(), H, W).cast<double>();
    DMat gIm = Eigen::Map<const ad::Mat>(n.g.data() + static_cast<size_t>(H) * W,
                                         H, W).cast<double>();
    DMat gX = (*CH) * gRe * (*CW) - (*SH) * gIm * (*CW) -
              (*CH) * gIm * (*SW) - (*SH) * gRe * (*SW);
    ad::MapM(x->g.data(), H, W) += gX.cast<float>();
  });
  DMat X = Eigen::Map<const ad::Mat>(x->v.data(), H, W).cast<double>();
  DMat Re = (*CH) * X * (*CW) - (*SH) * X * (*SW);
  DMat Im = -(*CH) * X * (*SW) - (*SH) * X * (*CW);
  ad::MapM(out->v.data(), H, W) = Re.cast<float>();
  ad::MapM(out->v.data() + static_cast<size_t>(H) * W, H, W) = Im.cast<float>();
  return out;
}

inline ad::Var spectrum_amplitude(const ad::Var& f) {
  int H = f->shape[1], W = f->shape[2];
  auto re = ad::reshape(ad::slice_rows(ad::reshape(f, {2, H * W}), 0, 1),
                        {1, H, W});
  auto im = ad::reshape(ad::slice_rows(ad::reshape(f, {2, H * W}), 1, 2),
                        {1, H, W});
  return ad::sqrt_eps(ad::add(ad::square(re), ad::square(im)));
}

inline ad::Var spectrum_phase(const ad::Var& f) {
  int H = f->shape[1], W = f->shape[2];
  auto re = ad::reshape(ad::slice_rows(ad::reshape(f, {2, H * W}), 0, 1),
                        {1, H, W});
  auto im = ad::reshape(ad::slice_rows(ad::reshape(f, {2, H * W}), 1, 2),
                        {1, H, W});
  return ad::atan2_(im, re);
}

inline ad::Var fourier_amp_loss(const ad::Var& a, const ad::Var& a_hat1) {
  check_dims(a, a_hat1, "fourier_loss");
  auto fa = dft2(luminance(a));
  auto fb = dft2(luminance(a_hat1));
  return ad::mean(ad::abs_(ad::sub(spectrum_amplitude(fa),
                                   spectrum_amplitude(fb))));
}

// Raw angle difference in L1; the wrap discontinuity at +-pi is a known
// artifact of this formulation.
inline ad::Var fourier_phase_loss(const ad::Var& a, const ad::Var& a_hat1) {
  check_dims(a, a_hat1, "fourier_loss");
  auto fa = dft2(luminance(a));
  auto fb = dft2(luminance(a_hat1));
  return ad::mean(ad::abs_(ad::sub(spectrum_phase(fa), spectrum_phase(fb))));
}

inline ad::Var fourier_loss(const ad::Var& a, const ad::Var& a_hat1) {
  return ad::add(fourier_amp_loss(a, a_hat1), fourier_phase_loss(a, a_hat1));
}

// ---------------------------------------------------------------------------
// Relativistic average adversarial losses on logit score maps. Each side
// is judged relative to the mean logit of the other population; the
// discriminator loss is the average of its real and fake terms.
struct AdvPair {
  ad::Var adv_g, adv_d;
};

inline AdvPair relativistic_adv_losses(const ad::Var& d_real,
                                       const ad::Var& d_fake) {
  check_dims(d_real, d_fake, "relativistic_adv_losses");
  auto mean_real = ad::mean(d_real);
  auto mean_fake = ad::mean(d_fake);
  auto rel_real = ad::sub_bcast(d_real, mean_fake);  // real vs avg fake
  auto rel_fake = ad::sub_bcast(d_fake, mean_real);  // fake vs avg real
  AdvPair out;
  out.adv_d = ad::scale(
      ad::add(ad::mean(ad::softplus(ad::scale(rel_real, -1.f))),
              ad::mean(ad::softplus(rel_fake))),
      0.5f);
  out.adv_g = ad::scale(
      ad::add(ad::mean(ad::softplus(ad::scale(rel_fake, -1.f))),
              ad::mean(ad::softplus(rel_real))),
      0.5f);
  return out;
}

inline float total_generator_loss(float adv_g, float perc, float recon,
                                  float morph, float fourier,
                                  const LossWeights& w) {
  return adv_g + w.perc * perc + w.recon * recon + w.morph * morph +
         w.fourier * fourier;
}

}  // namespace losses
}  // namespace xsreg
