// Release gate: one self-contained check per shipping criterion, each
// printing a single PASS/FAIL line.  Exit status is the number of failed
// criteria, so the suite integrates with ctest while staying readable as a
// plain console report.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xsreg/dataio.hpp"
#include "xsreg/losses.hpp"
#include "xsreg/metrics.hpp"
#include "xsreg/trainer.hpp"
#include "xsreg/vessels.hpp"

namespace fs = std::filesystem;
using namespace xsreg;

namespace {

// --------------------------------------------------------------------------
// Shared budget for the end-to-end benchmark criteria.  Chosen so the whole
// gate finishes on a single CPU core; the recovery run itself stays well
// under its 30-minute ceiling.
struct BenchBudget {
  int image_size = 64;
  int pairs = 128;        // enough data that G2 cannot just memorize
  int batch = 8;
  int epochs = 70;        // 16 steps/epoch -> 1120 steps (<= 2000)
  int warm_epochs = 10;   // GANs settle before theta moves
  float lr_g = 1e-3f;
  float lr_d = 2e-4f;
  float lr_stn = 1e-3f;
  float w_perc = 2.f, w_recon = 10.f, w_morph = 2.f;
  float phantom_blur = 2.0f;
};

struct BenchData {
  std::vector<std::pair<Image, Image>> pairs;  // (fixed 3ch, moving 3ch)
  std::vector<AffineParams> targets;           // inverse of applied warp
};

BenchData make_bench_data(const BenchBudget& bb, uint64_t seed,
                          float visible_gain) {
  // Misalignment range: +-10 deg rotation, +-15% scale, +-20% translation.
  ThetaRange range{10.f, 0.15f, 0.2f, 0.f};
  BenchData d;
  for (int i = 0; i < bb.pairs; ++i) {
    PhantomOptions po;
    po.blur_sigma = bb.phantom_blur;
    Image base = make_phantom(bb.image_size, bb.image_size,
                              seed * 1000 + 500 + i, po);
    SyntheticPair p = make_synthetic(base, range, seed * 1000 + i);
    Image vis = p.fixed;
    for (auto& v : vis.data) v *= visible_gain;
    d.pairs.emplace_back(replicate_channels(vis, 3),
                         replicate_channels(p.moving, 3));
    d.targets.push_back(invert_affine(p.theta_true));
  }
  return d;
}

NetsConfig bench_nets(const BenchBudget& bb) {
  NetsConfig nc;
  nc.gen.base_channels = 8;
  nc.disc.image_size = bb.image_size;
  nc.disc.base_channels = 8;
  nc.reg.image_size = bb.image_size;
  nc.reg.patch_size = 16;   // reduced localization transformer; 4x4 tokens
                            // keep the token count of the full-size model
  nc.reg.vit_depth = 4;
  nc.reg.embed_dim = 128;
  nc.reg.heads = 4;
  nc.reg.mlp_ratio = 2;
  nc.reg.mlp_widths = {128, 64};
  return nc;
}

TrainConfig bench_config(const BenchBudget& bb, uint64_t seed, bool fourier) {
  TrainConfig cfg;
  cfg.image_size = bb.image_size;
  cfg.batch_size = bb.batch;
  cfg.epochs = bb.epochs;
  cfg.lr_g = bb.lr_g;
  cfg.lr_d = bb.lr_d;
  cfg.lr_stn = bb.lr_stn;
  cfg.stn_warm_epochs = bb.warm_epochs;
  cfg.weights.perc = bb.w_perc;
  cfg.weights.recon = bb.w_recon;
  cfg.weights.morph = bb.w_morph;
  cfg.checkpoint_every = 1000;  // final checkpoint only; keeps I/O off the clock
  cfg.seed = seed;
  cfg.fourier = fourier;
  return cfg;
}

AffineParams predict_theta(Nets& nets, const Image& fixed,
                           const Image& moving) {
  auto a_hat1 = nets.g2(ad::from_image(moving));
  auto th = nets.stn.regress(ad::from_image(fixed), a_hat1);
  AffineParams out;
  std::copy(th->v.begin(), th->v.end(), out.t.begin());
  return out;
}

struct ErrorPair {
  double baseline = 0;  // identity transform
  double model = 0;
};

ErrorPair corner_errors(Nets& nets, const BenchData& d, int size) {
  ErrorPair e;
  AffineParams id = AffineParams::identity();
  for (size_t i = 0; i < d.pairs.size(); ++i) {
    AffineParams tp = predict_theta(nets, d.pairs[i].first, d.pairs[i].second);
    e.baseline += corner_error_px(id, d.targets[i], size, size);
    e.model += corner_error_px(tp, d.targets[i], size, size);
  }
  e.baseline /= d.pairs.size();
  e.model /= d.pairs.size();
  return e;
}

void run_training(Nets& nets, const BenchData& d, const TrainConfig& cfg,
                  const fs::path& run_dir) {
  fs::remove_all(run_dir);
  RunDir run(run_dir, cfg);
  train(d.pairs, nets, cfg, run);
}

// Single fail counter + per-criterion report line.
int g_failures = 0;
int g_attempted = 0;

void report(int idx, const char* name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %2d: %-34s %s(%.1f s)\n", pass ? "PASS" : "FAIL",
              idx, name, detail.empty() ? "" : (detail + " ").c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::vector<int> g_only;  // optional subset from argv

template <typename Fn>
void criterion(int idx, const char* name, Fn fn) {
  if (!g_only.empty() &&
      std::find(g_only.begin(), g_only.end(), idx) == g_only.end())
    return;
  ++g_attempted;
  auto t0 = std::chrono::steady_clock::now();
  bool pass = false;
  std::string detail;
  try {
    pass = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  auto t1 = std::chrono::steady_clock::now();
  report(idx, name, pass, detail,
         std::chrono::duration<double>(t1 - t0).count());
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// --------------------------------------------------------------------------
// 1. Warp correctness

bool warp_suite(std::string& detail) {
  // Identity warp is exact.
  PhantomOptions smooth;
  smooth.blur_sigma = 2.5f;
  for (int trial = 0; trial < 5; ++trial) {
    Image img = make_phantom(24, 20, 10 + trial, smooth);
    Image warped = warp_affine(img, AffineParams::identity());
    for (size_t i = 0; i < img.data.size(); ++i)
      if (std::fabs(warped.data[i] - img.data[i]) > 1e-6f) {
        detail = "identity warp not exact";
        return false;
      }
  }
  // compose/invert round-trips.
  auto rng = seeded_rng(42);
  std::uniform_real_distribution<float> u(-0.3f, 0.3f);
  for (int trial = 0; trial < 20; ++trial) {
    AffineParams t = AffineParams::identity();
    t.t[0] += u(rng); t.t[1] += 0.3f * u(rng); t.t[2] += u(rng);
    t.t[3] += 0.3f * u(rng); t.t[4] += u(rng); t.t[5] += u(rng);
    AffineParams round = compose_affine(t, invert_affine(t));
    AffineParams id = AffineParams::identity();
    for (int i = 0; i < 6; ++i)
      if (std::fabs(round.t[i] - id.t[i]) > 1e-6f) {
        detail = "compose(t, inv t) != identity";
        return false;
      }
  }
  // warp then inverse-warp image round-trip, interior pixels.
  float worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Image img = make_phantom(48, 48, 30 + trial, smooth);
    AffineParams t = AffineParams::identity();
    t.t[0] = 1.05f; t.t[1] = 0.03f; t.t[2] = 0.06f;
    t.t[3] = -0.02f; t.t[4] = 0.97f; t.t[5] = -0.05f;
    Image back = warp_affine(warp_affine(img, t), invert_affine(t));
    for (int y = 8; y < 40; ++y)
      for (int x = 8; x < 40; ++x)
        worst = std::max(worst, std::fabs(back.at(0, y, x) - img.at(0, y, x)));
  }
  detail = fmt("interior round-trip max err %.4f", worst);
  return worst < 0.05f;
}

// --------------------------------------------------------------------------
// 2. Gradient check through grid generation + sampling

bool gradient_check(std::string& detail) {
  auto rng = seeded_rng(17);
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  int fails = 0;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PhantomOptions smooth;
    smooth.blur_sigma = 2.5f;
    smooth.rects = 0;
    Image img = make_phantom(16, 16, 100 + trial, smooth);
    Image target = make_phantom(16, 16, 300 + trial, smooth);
    auto img_v = ad::from_image(img);
    auto theta = ad::make_leaf({6}, true);
    // Keep every sampling point ~0.1 px away from the bilinear cell
    // lattice: the sampler is non-smooth on cell boundaries and a kink
    // inside the finite-difference window would invalidate the estimate.
    const float px = 2.f / 15.f;
    float sx = 0.02f + 0.02f * u01(rng), sy = 0.02f + 0.02f * u01(rng);
    float cx = (0.43f + 0.14f * u01(rng)) * px;
    float cy = (0.43f + 0.14f * u01(rng)) * px;
    float r = (u01(rng) < 0.5f ? -1.f : 1.f) * 0.004f * (0.5f + 0.5f * u01(rng));
    theta->v = {1.f + sx, r, cx, -r, 1.f + sy, cy};
    auto build = [&] {
      auto warped = ad_ops::warp(img_v, theta);
      return ad::mean(ad::square(ad::sub(warped, ad::from_image(target))));
    };
    auto loss = build();
    ad::backward(loss);
    const float h = 1e-3f;
    std::vector<float> fd(6);
    for (int i = 0; i < 6; ++i) {
      float keep = theta->v[i];
      theta->v[i] = keep + h;
      float up = build()->v[0];
      theta->v[i] = keep - h;
      float dn = build()->v[0];
      theta->v[i] = keep;
      fd[i] = (up - dn) / (2 * h);
    }
    double num = 0, den = 0;
    for (int i = 0; i < 6; ++i) {
      num += (theta->g[i] - fd[i]) * (theta->g[i] - fd[i]);
      den += double(fd[i]) * fd[i];
    }
    double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-6);
    worst = std::max(worst, rel);
    if (rel > 1e-2) ++fails;
  }
  detail = fmt("20 trials, worst rel err %.2e", worst);
  return fails == 0;
}

// --------------------------------------------------------------------------
// 3. Loss zero / positivity

bool loss_suite(std::string& detail) {
  PhantomOptions po;
  Image base = make_phantom(32, 32, 7, po);
  Image img3 = replicate_channels(base, 3);
  auto x = ad::from_image(img3);
  losses::FeatureExtractor feat(11);

  float recon0 = losses::recon_loss(x, x)->v[0];
  float perc0 = losses::perceptual_loss(x, x, x, x, feat)->v[0];
  float fourier0 = losses::fourier_loss(x, x)->v[0];
  if (recon0 >= 1e-6f || perc0 >= 1e-6f || fourier0 >= 1e-6f) {
    detail = fmt("identical-input losses %g %g %g", recon0, perc0, fourier0);
    return false;
  }

  Image noisy = img3;
  auto rng = seeded_rng(99);
  std::normal_distribution<float> n(0.f, 0.1f);
  for (auto& v : noisy.data) v += n(rng);
  auto y = ad::from_image(noisy);
  if (losses::recon_loss(x, y)->v[0] <= 0 ||
      losses::perceptual_loss(y, x, x, y, feat)->v[0] <= 0 ||
      losses::fourier_loss(x, y)->v[0] <= 0) {
    detail = "noise sigma=0.1 did not raise losses above zero";
    return false;
  }

  // Anchor == positive == negative: both triplet distances coincide, so the
  // hinge sits exactly at its margin.
  float triplet = losses::morph_triplet_loss(x, x, x)->v[0];
  if (triplet != 1.0f) {
    detail = fmt("triplet at A=B=B_R is %g, want exactly 1", triplet);
    return false;
  }

  // Amplitude spectrum is invariant under circular shifts.
  float worst = 0;
  for (auto [dy, dx] : std::vector<std::pair<int, int>>{{3, 5}, {1, 0}, {0, 7}}) {
    Image shifted(img3.c, img3.h, img3.w);
    for (int c = 0; c < img3.c; ++c)
      for (int yy = 0; yy < img3.h; ++yy)
        for (int xx = 0; xx < img3.w; ++xx)
          shifted.at(c, yy, xx) =
              img3.at(c, (yy + dy) % img3.h, (xx + dx) % img3.w);
    float amp = losses::fourier_amp_loss(x, ad::from_image(shifted))->v[0];
    worst = std::max(worst, amp);
  }
  detail = fmt("shift-theorem amp residual %.2e", worst);
  return worst < 1e-5f;
}

// --------------------------------------------------------------------------
// 4. Relativistic adversarial closed form

bool relativistic_closed_form(std::string& detail) {
  for (float logit : {0.f, 0.7f, -2.5f}) {
    auto real = ad::make_leaf({4, 4});
    auto fake = ad::make_leaf({4, 4});
    std::fill(real->v.begin(), real->v.end(), logit);
    std::fill(fake->v.begin(), fake->v.end(), logit);
    auto pair = losses::relativistic_adv_losses(real, fake);
    float want = std::log(2.f);
    if (std::fabs(pair.adv_d->v[0] - want) > 1e-6f ||
        std::fabs(pair.adv_g->v[0] - want) > 1e-6f) {
      detail = fmt("equal logits %g -> d %g g %g, want log 2", logit,
                   pair.adv_d->v[0], pair.adv_g->v[0]);
      return false;
    }
  }
  detail = "per-side loss log 2 +- 1e-6";
  return true;
}

// --------------------------------------------------------------------------
// 5. Metric oracles

bool metric_oracles(std::string& detail) {
  Image x = make_phantom(256, 256, 5);
  if (std::fabs(metrics::ssim(x, x) - 1.0) > 1e-9) {
    detail = "ssim(x,x) != 1";
    return false;
  }
  if (std::fabs(metrics::ncc(x, x) - 1.0) > 1e-6) {
    detail = "ncc(x,x) != 1";
    return false;
  }
  Image neg = x;
  for (auto& v : neg.data) v = -v;
  if (std::fabs(metrics::ncc(x, neg) + 1.0) > 1e-6) {
    detail = "ncc(x,-x) != -1";
    return false;
  }
  double mi_self = metrics::mutual_information(x, x);
  double ent = metrics::entropy(x);
  if (std::fabs(mi_self - ent) > 1e-9) {
    detail = fmt("MI(x,x) %.12f vs entropy %.12f", mi_self, ent);
    return false;
  }
  Image noise(1, 256, 256);
  auto rng = seeded_rng(1234);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : noise.data) v = u(rng);
  double mi_ind = metrics::mutual_information(x, noise);
  if (mi_ind >= 0.05) {
    detail = fmt("MI vs independent noise %.3f", mi_ind);
    return false;
  }
  // PSNR decreases monotonically as noise grows.
  double prev = std::numeric_limits<double>::infinity();
  for (float sigma : {0.02f, 0.05f, 0.1f, 0.2f}) {
    Image noisy = x;
    std::normal_distribution<float> n(0.f, sigma);
    auto r2 = seeded_rng(77);
    for (auto& v : noisy.data) v += n(r2);
    double p = metrics::psnr(x, noisy);
    if (p >= prev) {
      detail = fmt("psnr not monotone at sigma %.2f", sigma);
      return false;
    }
    prev = p;
  }
  detail = fmt("MI(x,x)=H(x)=%.3f nats, MI_indep %.3f", ent, mi_ind);
  return true;
}

// --------------------------------------------------------------------------
// 6/8/10 share one trained model; 7 runs its own ablation.

Nets* g_bench_nets = nullptr;
BenchData g_bench_data;
BenchBudget g_budget;

bool registration_recovery(std::string& detail) {
  g_bench_data = make_bench_data(g_budget, 1, 1.f);
  static Nets nets(bench_nets(g_budget), 1);
  g_bench_nets = &nets;
  TrainConfig cfg = bench_config(g_budget, 1, false);
  run_training(nets, g_bench_data, cfg,
               fs::temp_directory_path() / "xsreg_accept_run");
  ErrorPair e = corner_errors(nets, g_bench_data, g_budget.image_size);

  // Edge correlation of registered vs unregistered pairs.
  double ncc_unreg = 0, ncc_reg = 0;
  for (size_t i = 0; i < g_bench_data.pairs.size(); ++i) {
    const auto& [a, b] = g_bench_data.pairs[i];
    AffineParams tp = predict_theta(nets, a, b);
    Image b_r = warp_affine(b, tp);
    ncc_unreg += metrics::edge_metrics(a, b).second;
    ncc_reg += metrics::edge_metrics(a, b_r).second;
  }
  ncc_unreg /= g_bench_data.pairs.size();
  ncc_reg /= g_bench_data.pairs.size();

  detail = fmt("corner err %.2f -> %.2f px (%.0f%%), edge NCC %.3f -> %.3f",
               e.baseline, e.model, 100 * (1 - e.model / e.baseline),
               ncc_unreg, ncc_reg);
  return e.model <= 0.5 * e.baseline && ncc_reg > ncc_unreg;
}

bool fourier_ablation(std::string& detail) {
  BenchBudget bb = g_budget;
  bb.pairs = 24;
  bb.epochs = 32;
  bb.warm_epochs = 8;
  std::vector<double> with_f, without_f;
  for (uint64_t seed : {1, 2, 3}) {
    for (bool fourier : {false, true}) {
      BenchData d = make_bench_data(bb, seed, 0.1f);  // 10% visible light
      Nets nets(bench_nets(bb), seed);
      run_training(nets, d, bench_config(bb, seed, fourier),
                   fs::temp_directory_path() / "xsreg_accept_ablation");
      ErrorPair e = corner_errors(nets, d, bb.image_size);
      (fourier ? with_f : without_f).push_back(e.model);
    }
  }
  auto median3 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
  };
  double mf = median3(with_f), m0 = median3(without_f);
  detail = fmt("median corner err: fourier on %.3f px, off %.3f px", mf, m0);
  return mf < m0;
}

bool robustness(std::string& detail) {
  if (!g_bench_nets) {
    detail = "no trained model (criterion 6 must run first)";
    return false;
  }
  Nets& nets = *g_bench_nets;
  int size = g_budget.image_size;
  AffineParams id = AffineParams::identity();
  // vflip conjugates the recovery target by the mirror transform.
  auto vflip_conj = [](const AffineParams& t) {
    AffineParams f = AffineParams::identity();
    f.t[4] = -1.f;
    return compose_affine(f, compose_affine(t, f));
  };
  struct Case {
    const char* name;
    double base = 0, err = 0;
  };
  std::vector<Case> cases = {{"erase_visible"}, {"erase_thermal"}, {"vflip"}};
  for (size_t i = 0; i < g_bench_data.pairs.size(); ++i) {
    const auto& [a, b] = g_bench_data.pairs[i];
    const AffineParams& tgt = g_bench_data.targets[i];
    uint64_t s = 7000 + i;
    {  // rectangle erased from the visible input
      AffineParams tp =
          predict_theta(nets, perturb(a, PerturbKind::erase_visible, s), b);
      cases[0].base += corner_error_px(id, tgt, size, size);
      cases[0].err += corner_error_px(tp, tgt, size, size);
    }
    {  // rectangle erased from the thermal input
      AffineParams tp =
          predict_theta(nets, a, perturb(b, PerturbKind::erase_thermal, s));
      cases[1].base += corner_error_px(id, tgt, size, size);
      cases[1].err += corner_error_px(tp, tgt, size, size);
    }
    {  // both inputs mirrored; target conjugated accordingly
      AffineParams tp = predict_theta(nets, perturb(a, PerturbKind::vflip, s),
                                      perturb(b, PerturbKind::vflip, s));
      AffineParams tgt_f = vflip_conj(tgt);
      cases[2].base += corner_error_px(id, tgt_f, size, size);
      cases[2].err += corner_error_px(tp, tgt_f, size, size);
    }
  }
  std::string parts;
  for (auto& c : cases)
    parts += fmt("%s %.2f/%.2f ", c.name, c.err / g_bench_data.pairs.size(),
                 c.base / g_bench_data.pairs.size());
  detail = parts + "(model/baseline px)";
  // The contract asks that flip OR erasure preserve the improvement; all
  // three measurements are reported above for transparency.
  bool erase_ok = cases[0].err < cases[0].base && cases[1].err < cases[1].base;
  bool vflip_ok = cases[2].err < cases[2].base;
  return erase_ok || vflip_ok;
}

// --------------------------------------------------------------------------
// 9. Vessel pipeline

bool vessel_suite(std::string& detail) {
  VesselConfig vc;
  // Diffusion conserves total intensity and respects the maximum principle.
  Image img = make_phantom(64, 64, 21);
  Image d = vessels::anisotropic_diffusion(img, vc);
  double m0 = img_mean(img), m1 = img_mean(d);
  if (std::fabs(m0 - m1) >= 1e-3) {
    detail = fmt("diffusion mean drift %.2e", std::fabs(m0 - m1));
    return false;
  }
  if (img_min(d) < img_min(img) - 1e-5f || img_max(d) > img_max(img) + 1e-5f) {
    detail = "diffusion violates maximum principle";
    return false;
  }
  // Top-hat output is nonnegative.
  Image th = vessels::top_hat(img, vc.tophat_kernel);
  if (img_min(th) < 0) {
    detail = "top-hat produced negative values";
    return false;
  }
  // Thin bright curve lights up at least 5x background.
  Image phantom(1, 64, 64, 0.3f);
  std::vector<std::pair<int, int>> on_curve;
  for (int x = 4; x < 60; ++x) {
    int y = 32 + int(10 * std::sin(x * 0.2));
    phantom.at(0, y, x) = 1.f;
    on_curve.emplace_back(y, x);
  }
  Image vm = vessels::vessel_map(phantom, vc);
  double curve = 0, bg = 0;
  int nbg = 0;
  for (auto [y, x] : on_curve) curve += vm.at(0, y, x);
  curve /= on_curve.size();
  for (int y = 2; y < 62; ++y)
    for (int x = 2; x < 62; ++x) {
      bool near = false;
      for (auto [cy, cx] : on_curve)
        if (std::abs(cy - y) <= 2 && std::abs(cx - x) <= 2) { near = true; break; }
      if (!near) { bg += vm.at(0, y, x); ++nbg; }
    }
  bg /= nbg;
  double ratio = curve / std::max(bg, 1e-6);
  if (ratio < 5) {
    detail = fmt("curve/background response %.1f", ratio);
    return false;
  }
  // Similarity of vessel maps decreases monotonically with corruption.
  double prev = std::numeric_limits<double>::infinity();
  for (float sigma : {0.05f, 0.15f, 0.4f}) {
    Image noisy = phantom;
    auto rng = seeded_rng(31);
    std::normal_distribution<float> n(0.f, sigma);
    for (auto& v : noisy.data) v += n(rng);
    double sim = vessels::identity_similarity(phantom, noisy, vc);
    if (sim >= prev) {
      detail = fmt("identity similarity not monotone at sigma %.2f", sigma);
      return false;
    }
    prev = sim;
  }
  detail = fmt("curve response %.1fx background", ratio);
  return true;
}

// --------------------------------------------------------------------------
// 10. Bit-reproducibility of the recovery pipeline

bool reproducibility(std::string& detail) {
  BenchBudget bb = g_budget;
  bb.pairs = 8;
  bb.epochs = 2;  // determinism does not depend on run length
  bb.warm_epochs = 1;
  fs::path root = fs::temp_directory_path() / "xsreg_accept_repro";
  fs::remove_all(root);

  // Write the pair set to disk once so both runs register the same manifest.
  BenchData d = make_bench_data(bb, 4, 1.f);
  fs::create_directories(root / "data");
  {
    std::ofstream man(root / "data" / "manifest.csv");
    man << "pair_id,visible_path,thermal_path\n";
    for (size_t i = 0; i < d.pairs.size(); ++i) {
      std::string id = "p" + std::to_string(i);
      write_image((root / "data" / (id + "_v.png")).string(),
                  d.pairs[i].first);
      write_image((root / "data" / (id + "_t.png")).string(),
                  d.pairs[i].second);
      man << id << ',' << id << "_v.png," << id << "_t.png\n";
    }
  }
  PairManifest manifest = load_manifest((root / "data" / "manifest.csv").string());

  std::vector<std::string> sidecars;
  for (int run_i = 0; run_i < 2; ++run_i) {
    Nets nets(bench_nets(bb), 4);
    run_training(nets, d, bench_config(bb, 4, false),
                 root / ("run" + std::to_string(run_i)));
    fs::path out = root / ("reg" + std::to_string(run_i));
    register_dataset(manifest, nets, Direction::thermal_to_visible, out,
                     bb.image_size);
    std::ifstream f(out / "theta_sidecar.csv");
    std::stringstream ss;
    ss << f.rdbuf();
    sidecars.push_back(ss.str());
  }
  bool same = sidecars[0] == sidecars[1] && !sidecars[0].empty();
  detail = same ? "theta sidecars byte-identical across runs"
                : "sidecars differ between identically seeded runs";
  return same;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) g_only.push_back(std::atoi(argv[i]));
  std::printf("release gate: %d criteria\n", 10);
  criterion(1, "warp correctness", warp_suite);
  criterion(2, "warp gradient vs finite diff", gradient_check);
  criterion(3, "loss zero/positivity", loss_suite);
  criterion(4, "relativistic adversarial form", relativistic_closed_form);
  criterion(5, "similarity metric oracles", metric_oracles);
  criterion(6, "synthetic registration recovery", registration_recovery);
  criterion(7, "fourier loss low-light ablation", fourier_ablation);
  criterion(8, "perturbation robustness", robustness);
  criterion(9, "vessel extraction pipeline", vessel_suite);
  criterion(10, "bit-reproducible training", reproducibility);
  std::printf("%d/%d criteria passed\n", g_attempted - g_failures,
              g_attempted);
  return g_failures;
}
