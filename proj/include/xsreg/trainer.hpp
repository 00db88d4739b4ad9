// Joint training of the two translation GANs and the registration STN:
// the four forward flows, the alternating discriminator / generator+STN
// updates, run-directory bookkeeping, and batch registration.
#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "xsreg/dataio.hpp"
#include "xsreg/losses.hpp"
#include "xsreg/regnet.hpp"
#include "xsreg/transnets.hpp"

namespace xsreg {

enum class Direction {
  thermal_to_visible,  // T~V: thermal is warped into the visible frame
  visible_to_thermal,  // V~T: roles swapped at ingestion, nothing else
};

struct TrainConfig {
  Direction direction = Direction::thermal_to_visible;
  int epochs = 50;
  int batch_size = 32;
  float lr_g = 2e-4f, lr_d = 2e-4f, lr_stn = 1e-4f;
  int stn_warm_epochs = 0;  // freeze the regressor while the GANs settle
  bool fourier = false;
  uint64_t seed = 0;
  bool mixed_precision = false;  // accepted for config compatibility; this
                                 // implementation always runs full precision
  int checkpoint_every = 1;
  int image_size = 256;
  LossWeights weights;

  void validate() const {
    if (batch_size < 1 || epochs < 1)
      throw ConfigError("train: batch_size and epochs must be >= 1");
    if (image_size < 16 || image_size % 16 != 0)
      throw ConfigError("train: image_size must be a positive multiple of 16");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every >= 1");
    if (stn_warm_epochs < 0)
      throw ConfigError("train: stn_warm_epochs must be >= 0");
  }
};

// (fixed, moving) in the training frame: T~V keeps (visible, thermal),
// V~T swaps them. This is the only place direction is consulted.
inline std::pair<Image, Image> orient_pair(const Image& visible,
                                           const Image& thermal,
                                           Direction dir) {
  if (dir == Direction::thermal_to_visible) return {visible, thermal};
  return {thermal, visible};
}

struct NetsConfig {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  RegnetConfig reg;
};

inline NetsConfig default_nets(int image_size) {
  NetsConfig c;
  c.disc.image_size = image_size;
  c.reg.image_size = image_size;
  while (c.reg.patch_size > image_size) c.reg.patch_size /= 2;
  return c;
}

struct Nets {
  Generator g1, g2;      // G1: A -> B_hat, G2: B -> A_hat
  Discriminator d1, d2;  // D1 judges the thermal domain, D2 the visible
  Regnet stn;

  explicit Nets(const NetsConfig& c, uint64_t seed = 0)
      : g1(c.gen, seed * 16 + 1),
        g2(c.gen, seed * 16 + 2),
        d1(c.disc, seed * 16 + 3),
        d2(c.disc, seed * 16 + 4),
        stn(c.reg, seed * 16 + 5) {}

  std::vector<std::pair<std::string, nn::ParamStore*>> stores() {
    return {{"g1", &g1.ps}, {"g2", &g2.ps}, {"d1", &d1.ps},
            {"d2", &d2.ps}, {"stn", &stn.ps}};
  }

  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (auto& [name, ps] : stores())
      nn::save_checkpoint(dir / (name + ".ckpt"), *ps);
  }
  void load(const std::filesystem::path& dir) {
    for (auto& [name, ps] : stores())
      nn::load_checkpoint(dir / (name + ".ckpt"), *ps);
  }
};

struct FlowOutputs {
  ad::Var b_hat, a_hat1, b_r, a_hat2, theta;
  AffineParams theta_params() const {
    AffineParams t;
    std::copy(theta->v.begin(), theta->v.end(), t.t.begin());
    return t;
  }
};

// The four flows of one pair: translate A, translate B, regress theta on
// (A, A_hat1), warp B, translate the warped B back.
inline FlowOutputs forward_flows(const ad::Var& a, const ad::Var& b,
                                 Nets& nets) {
  if (a->shape != b->shape)
    throw std::invalid_argument("forward_flows: dimension mismatch");
  FlowOutputs f;
  f.b_hat = nets.g1(a);
  f.a_hat1 = nets.g2(b);
  f.theta = nets.stn.regress(a, f.a_hat1);
  f.b_r = ad_ops::warp(b, f.theta);
  f.a_hat2 = nets.g2(f.b_r);
  return f;
}

struct Optimizers {
  nn::Adam g1, g2, stn, d1, d2;
  explicit Optimizers(const TrainConfig& cfg)
      : g1(cfg.lr_g), g2(cfg.lr_g), stn(cfg.lr_stn), d1(cfg.lr_d),
        d2(cfg.lr_d) {}
};

namespace detail {

inline void guard(const LossBundle& lb, const AffineParams& theta) {
  bool blown = !lb.finite();
  for (float v : {lb.perc, lb.recon, lb.morph, lb.fourier, lb.adv_g, lb.adv_d})
    if (std::abs(v) > 1e4f) blown = true;
  if (!blown) return;
  std::string diag = "training aborted: non-finite or exploded loss; ";
  diag += "perc=" + std::to_string(lb.perc) +
          " recon=" + std::to_string(lb.recon) +
          " morph=" + std::to_string(lb.morph) +
          " fourier=" + std::to_string(lb.fourier) +
          " adv_g=" + std::to_string(lb.adv_g) +
          " adv_d=" + std::to_string(lb.adv_d) + "; theta=[";
  for (int i = 0; i < 6; ++i)
    diag += std::to_string(theta.t[i]) + (i < 5 ? "," : "]");
  throw NumericError(diag);
}

}  // namespace detail

// One optimization step on a batch: a discriminator update on detached
// fakes, then a generator+STN update on the full graph.
inline LossBundle train_step(const std::vector<std::pair<Image, Image>>& batch,
                             Nets& nets, Optimizers& opt,
                             const TrainConfig& cfg,
                             const losses::FeatureExtractor& feat) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  LossBundle lb;
  lb.weights = cfg.weights;

  // ---- discriminator update (fakes detached)
  {
    std::vector<ad::Var> terms;
    for (auto& [av, bv] : batch) {
      auto a = ad::from_image(av), b = ad::from_image(bv);
      auto flows = forward_flows(a, b, nets);
      auto d1_pair = losses::relativistic_adv_losses(
          nets.d1(b), nets.d1(ad::detach(flows.b_hat)));
      auto d2_pair_1 = losses::relativistic_adv_losses(
          nets.d2(a), nets.d2(ad::detach(flows.a_hat1)));
      auto d2_pair_2 = losses::relativistic_adv_losses(
          nets.d2(a), nets.d2(ad::detach(flows.a_hat2)));
      terms.push_back(ad::scale(
          ad::add(d1_pair.adv_d,
                  ad::scale(ad::add(d2_pair_1.adv_d, d2_pair_2.adv_d), 0.5f)),
          0.5f));
    }
    auto adv_d = ad::mean_of(terms);
    lb.adv_d = adv_d->v[0];
    nets.d1.ps.zero_grad();
    nets.d2.ps.zero_grad();
    ad::backward(adv_d);
    opt.d1.step(nets.d1.ps);
    opt.d2.step(nets.d2.ps);
  }

  // ---- generator + STN update against the refreshed discriminators
  std::vector<ad::Var> adv_terms, perc_terms, recon_terms, morph_terms,
      fourier_terms;
  AffineParams last_theta;
  for (auto& [av, bv] : batch) {
    auto a = ad::from_image(av), b = ad::from_image(bv);
    auto flows = forward_flows(a, b, nets);
    last_theta = flows.theta_params();
    auto g1_pair = losses::relativistic_adv_losses(nets.d1(b),
                                                   nets.d1(flows.b_hat));
    auto g2_pair_1 = losses::relativistic_adv_losses(nets.d2(a),
                                                     nets.d2(flows.a_hat1));
    auto g2_pair_2 = losses::relativistic_adv_losses(nets.d2(a),
                                                     nets.d2(flows.a_hat2));
    adv_terms.push_back(ad::scale(
        ad::add(g1_pair.adv_g,
                ad::scale(ad::add(g2_pair_1.adv_g, g2_pair_2.adv_g), 0.5f)),
        0.5f));
    perc_terms.push_back(
        losses::perceptual_loss(flows.b_hat, b, a, flows.a_hat2, feat));
    recon_terms.push_back(losses::recon_loss(a, flows.a_hat2));
    morph_terms.push_back(losses::morph_triplet_loss(flows.b_r, a, b));
    if (cfg.fourier)
      fourier_terms.push_back(losses::fourier_loss(a, flows.a_hat1));
  }
  auto adv_g = ad::mean_of(adv_terms);
  auto perc = ad::mean_of(perc_terms);
  auto recon = ad::mean_of(recon_terms);
  auto morph = ad::mean_of(morph_terms);
  ad::Var total =
      ad::add(adv_g,
              ad::add(ad::scale(perc, cfg.weights.perc),
                      ad::add(ad::scale(recon, cfg.weights.recon),
                              ad::scale(morph, cfg.weights.morph))));
  lb.adv_g = adv_g->v[0];
  lb.perc = perc->v[0];
  lb.recon = recon->v[0];
  lb.morph = morph->v[0];
  if (cfg.fourier) {
    auto fourier = ad::mean_of(fourier_terms);
    total = ad::add(total, ad::scale(fourier, cfg.weights.fourier));
    lb.fourier = fourier->v[0];
  }
  lb.total_g = total->v[0];
  detail::guard(lb, last_theta);

  nets.g1.ps.zero_grad();
  nets.g2.ps.zero_grad();
  nets.stn.ps.zero_grad();
  ad::backward(total);
  opt.g1.step(nets.g1.ps);
  opt.g2.step(nets.g2.ps);
  opt.stn.step(nets.stn.ps);
  return lb;
}

// ---------------------------------------------------------------------------
// Run directory bookkeeping

inline nlohmann::json config_json(const TrainConfig& cfg) {
  return {{"direction", cfg.direction == Direction::thermal_to_visible
                            ? "thermal_to_visible"
                            : "visible_to_thermal"},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr_g", cfg.lr_g},
          {"lr_d", cfg.lr_d},
          {"lr_stn", cfg.lr_stn},
          {"stn_warm_epochs", cfg.stn_warm_epochs},
          {"fourier", cfg.fourier},
          {"seed", cfg.seed},
          {"mixed_precision", cfg.mixed_precision},
          {"checkpoint_every", cfg.checkpoint_every},
          {"image_size", cfg.image_size},
          {"weights",
           {{"perc", cfg.weights.perc},
            {"recon", cfg.weights.recon},
            {"morph", cfg.weights.morph},
            {"fourier", cfg.weights.fourier}}}};
}

struct RunDir {
  std::filesystem::path root;
  std::ofstream log;

  RunDir(const std::filesystem::path& dir, const TrainConfig& cfg)
      : root(dir) {
    std::filesystem::create_directories(root / "checkpoints");
    std::ofstream cf(root / "config.snapshot");
    cf << config_json(cfg).dump(2) << '\n';
    log.open(root / "log.jsonl");
    if (!log) throw DataError("cannot open run log in " + root.string());
  }

  void log_step(int step, int epoch, const LossBundle& lb) {
    nlohmann::json j = {{"step", step},       {"epoch", epoch},
                        {"perc", lb.perc},    {"recon", lb.recon},
                        {"morph", lb.morph},  {"fourier", lb.fourier},
                        {"adv_g", lb.adv_g},  {"adv_d", lb.adv_d},
                        {"total_g", lb.total_g}};
    log << j.dump() << '\n';
    log.flush();
  }

  std::filesystem::path checkpoint_dir(int epoch) const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "epoch_%03d", epoch);
    return root / "checkpoints" / buf;
  }
};

// Full training loop over an in-memory set of oriented (fixed, moving)
// pairs; batches cycle deterministically from the config seed.
inline void train(const std::vector<std::pair<Image, Image>>& pairs,
                  Nets& nets, const TrainConfig& cfg, RunDir& run) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train: no pairs");
  // During warm epochs the regressor's learning rate is zero so the GANs can
  // settle into a stable translation before theta starts moving.  The main
  // optimizer starts with fresh Adam state at the handover.
  TrainConfig warm_cfg = cfg;
  warm_cfg.lr_stn = 0.f;
  Optimizers warm_opt(warm_cfg), main_opt(cfg);
  losses::FeatureExtractor feat(cfg.seed + 101);
  auto rng = seeded_rng(cfg.seed, 3);
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Optimizers& opt = epoch < cfg.stn_warm_epochs ? warm_opt : main_opt;
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t at = 0; at < order.size();
         at += static_cast<size_t>(cfg.batch_size)) {
      std::vector<std::pair<Image, Image>> batch;
      for (size_t i = at;
           i < std::min(at + static_cast<size_t>(cfg.batch_size), order.size());
           ++i)
        batch.push_back(pairs[order[i]]);
      auto lb = train_step(batch, nets, opt, cfg, feat);
      run.log_step(step++, epoch, lb);
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
      nets.save(run.checkpoint_dir(epoch + 1));
  }
}

// ---------------------------------------------------------------------------
// Batch registration with trained weights

struct RegisterSummary {
  int written = 0;
  std::vector<std::string> skipped;  // pair ids that failed to load
};

// For each manifest pair: regress theta, warp the moving image, write it
// out, and append theta to a deterministic sidecar table.
inline RegisterSummary register_dataset(const PairManifest& manifest,
                                        Nets& nets, Direction direction,
                                        const std::filesystem::path& out_dir,
                                        int image_size) {
  std::filesystem::create_directories(out_dir);
  std::ofstream sidecar(out_dir / "theta_sidecar.csv");
  if (!sidecar) throw DataError("cannot write theta sidecar");
  sidecar << "pair_id,a11,a12,tx,a21,a22,ty\n";
  RegisterSummary sum;
  for (auto& rec : manifest.records) {
    Image vis, thr;
    try {
      std::tie(vis, thr) = load_pair(rec, image_size);
    } catch (const std::exception& e) {
      std::cerr << "skipping " << rec.pair_id << ": " << e.what() << '\n';
      sum.skipped.push_back(rec.pair_id);
      continue;
    }
    auto [fixed, moving] = orient_pair(vis, thr, direction);
    auto a = ad::from_image(fixed), b = ad::from_image(moving);
    auto a_hat1 = nets.g2(b);
    auto theta_var = nets.stn.regress(a, a_hat1);
    AffineParams theta;
    std::copy(theta_var->v.begin(), theta_var->v.end(), theta.t.begin());
    Image b_r = warp_affine(moving, theta);
    write_image((out_dir / (rec.pair_id + "_registered.png")).string(), b_r);
    char row[256];
    std::snprintf(row, sizeof row, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  rec.pair_id.c_str(), theta.t[0], theta.t[1], theta.t[2],
                  theta.t[3], theta.t[4], theta.t[5]);
    sidecar << row;
    ++sum.written;
  }
  return sum;
}

}  // namespace xsreg
