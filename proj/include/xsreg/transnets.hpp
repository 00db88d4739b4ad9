// Translation networks: a 5-encoder / 4-decoder U-NET generator pair and
// PatchGAN discriminators, both with optional anti-aliased (blur-pooled)
// downsampling. The two generators (and the two discriminators) are
// architecturally identical; only their weights differ.
#pragma once

#include "xsreg/autodiff.hpp"
#include "xsreg/nn.hpp"

namespace xsreg {

struct GeneratorConfig {
  int encoder_blocks = 5;  // first block keeps resolution, rest halve it
  int decoder_blocks = 4;
  int base_channels = 64;
  bool use_blurpool = true;
};

struct DiscriminatorConfig {
  int image_size = 256;
  int base_channels = 64;
  bool use_blurpool = true;

  int patch_out() const { return image_size / 16; }  // four halvings
};

namespace tnets {

// Halve spatial resolution: either a plain stride-2 conv or a stride-1
// conv followed by a binomial blur-pool (low-pass before subsampling).
struct Down {
  nn::Conv2d conv;
  nn::InstanceNorm norm;
  bool blur = true, normed = true;

  Down() = default;
  Down(nn::ParamStore& ps, const std::string& name, int in, int out,
       bool use_blurpool, bool use_norm, std::mt19937& rng)
      : blur(use_blurpool), normed(use_norm) {
    conv = nn::Conv2d(ps, name + ".conv", in, out, 3, blur ? 1 : 2, 1, rng);
    if (normed) norm = nn::InstanceNorm(ps, name + ".norm", out);
  }

  ad::Var operator()(const ad::Var& x) const {
    auto h = conv(x);
    if (blur) h = ad::blurpool2(h);
    if (normed) h = norm(h);
    return ad::leaky_relu(h, 0.2f);
  }
};

}  // namespace tnets

struct Generator {
  GeneratorConfig cfg;
  nn::ParamStore ps;
  nn::Conv2d stem, final_conv;
  nn::InstanceNorm stem_norm;
  std::vector<tnets::Down> downs;
  std::vector<nn::Conv2d> up_convs, fuse_convs;
  std::vector<nn::InstanceNorm> up_norms, fuse_norms;

  explicit Generator(GeneratorConfig config = {}, uint64_t seed = 0)
      : cfg(config) {
    if (cfg.encoder_blocks != 5 || cfg.decoder_blocks != 4)
      throw ConfigError("generator: ladder is fixed at 5 encoders / 4 decoders");
    auto rng = seeded_rng(seed, 21);
    int b = cfg.base_channels;
    std::array<int, 5> ch = {b, 2 * b, 4 * b, 8 * b, 8 * b};

    stem = nn::Conv2d(ps, "enc0.conv", 3, ch[0], 3, 1, 1, rng);
    stem_norm = nn::InstanceNorm(ps, "enc0.norm", ch[0]);
    for (int i = 1; i < 5; ++i)
      downs.emplace_back(ps, "enc" + std::to_string(i), ch[i - 1], ch[i],
                         cfg.use_blurpool, true, rng);

    // decoder i upsamples and fuses the skip from encoder 4-i
    std::array<int, 4> dec_out = {4 * b, 2 * b, b, b};
    int in = ch[4];
    for (int i = 0; i < 4; ++i) {
      int skip = ch[3 - i];
      up_convs.emplace_back(ps, "dec" + std::to_string(i) + ".up", in,
                            dec_out[i], 3, 1, 1, rng);
      up_norms.emplace_back(ps, "dec" + std::to_string(i) + ".upnorm",
                            dec_out[i]);
      fuse_convs.emplace_back(ps, "dec" + std::to_string(i) + ".fuse",
                              dec_out[i] + skip, dec_out[i], 3, 1, 1, rng);
      fuse_norms.emplace_back(ps, "dec" + std::to_string(i) + ".fusenorm",
                              dec_out[i]);
      in = dec_out[i];
    }
    final_conv = nn::Conv2d(ps, "out.conv", in, 3, 3, 1, 1, rng);
  }

  ad::Var operator()(const ad::Var& x) const {
    if (x->shape.size() != 3 || x->shape[0] != 3)
      throw std::invalid_argument("generator: expected 3-channel CHW input");
    if (x->shape[1] % 16 != 0 || x->shape[2] % 16 != 0)
      throw ConfigError("generator: spatial dims must be divisible by 16");
    std::vector<ad::Var> skips;
    auto h = ad::leaky_relu(stem_norm(stem(x)), 0.2f);
    skips.push_back(h);
    for (auto& d : downs) {
      h = d(h);
      skips.push_back(h);
    }
    for (size_t i = 0; i < up_convs.size(); ++i) {
      h = ad::relu(up_norms[i](up_convs[i](ad::upsample_nearest2x(h))));
      h = ad::concat0({h, skips[3 - i]});
      h = ad::relu(fuse_norms[i](fuse_convs[i](h)));
    }
    return ad::tanh_(final_conv(h));
  }
};

struct Discriminator {
  DiscriminatorConfig cfg;
  nn::ParamStore ps;
  std::vector<tnets::Down> downs;
  nn::Conv2d head;

  explicit Discriminator(DiscriminatorConfig config = {}, uint64_t seed = 0)
      : cfg(config) {
    if (cfg.image_size % 16 != 0)
      throw ConfigError("discriminator: image_size must be divisible by 16");
    auto rng = seeded_rng(seed, 22);
    int b = cfg.base_channels;
    std::array<int, 4> ch = {b, 2 * b, 4 * b, 8 * b};
    int in = 3;
    for (int i = 0; i < 4; ++i) {
      // first block unnormalized, as is conventional for patch critics
      downs.emplace_back(ps, "d" + std::to_string(i), in, ch[i],
                         cfg.use_blurpool, i > 0, rng);
      in = ch[i];
    }
    head = nn::Conv2d(ps, "head", in, 1, 3, 1, 1, rng);
  }

  // 3-channel image at the configured resolution -> {1, S/16, S/16} logits.
  ad::Var operator()(const ad::Var& x) const {
    if (x->shape.size() != 3 || x->shape[0] != 3 ||
        x->shape[1] != cfg.image_size || x->shape[2] != cfg.image_size)
      throw std::invalid_argument(
          "discriminator: expected 3-channel input at configured resolution");
    auto h = x;
    for (auto& d : downs) h = d(h);
    return head(h);
  }
};

}  // namespace xsreg
