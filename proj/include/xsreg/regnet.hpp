// Registration network: a ViT backbone over the channel-concatenated image
// pair followed by an MLP regressor that emits affine parameters. The raw
// regressor output is squashed and added to the identity transform so a
// freshly initialized network starts at (approximately) the identity.
#pragma once

#include "xsreg/autodiff.hpp"
#include "xsreg/geometry.hpp"
#include "xsreg/nn.hpp"

namespace xsreg {

struct RegnetConfig {
  int image_size = 256;
  int patch_size = 64;
  int vit_depth = 12;
  int embed_dim = 768;
  int heads = 12;
  int mlp_ratio = 4;
  std::vector<int> mlp_widths = {1024, 512, 256};
  bool deeper_regressor = false;  // appends two extra linear stages

  int patch_tokens() const {
    int n = image_size / patch_size;
    return n * n;
  }
  int token_count() const { return patch_tokens() + 1; }  // + class token

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw ConfigError("regnet: image_size must be divisible by patch_size");
    if (embed_dim % heads != 0)
      throw ConfigError("regnet: embed_dim must be divisible by heads");
    if (vit_depth < 1 || mlp_widths.empty())
      throw ConfigError("regnet: need at least one transformer block and one "
                        "regressor width");
  }
};

namespace regnet {

// Cut the 6-channel pair image into non-overlapping p x p patches and
// project each flattened patch to a token row. Output {T, patch_dim}.
inline ad::Var patch_rows(const ad::Var& x, int p) {
  int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  if (H % p != 0 || W % p != 0)
    throw ConfigError("patchify: dims not divisible by patch size");
  int ny = H / p, nx = W / p, T = ny * nx, D = C * p * p;
  auto out = ad::detail::make_op({T, D}, {x}, [x, p, C, H, W, ny, nx, D](ad::Node& n) {
    if (!x->requires_grad) return;
    for (int t = 0; t < ny * nx; ++t) {
      int py = (t / nx) * p, px = (t % nx) * p;
      size_t o = static_cast<size_t>(t) * D;
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j)
            x->g[(static_cast<size_t>(c) * H + py + i) * W + px + j] +=
                n.g[o + (static_cast<size_t>(c) * p + i) * p + j];
    }
  });
  for (int t = 0; t < T; ++t) {
    int py = (t / nx) * p, px = (t % nx) * p;
    size_t o = static_cast<size_t>(t) * D;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          out->v[o + (static_cast<size_t>(c) * p + i) * p + j] =
              x->v[(static_cast<size_t>(c) * H + py + i) * W + px + j];
  }
  return out;
}

// One pre-norm transformer block: x += MHA(LN(x)); x += MLP(LN(x)).
struct Block {
  nn::LayerNorm ln1, ln2;
  nn::Linear qkv, proj, fc1, fc2;
  int heads = 12, dim = 768;

  Block() = default;
  Block(nn::ParamStore& ps, const std::string& name, int dim_, int heads_,
        int mlp_ratio, std::mt19937& rng)
      : heads(heads_), dim(dim_) {
    ln1 = nn::LayerNorm(ps, name + ".ln1", dim);
    ln2 = nn::LayerNorm(ps, name + ".ln2", dim);
    qkv = nn::Linear(ps, name + ".qkv", dim, 3 * dim, rng, 0.02f);
    proj = nn::Linear(ps, name + ".proj", dim, dim, rng, 0.02f);
    fc1 = nn::Linear(ps, name + ".fc1", dim, mlp_ratio * dim, rng, 0.02f);
    fc2 = nn::Linear(ps, name + ".fc2", mlp_ratio * dim, dim, rng, 0.02f);
  }

  ad::Var attention(const ad::Var& x) const {
    auto h = qkv(ln1(x));  // {T, 3*dim}
    auto q = ad::slice_cols(h, 0, dim);
    auto k = ad::slice_cols(h, dim, 2 * dim);
    auto v = ad::slice_cols(h, 2 * dim, 3 * dim);
    int dh = dim / heads;
    float scl = 1.f / std::sqrt(static_cast<float>(dh));
    std::vector<ad::Var> head_outs;
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = ad::slice_cols(q, hd * dh, (hd + 1) * dh);
      auto kh = ad::slice_cols(k, hd * dh, (hd + 1) * dh);
      auto vh = ad::slice_cols(v, hd * dh, (hd + 1) * dh);
      auto att = ad::softmax_rows(
          ad::scale(ad::matmul(qh, ad::transpose(kh)), scl));
      head_outs.push_back(ad::matmul(att, vh));
    }
    // heads live in disjoint column blocks; stitch them back side by side
    auto cat = ad::transpose(ad::concat0(
        [&] {
          std::vector<ad::Var> t;
          for (auto& ho : head_outs) t.push_back(ad::transpose(ho));
          return t;
        }()));
    return proj(cat);
  }

  ad::Var operator()(const ad::Var& x) const {
    auto y = ad::add(x, attention(x));
    return ad::add(y, fc2(ad::relu(fc1(ln2(y)))));
  }
};

}  // namespace regnet

struct Regnet {
  RegnetConfig cfg;
  nn::ParamStore ps;
  nn::Linear patch_embed;
  ad::Var cls_token, pos_embed;
  std::vector<regnet::Block> blocks;
  std::vector<nn::Linear> mlp;
  nn::Linear head;

  explicit Regnet(RegnetConfig config = {}, uint64_t seed = 0) : cfg(config) {
    cfg.validate();
    auto rng = seeded_rng(seed, 11);
    int D = cfg.embed_dim, p = cfg.patch_size;
    patch_embed = nn::Linear(ps, "patch_embed", 6 * p * p, D, rng, 0.02f);
    cls_token = ps.add("cls_token", {1, D});
    nn::init_normal(cls_token, rng, 0.02f);
    pos_embed = ps.add("pos_embed", {cfg.token_count(), D});
    nn::init_normal(pos_embed, rng, 0.02f);
    for (int i = 0; i < cfg.vit_depth; ++i)
      blocks.emplace_back(ps, "block" + std::to_string(i), D, cfg.heads,
                          cfg.mlp_ratio, rng);
    std::vector<int> widths = cfg.mlp_widths;
    if (cfg.deeper_regressor) {
      widths.push_back(std::max(widths.back() / 2, 8));
      widths.push_back(std::max(widths.back() / 2, 8));
    }
    int in = cfg.token_count() * D;
    for (size_t i = 0; i < widths.size(); ++i) {
      mlp.emplace_back(ps, "mlp" + std::to_string(i), in, widths[i], rng,
                       0.02f);
      in = widths[i];
    }
    // tiny final weights keep the initial transform at the identity while
    // leaving the output input-dependent
    head = nn::Linear(ps, "head", in, 6, rng, 1e-3f);
    nn::init_fill(head.b, 0.f);
  }

  // Token features for the concatenated pair; {T+1, D}.
  ad::Var tokens(const ad::Var& pair) const {
    auto t = patch_embed(regnet::patch_rows(pair, cfg.patch_size));
    auto seq = ad::add(ad::concat0({cls_token, t}), pos_embed);
    for (auto& b : blocks) seq = b(seq);
    return seq;
  }

  // theta = identity + 0.5 * tanh(raw); every entry stays within 0.5 of
  // the identity transform, which bounds translations to the half-frame.
  ad::Var regress(const ad::Var& a, const ad::Var& a_hat1) const {
    if (a->shape != a_hat1->shape || a->shape.size() != 3 ||
        a->shape[0] != 3 || a->shape[1] != cfg.image_size ||
        a->shape[2] != cfg.image_size)
      throw std::invalid_argument(
          "regress: expected two 3-channel images at the configured size");
    auto pair = ad::concat0({a, a_hat1});
    auto seq = tokens(ad::reshape(pair, {6, cfg.image_size, cfg.image_size}));
    auto h = ad::reshape(seq, {1, cfg.token_count() * cfg.embed_dim});
    for (size_t i = 0; i + 1 < mlp.size(); ++i) h = ad::relu(mlp[i](h));
    h = ad::sigmoid(mlp.back()(h));
    auto raw = head(h);  // {1, 6}
    auto id = ad::make_leaf({1, 6});
    id->v = {1.f, 0.f, 0.f, 0.f, 1.f, 0.f};
    return ad::reshape(ad::add(id, ad::scale(ad::tanh_(raw), 0.5f)), {6});
  }

  AffineParams regress_theta(const Image& a, const Image& a_hat1) const {
    auto th = regress(ad::from_image(a), ad::from_image(a_hat1));
    AffineParams out;
    std::copy(th->v.begin(), th->v.end(), out.t.begin());
    return out;
  }
};

}  // namespace xsreg
