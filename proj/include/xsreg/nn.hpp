// Parameter registry, weight init, Adam, and the checkpoint container.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "xsreg/autodiff.hpp"
#include "xsreg/common.hpp"

namespace xsreg::nn {

// Flat registry of named trainable tensors. Networks register their
// weights here so optimizers and checkpoints can address them by path.
struct ParamStore {
  std::vector<std::pair<std::string, ad::Var>> params;

  ad::Var add(const std::string& name, std::vector<int> shape,
              bool trainable = true) {
    auto v = ad::make_leaf(std::move(shape), trainable);
    params.emplace_back(name, v);
    return v;
  }
  ad::Var find(const std::string& name) const {
    for (auto& [n, v] : params)
      if (n == name) return v;
    throw std::invalid_argument("ParamStore: unknown param " + name);
  }
  void zero_grad() {
    for (auto& [n, v] : params)
      if (!v->g.empty()) std::fill(v->g.begin(), v->g.end(), 0.f);
  }
  size_t total_count() const {
    size_t n = 0;
    for (auto& [_, v] : params) n += v->numel();
    return n;
  }
};

inline void init_normal(const ad::Var& v, std::mt19937& rng, float stddev) {
  std::normal_distribution<float> d(0.f, stddev);
  for (auto& x : v->v) x = d(rng);
}

inline void init_fill(const ad::Var& v, float value) {
  std::fill(v->v.begin(), v->v.end(), value);
}

// Kaiming-style fan-in scaling for conv/linear weights.
inline void init_kaiming(const ad::Var& v, std::mt19937& rng) {
  size_t fan_in = 1;
  for (size_t i = 1; i < v->shape.size(); ++i) fan_in *= v->shape[i];
  init_normal(v, rng, std::sqrt(2.f / static_cast<float>(fan_in)));
}

// ---------------------------------------------------------------------------
// Layers (parameter bundles with an apply method)

struct Linear {
  ad::Var w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out,
         std::mt19937& rng, float wstd = -1.f) {
    w = ps.add(name + ".w", {out, in});
    b = ps.add(name + ".b", {out});
    if (wstd >= 0.f)
      init_normal(w, rng, wstd);
    else
      init_normal(w, rng, std::sqrt(1.f / static_cast<float>(in)));
  }
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
};

struct Conv2d {
  ad::Var w, b;
  int stride = 1, pad = 1;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int in, int out, int k,
         int stride_, int pad_, std::mt19937& rng)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", {out, in, k, k});
    b = ps.add(name + ".b", {out});
    init_kaiming(w, rng);
  }
  ad::Var operator()(const ad::Var& x) const {
    return ad::conv2d(x, w, b, stride, pad);
  }
};

struct InstanceNorm {
  ad::Var gamma, beta;
  InstanceNorm() = default;
  InstanceNorm(ParamStore& ps, const std::string& name, int channels) {
    gamma = ps.add(name + ".gamma", {channels});
    beta = ps.add(name + ".beta", {channels});
    init_fill(gamma, 1.f);
  }
  ad::Var operator()(const ad::Var& x) const {
    return ad::instance_norm(x, gamma, beta);
  }
};

struct LayerNorm {
  ad::Var gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int width) {
    gamma = ps.add(name + ".gamma", {width});
    beta = ps.add(name + ".beta", {width});
    init_fill(gamma, 1.f);
  }
  ad::Var operator()(const ad::Var& x) const {
    return ad::layernorm_rows(x, gamma, beta);
  }
};

// ---------------------------------------------------------------------------
// Adam

struct Adam {
  float lr = 2e-4f, beta1 = 0.5f, beta2 = 0.999f, eps = 1e-8f;
  int64_t t = 0;
  std::vector<std::vector<float>> m, v;

  explicit Adam(float lr_ = 2e-4f, float b1 = 0.5f, float b2 = 0.999f)
      : lr(lr_), beta1(b1), beta2(b2) {}

  void step(ParamStore& ps) {
    if (m.size() != ps.params.size()) {
      m.resize(ps.params.size());
      v.resize(ps.params.size());
      for (size_t i = 0; i < ps.params.size(); ++i) {
        m[i].assign(ps.params[i].second->numel(), 0.f);
        v[i].assign(ps.params[i].second->numel(), 0.f);
      }
    }
    ++t;
    float bc1 = 1.f - std::pow(beta1, static_cast<float>(t));
    float bc2 = 1.f - std::pow(beta2, static_cast<float>(t));
    for (size_t i = 0; i < ps.params.size(); ++i) {
      auto& p = ps.params[i].second;
      if (p->g.empty()) continue;
      for (size_t j = 0; j < p->v.size(); ++j) {
        float g = p->g[j];
        m[i][j] = beta1 * m[i][j] + (1.f - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (1.f - beta2) * g * g;
        p->v[j] -= lr * (m[i][j] / bc1) /
                   (std::sqrt(v[i][j] / bc2) + eps);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic, count, then (path, dims, float payload) per
// parameter. Self-describing and order-independent on load.

inline void save_checkpoint(const std::filesystem::path& path,
                            const ParamStore& ps) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_checkpoint: cannot open " + path.string());
  const char magic[8] = {'X', 'S', 'C', 'K', 'P', 'T', '1', '\n'};
  f.write(magic, 8);
  uint32_t count = static_cast<uint32_t>(ps.params.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (auto& [name, v] : ps.params) {
    uint16_t nl = static_cast<uint16_t>(name.size());
    f.write(reinterpret_cast<const char*>(&nl), 2);
    f.write(name.data(), nl);
    uint8_t nd = static_cast<uint8_t>(v->shape.size());
    f.write(reinterpret_cast<const char*>(&nd), 1);
    for (int d : v->shape) {
      int32_t dd = d;
      f.write(reinterpret_cast<const char*>(&dd), 4);
    }
    f.write(reinterpret_cast<const char*>(v->v.data()),
            static_cast<std::streamsize>(v->v.size() * sizeof(float)));
  }
}

inline void load_checkpoint(const std::filesystem::path& path, ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 7) != "XSCKPT1")
    throw DataError("load_checkpoint: bad magic in " + path.string());
  uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  std::map<std::string, ad::Var> byname;
  for (auto& [n, v] : ps.params) byname[n] = v;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nl;
    f.read(reinterpret_cast<char*>(&nl), 2);
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    uint8_t nd;
    f.read(reinterpret_cast<char*>(&nd), 1);
    std::vector<int> shape(nd);
    for (auto& d : shape) {
      int32_t dd;
      f.read(reinterpret_cast<char*>(&dd), 4);
      d = dd;
    }
    auto it = byname.find(name);
    if (it == byname.end())
      throw DataError("load_checkpoint: unknown param " + name);
    if (it->second->shape != shape)
      throw DataError("load_checkpoint: shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(it->second->v.data()),
           static_cast<std::streamsize>(it->second->v.size() * sizeof(float)));
  }
  if (!f) throw DataError("load_checkpoint: truncated file " + path.string());
}

}  // namespace xsreg::nn
