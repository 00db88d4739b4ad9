#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "xsreg/autodiff.hpp"
#include "xsreg/nn.hpp"

using namespace xsreg;
using ad::Var;

namespace {

// Central finite differences of a scalar-valued graph builder w.r.t. one
// leaf. Rebuilds the graph per probe.
std::vector<float> fd_grad(const Var& leaf,
                           const std::function<Var()>& build,
                           float h = 1e-3f) {
  std::vector<float> g(leaf->numel());
  for (size_t i = 0; i < leaf->v.size(); ++i) {
    float keep = leaf->v[i];
    leaf->v[i] = keep + h;
    float up = build()->v[0];
    leaf->v[i] = keep - h;
    float dn = build()->v[0];
    leaf->v[i] = keep;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b,
                 float rel_tol) {
  double na = 0, nd = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    nd += (a[i] - b[i]) * (a[i] - b[i]);
    na += b[i] * b[i];
  }
  REQUIRE(std::sqrt(nd) <= rel_tol * std::max(std::sqrt(na), 1e-4));
}

Var random_leaf(std::vector<int> shape, std::mt19937& rng, float scale = 1.f) {
  auto v = ad::make_leaf(std::move(shape), true);
  std::normal_distribution<float> d(0.f, scale);
  for (auto& x : v->v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
  auto rng = seeded_rng(1);
  auto x = random_leaf({3, 5}, rng);
  auto y = random_leaf({3, 5}, rng);
  auto build = [&] {
    auto z = ad::mul(ad::tanh_(x), ad::sigmoid(y));
    z = ad::add(z, ad::abs_(ad::sub(x, y)));
    return ad::mean(ad::square(z));
  };
  auto loss = build();
  ad::backward(loss);
  check_close(x->g, fd_grad(x, build), 1e-2f);
  check_close(y->g, fd_grad(y, build), 1e-2f);
}

TEST_CASE("matmul, linear, softmax, layernorm gradients") {
  auto rng = seeded_rng(2);
  auto a = random_leaf({4, 3}, rng);
  auto b = random_leaf({3, 5}, rng);
  auto w = random_leaf({2, 5}, rng);
  auto bias = random_leaf({2}, rng);
  auto gamma = random_leaf({5}, rng, 0.3f);
  auto beta = random_leaf({5}, rng, 0.3f);
  for (auto& g : gamma->v) g += 1.f;
  auto build = [&] {
    auto m = ad::matmul(a, b);                     // {4,5}
    m = ad::layernorm_rows(m, gamma, beta);
    m = ad::softmax_rows(m);
    auto o = ad::linear(m, w, bias);               // {4,2}
    return ad::mean(ad::square(o));
  };
  auto loss = build();
  ad::backward(loss);
  check_close(a->g, fd_grad(a, build), 2e-2f);
  check_close(b->g, fd_grad(b, build), 2e-2f);
  check_close(w->g, fd_grad(w, build), 2e-2f);
  check_close(gamma->g, fd_grad(gamma, build), 2e-2f);
  check_close(beta->g, fd_grad(beta, build), 2e-2f);
}

TEST_CASE("conv2d and instance norm gradients") {
  auto rng = seeded_rng(3);
  auto x = random_leaf({2, 6, 6}, rng);
  auto w = random_leaf({3, 2, 3, 3}, rng, 0.5f);
  auto b = random_leaf({3}, rng, 0.2f);
  auto gamma = random_leaf({3}, rng, 0.2f);
  auto beta = random_leaf({3}, rng, 0.2f);
  for (auto& g : gamma->v) g += 1.f;
  auto build = [&] {
    auto y = ad::conv2d(x, w, b, 2, 1);
    y = ad::instance_norm(y, gamma, beta);
    y = ad::leaky_relu(y);
    return ad::mean(ad::square(y));
  };
  auto loss = build();
  ad::backward(loss);
  check_close(x->g, fd_grad(x, build), 2e-2f);
  check_close(w->g, fd_grad(w, build), 2e-2f);
  check_close(b->g, fd_grad(b, build), 2e-2f);
}

TEST_CASE("blurpool, upsample, maxfilt, concat, slice gradients") {
  auto rng = seeded_rng(4);
  auto x = random_leaf({2, 6, 6}, rng);
  auto build = [&] {
    auto y = ad::blurpool2(x);             // {2,3,3}
    y = ad::upsample_nearest2x(y);         // {2,6,6}
    auto m = ad::maxfilt3x3(x);
    auto c = ad::concat0({y, m});          // {4,6,6}
    auto r = ad::reshape(c, {4, 36});
    auto s = ad::slice_cols(r, 3, 30);
    s = ad::slice_rows(s, 1, 4);
    return ad::mean(ad::square(s));
  };
  auto loss = build();
  ad::backward(loss);
  check_close(x->g, fd_grad(x, build), 2e-2f);
}

TEST_CASE("softplus and atan2 gradients") {
  auto rng = seeded_rng(5);
  auto x = random_leaf({8}, rng);
  auto y = random_leaf({8}, rng);
  auto build = [&] {
    return ad::mean(ad::add(ad::softplus(x), ad::atan2_(y, x)));
  };
  auto loss = build();
  ad::backward(loss);
  check_close(x->g, fd_grad(x, build), 2e-2f);
  check_close(y->g, fd_grad(y, build), 2e-2f);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  auto x = ad::make_leaf({1}, true);
  x->v[0] = 0.7f;
  auto y = ad::mul(x, x);        // x^2
  auto z = ad::add(y, y);        // 2x^2
  ad::backward(ad::sum(z));
  REQUIRE(x->g[0] == Catch::Approx(4 * 0.7).margin(1e-5));
}

TEST_CASE("adam minimizes a quadratic") {
  nn::ParamStore ps;
  auto x = ps.add("x", {4});
  for (auto& v : x->v) v = 2.f;
  nn::Adam opt(0.05f, 0.9f, 0.999f);
  for (int i = 0; i < 400; ++i) {
    ps.zero_grad();
    auto loss = ad::mean(ad::square(ad::add_scalar(x, -1.f)));
    ad::backward(loss);
    opt.step(ps);
  }
  for (auto v : x->v) REQUIRE(v == Catch::Approx(1.f).margin(1e-2));
}
