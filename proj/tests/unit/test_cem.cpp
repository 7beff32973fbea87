#include <cmath>

#include "doctest.h"
#include "glip/model/cem.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

using namespace glip;
using glip::testing::random_tensor;

namespace {

void zero(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

oracle::Vec matvec(const oracle::Vec& x, const Tensor& W) {
  const std::size_t D = x.size();
  oracle::Vec y(D, 0.0);
  for (std::size_t j = 0; j < D; ++j)
    for (std::size_t i = 0; i < D; ++i) y[j] += x[i] * W[i * D + j];
  return y;
}

}  // namespace

TEST_CASE("zero output projection leaves the normalized input") {
  nn::ParamStore ps;
  Rng rng(1);
  auto layers = create_cem(ps, "cem", 6, 1, rng);
  zero(layers[0].wo);
  auto L = random_tensor({4, 6}, rng, 1.0, false);
  auto G = random_tensor({4, 6}, rng, 1.0, false);
  auto y = cem_layer(L, G, layers[0]);
  auto ln = layer_norm(L, {}, {});
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - ln[i]) < 1e-14);
}

TEST_CASE("single frame: attention is one and the context is G Wv") {
  nn::ParamStore ps;
  Rng rng(2);
  auto layers = create_cem(ps, "cem", 4, 1, rng);
  auto L = random_tensor({1, 4}, rng, 1.0, false);
  auto G = random_tensor({1, 4}, rng, 1.0, false);
  Tensor a;
  auto y = cem_layer(L, G, layers[0], &a);
  CHECK(a[0] == 1.0);
  auto ctx = matvec(oracle::values(G), layers[0].wv);
  auto expect = layer_norm(add(L, matmul(Tensor::from({1, 4}, ctx), layers[0].wo)), {}, {});
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - expect[i]) < 1e-14);
}

TEST_CASE("cem layer matches a hand-computed attention oracle") {
  nn::ParamStore ps;
  Rng rng(3);
  auto layers = create_cem(ps, "cem", 4, 1, rng);
  auto& p = layers[0];
  for (Tensor t : {p.norm.gamma, p.norm.beta})
    for (double& v : t.mutable_data()) v += rng.normal(0.0, 0.3);
  auto L = random_tensor({2, 4}, rng, 1.0, false);
  auto G = random_tensor({2, 4}, rng, 1.0, false);
  auto y = cem_layer(L, G, p);
  auto Lr = oracle::rows(L, 4), Gr = oracle::rows(G, 4);
  for (std::size_t t = 0; t < 2; ++t) {
    auto q = matvec(Lr[t], p.wq);
    oracle::Vec s(2);
    for (std::size_t j = 0; j < 2; ++j) {
      auto k = matvec(Gr[j], p.wk);
      double dot = 0;
      for (std::size_t d = 0; d < 4; ++d) dot += q[d] * k[d];
      s[j] = dot / 2.0;
    }
    auto w = oracle::softmax(s);
    oracle::Vec ctx(4, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
      auto v = matvec(Gr[j], p.wv);
      for (std::size_t d = 0; d < 4; ++d) ctx[d] += w[j] * v[d];
    }
    auto out = oracle::layer_norm(oracle::add(Lr[t], matvec(ctx, p.wo)), p.norm.gamma, p.norm.beta);
    for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(y[t * 4 + d] - out[d]) < 1e-10);
  }
}

TEST_CASE("region averaging examples") {
  nn::ParamStore ps;
  Rng rng(4);
  auto layers = create_cem(ps, "cem", 6, 2, rng);
  auto G = random_tensor({3, 6}, rng, 1.0, false);
  auto one = random_tensor({3, 1, 6}, rng, 1.0, false);
  auto same = cem_forward(concat({one, one, one}, 1), G, layers);
  auto single = cem_forward(one, G, layers);
  for (std::size_t i = 0; i < same.numel(); ++i) CHECK(std::abs(same[i] - single[i]) < 1e-14);

  // With Wq = Wo = 0 each stream reduces to LN(L), which is odd in L.
  nn::ParamStore ps2;
  auto lin = create_cem(ps2, "cem", 6, 1, rng);
  zero(lin[0].wq);
  zero(lin[0].wo);
  auto pos = cem_forward(concat({one, scale(one, -1.0)}, 1), G, lin);
  for (double v : pos.data()) CHECK(std::abs(v) < 1e-14);
}

TEST_CASE("K=1 forward equals the mean of independent layer outputs") {
  nn::ParamStore ps;
  Rng rng(5);
  auto layers = create_cem(ps, "cem", 6, 1, rng);
  auto G = random_tensor({4, 6}, rng, 1.0, false);
  auto L = random_tensor({4, 3, 6}, rng, 1.0, false);
  auto y = cem_forward(L, G, layers);
  std::vector<double> expect(4 * 6, 0.0);
  for (std::size_t n = 0; n < 3; ++n) {
    auto out = cem_layer(reshape(slice(L, 1, n, 1), {4, 6}), G, layers[0]);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += out[i] / 3.0;
  }
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(y[i] - expect[i]) < 1e-12);
}

TEST_CASE("attention rows are distributions") {
  nn::ParamStore ps;
  Rng rng(6);
  auto layers = create_cem(ps, "cem", 6, 1, rng);
  Tensor a;
  (void)cem_layer(random_tensor({3, 5, 6}, rng, 3.0, false), random_tensor({5, 6}, rng, 3.0, false), layers[0], &a);
  CHECK(a.shape() == Shape{3, 5, 5});
  auto s = sum(a, 2);
  for (double v : a.data()) CHECK(v >= 0.0);
  for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-9);
}

TEST_CASE("permuting regions permutes refined streams and keeps the mean") {
  nn::ParamStore ps;
  Rng rng(7);
  auto layers = create_cem(ps, "cem", 6, 2, rng);
  auto G = random_tensor({4, 6}, rng, 1.0, false);
  auto L = random_tensor({4, 3, 6}, rng, 1.0, false);
  auto P = concat({slice(L, 1, 1, 1), slice(L, 1, 2, 1), slice(L, 1, 0, 1)}, 1);
  Tensor ra, rb;
  auto ya = cem_forward(L, G, layers, &ra);
  auto yb = cem_forward(P, G, layers, &rb);
  for (std::size_t i = 0; i < ya.numel(); ++i) CHECK(std::abs(ya[i] - yb[i]) < 1e-12);
  const std::size_t map[3] = {1, 2, 0};
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 24; ++i) CHECK(rb[n * 24 + i] == ra[map[n] * 24 + i]);
}

TEST_CASE("gradients reach G and every region stream") {
  nn::ParamStore ps;
  Rng rng(8);
  auto layers = create_cem(ps, "cem", 6, 1, rng);
  auto G = random_tensor({4, 6}, rng);
  auto L = random_tensor({4, 3, 6}, rng);
  auto proj = random_tensor({4, 6}, rng, 1.0, false);
  sum(mul(cem_forward(L, G, layers), proj)).backward();
  double gG = 0;
  for (double v : G.grad()) gG += std::abs(v);
  CHECK(gG > 1e-8);
  for (std::size_t n = 0; n < 3; ++n) {
    double gl = 0;
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t d = 0; d < 6; ++d) gl += std::abs(L.grad()[(t * 3 + n) * 6 + d]);
    CHECK(gl > 1e-8);
  }
  CHECK(layers[0].wk.has_grad());
  CHECK(layers[0].wv.has_grad());

  auto r = glip::testing::grad_check([&] { return sum(mul(cem_forward(L, G, layers), proj)); }, {G, L}, 100);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("cem rejects mismatched shapes and empty stacks") {
  nn::ParamStore ps;
  Rng rng(9);
  auto layers = create_cem(ps, "cem", 6, 1, rng);
  CHECK_THROWS_AS(cem_layer(Tensor::zeros({3, 6}), Tensor::zeros({4, 6}), layers[0]), ShapeError);
  CHECK_THROWS(cem_forward(Tensor::zeros({3, 2, 6}), Tensor::zeros({3, 6}), {}));
  CHECK_THROWS(create_cem(ps, "other", 6, 0, rng));
}
