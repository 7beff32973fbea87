#include <cmath>

#include "doctest.h"
#include "glip/model/dual_path.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

using namespace glip;
using glip::testing::random_tensor;

namespace {

DualPathConfig small_cfg(std::size_t N = 2, std::size_t D = 8) {
  DualPathConfig c;
  c.dim = D;
  c.regions = N;
  c.heads = 2;
  c.ff_hidden = 12;
  return c;
}

}  // namespace

TEST_CASE("GAP of a per-frame constant map is that constant") {
  std::vector<double> v;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 9; ++p) v.push_back(10.0 * t + c);
  auto g = global_average_pool(Tensor::from({2, 3, 3, 3}, v));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.at({t, c}) == doctest::Approx(10.0 * t + c).epsilon(1e-15));
}

TEST_CASE("global branch with an identity projector is the spatial mean; 2x2 oracle") {
  nn::ParamStore ps;
  Rng rng(1);
  auto dp = DualPath::create(ps, "dp", small_cfg(2, 4), 4, 3, rng);
  Tensor w = dp.global_proj.w;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) w.mutable_data()[i * 4 + j] = i == j ? 1.0 : 0.0;
  auto F = random_tensor({3, 4, 2, 2}, rng, 1.0, false);
  auto G = dp.global_branch(F);
  CHECK(G.shape() == Shape{3, 4});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 4; ++c) {
      const double avg = (F.at({t, c, 0, 0}) + F.at({t, c, 0, 1}) + F.at({t, c, 1, 0}) + F.at({t, c, 1, 1})) / 4.0;
      CHECK(std::abs(G.at({t, c}) - avg) < 1e-14);
    }
}

TEST_CASE("region decoding over a single position") {
  nn::ParamStore ps;
  Rng rng(2);
  auto cfg = small_cfg(3, 8);
  auto dp = DualPath::create(ps, "dp", cfg, 8, 8, rng);
  auto F = random_tensor({2, 8, 1, 1}, rng, 1.0, false);
  Tensor weights;
  // Cross-attention over one key: every weight is exactly 1.
  Tensor mem = reshape(permute(reshape(F, {2, 8, 1}), {0, 2, 1}), {2, 1, 8});
  Tensor q = add(Tensor::zeros({2, 3, 8}), dp.queries);
  (void)dp.decoder.layer.cross_attn(q, mem, {}, &weights);
  for (double v : weights.data()) CHECK(v == 1.0);
  auto R = region_decode(F, dp.queries, dp.decoder);
  CHECK(R.shape() == Shape{3, 2, 8});
}

TEST_CASE("frames with identical features decode identically") {
  nn::ParamStore ps;
  Rng rng(3);
  auto dp = DualPath::create(ps, "dp", small_cfg(), 8, 8, rng);
  auto one = random_tensor({1, 8, 2, 3}, rng, 1.0, false);
  auto F = concat({one, one}, 0);
  auto R = region_decode(F, dp.queries, dp.decoder);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t d = 0; d < 8; ++d) CHECK(R.at({n, 0, d}) == R.at({n, 1, d}));
}

TEST_CASE("region decoder matches a hand-rolled attention oracle") {
  nn::ParamStore ps;
  Rng rng(4);
  auto dp = DualPath::create(ps, "dp", small_cfg(2, 8), 8, 8, rng);
  for (const auto& [name, t] : ps.all()) {
    Tensor h = t;
    if (name.ends_with(".b") || name.ends_with(".beta") || name.ends_with(".gamma"))
      for (double& v : h.mutable_data()) v += rng.normal(0.0, 0.2);
  }
  auto F = random_tensor({3, 8, 2, 2}, rng, 1.0, false);
  auto R = region_decode(F, dp.queries, dp.decoder);
  const auto& dec = dp.decoder;
  double worst = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    oracle::Mat mem(4, oracle::Vec(8));
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t d = 0; d < 8; ++d) mem[p][d] = F[(t * 8 + d) * 4 + p];
    oracle::Mat q = oracle::rows(dp.queries, 8);
    oracle::Mat y = oracle::decoder_layer(q, mem, dec.layer, false);
    for (std::size_t n = 0; n < 2; ++n) {
      oracle::Vec h = oracle::layer_norm(y[n], dec.norm.gamma, dec.norm.beta);
      h = oracle::linear(h, dec.mlp_in);
      for (double& v : h) v = oracle::gelu(v);
      h = oracle::linear(h, dec.mlp_out);
      for (std::size_t d = 0; d < 8; ++d) worst = std::max(worst, std::abs(R.at({n, t, d}) - h[d]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("soft assignment examples") {
  // Parallel vectors give similarity exactly one.
  auto R = Tensor::from({1, 1, 3}, {1, 2, 3});
  auto Fd = Tensor::from({1, 3, 1, 1}, {2, 4, 6});
  auto [S, M] = soft_assign(R, Fd, MapAxis::Regions);
  CHECK(S[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(M[0] == 1.0);  // N = 1

  // N=2 with similarities {0.8, 0.2}: construct R so that the cosines are exact.
  auto R2 = Tensor::from({2, 1, 2}, {0.8, std::sqrt(1 - 0.64), 0.2, std::sqrt(1 - 0.04)});
  auto F2 = Tensor::from({1, 2, 1, 1}, {1.0, 0.0});
  auto [S2, M2] = soft_assign(R2, F2, MapAxis::Regions);
  CHECK(S2[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(S2[1] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(std::abs(M2[0] - 0.6457) < 1e-4);
  CHECK(std::abs(M2[1] - 0.3543) < 1e-4);

  CHECK_THROWS_AS(soft_assign(Tensor::zeros({2, 1, 3}), Tensor::zeros({1, 4, 1, 1}), MapAxis::Regions), ShapeError);
}

TEST_CASE("soft assignment ranges and normalization on both axes") {
  Rng rng(5);
  auto R = random_tensor({4, 3, 6}, rng, 1.0, false);
  auto Fd = random_tensor({3, 6, 3, 2}, rng, 1.0, false);
  auto [S, M] = soft_assign(R, Fd, MapAxis::Regions);
  for (double v : S.data()) CHECK((v >= -1.0 && v <= 1.0));
  for (double v : M.data()) CHECK(v >= 0.0);
  auto s0 = sum(M, 0);
  for (double v : s0.data()) CHECK(std::abs(v - 1.0) < 1e-9);
  auto [S2, M2] = soft_assign(R, Fd, MapAxis::Spatial);
  auto s2 = sum(reshape(M2, {4, 3, 6}), 2);
  for (double v : s2.data()) CHECK(std::abs(v - 1.0) < 1e-9);
}

TEST_CASE("weighted pooling examples") {
  Rng rng(6);
  auto F = random_tensor({2, 3, 2, 2}, rng, 1.0, false);
  // Uniform weights: plain spatial mean.
  auto uni = weighted_region_pool(Tensor::full({1, 2, 2, 2}, 0.37), F);
  auto gap = global_average_pool(F);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(uni.L.at({t, 0, d}) - gap.at({t, d})) < 1e-14);
  // Point mass.
  std::vector<double> onehot(8, 0.0);
  onehot[2] = onehot[4 + 2] = 1.0;  // (u,v) = (1,0) in both frames
  auto pm = weighted_region_pool(Tensor::from({1, 2, 2, 2}, onehot), F);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t d = 0; d < 3; ++d) CHECK(pm.L.at({t, 0, d}) == F.at({t, d, 1, 0}));
  // Weights 0.1..0.4 against an explicit weighted sum.
  auto w = Tensor::from({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  auto F1 = slice(F, 0, 0, 1);
  auto wp = weighted_region_pool(w, F1);
  for (std::size_t d = 0; d < 3; ++d) {
    const double expect = (0.1 * F1.at({0, d, 0, 0}) + 0.2 * F1.at({0, d, 0, 1}) + 0.3 * F1.at({0, d, 1, 0}) +
                           0.4 * F1.at({0, d, 1, 1})) /
                          1.0;
    CHECK(std::abs(wp.L.at({0, 0, d}) - expect) < 1e-12);
  }
}

TEST_CASE("degenerate maps yield zero vectors and are flagged") {
  Rng rng(7);
  auto F = random_tensor({2, 3, 2, 2}, rng);
  std::vector<double> m(2 * 2 * 4, 0.25);
  for (std::size_t p = 0; p < 4; ++p) m[(1 * 2 + 0) * 4 + p] = 0.0;  // n=1, t=0
  auto M = Tensor::from({2, 2, 2, 2}, m, true);
  auto res = weighted_region_pool(M, F);
  REQUIRE(res.degenerate.size() == 1);
  CHECK(res.degenerate[0] == std::pair<std::size_t, std::size_t>{0, 1});
  for (std::size_t d = 0; d < 3; ++d) CHECK(res.L.at({0, 1, d}) == 0.0);
  sum(res.L).backward();
  for (double g : M.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("pooling is invariant to positive rescaling and stays in the convex hull") {
  Rng rng(8);
  auto F = random_tensor({3, 4, 3, 3}, rng, 1.0, false);
  auto M = exp(random_tensor({5, 3, 3, 3}, rng, 1.0, false));
  auto a = weighted_region_pool(M, F).L;
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    auto b = weighted_region_pool(scale(M, c), F).L;
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
  }
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 4; ++d) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t p = 0; p < 9; ++p) {
        lo = std::min(lo, F[(t * 4 + d) * 9 + p]);
        hi = std::max(hi, F[(t * 4 + d) * 9 + p]);
      }
      for (std::size_t n = 0; n < 5; ++n) {
        const double l = a.at({t, n, d});
        CHECK(l >= lo - 1e-12);
        CHECK(l <= hi + 1e-12);
      }
    }
}

TEST_CASE("pooling gradients match finite differences") {
  Rng rng(9);
  auto F = random_tensor({2, 3, 2, 3}, rng);
  auto Mraw = random_tensor({2, 2, 2, 3}, rng);
  auto proj = random_tensor({2, 2, 3}, rng, 1.0, false);
  auto r = glip::testing::grad_check(
      [&] { return sum(mul(weighted_region_pool(exp(Mraw), F).L, proj)); }, {Mraw, F}, 120);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("frames outside the valid length receive zero gradient") {
  nn::ParamStore ps;
  Rng rng(10);
  auto dp = DualPath::create(ps, "dp", small_cfg(3, 8), 8, 6, rng);
  auto Fp = random_tensor({5, 6, 3, 3}, rng);
  auto bundle = dp.local_branch(Fp);
  const std::size_t valid = 3;
  sum(slice(bundle.L, 0, 0, valid)).backward();
  const std::size_t per_frame = 6 * 9;
  for (std::size_t i = 0; i < Fp.numel(); ++i) {
    if (i / per_frame < valid) continue;
    CHECK(Fp.grad()[i] == 0.0);
  }
  double inside = 0.0;
  for (std::size_t i = 0; i < valid * per_frame; ++i) inside += std::abs(Fp.grad()[i]);
  CHECK(inside > 0.0);
}

TEST_CASE("local branch shapes and gradients") {
  nn::ParamStore ps;
  Rng rng(11);
  auto cfg = small_cfg(5, 8);
  auto dp = DualPath::create(ps, "dp", cfg, 10, 6, rng);
  auto Fp = random_tensor({4, 6, 4, 4}, rng, 1.0, false);
  auto b = dp.local_branch(Fp);
  CHECK(b.R.shape() == Shape{5, 4, 8});
  CHECK(b.S.shape() == Shape{5, 4, 4, 4});
  CHECK(b.M.shape() == Shape{5, 4, 4, 4});
  CHECK(b.L.shape() == Shape{4, 5, 8});
  CHECK(b.degenerate.empty());
  sum(mul(b.L, b.L)).backward();
  CHECK(dp.queries.has_grad());
  CHECK(dp.dense_w.has_grad());
  CHECK(dp.inter_w.has_grad());
}
