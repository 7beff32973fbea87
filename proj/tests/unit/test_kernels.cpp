#include <cmath>
#include <vector>

#include "doctest.h"
#include "glip/core/kernels.hpp"
#include "glip/core/rng.hpp"

using namespace glip;

namespace {
std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

TEST_CASE("parallel gemm matches the serial reference for every transpose combination") {
  Rng rng(1);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const std::size_t M = 37, N = 29, K = 41;
      auto A = random_vec(M * K, rng), B = random_vec(K * N, rng);
      std::vector<double> C1 = random_vec(M * N, rng), C2 = C1;
      kernels::gemm(ta, tb, M, N, K, A.data(), B.data(), C1.data(), true);
      kernels::reference::gemm(ta, tb, M, N, K, A.data(), B.data(), C2.data(), true);
      CHECK(max_abs_diff(C1, C2) < 1e-12);
    }
}

TEST_CASE("parallel conv3d matches the straight-line reference, forward and backward") {
  Rng rng(2);
  kernels::Conv3dGeometry g;
  g.frames = 5;
  g.in_ch = 3;
  g.in_h = 11;
  g.in_w = 9;
  g.out_ch = 4;
  g.kt = 3;
  g.kh = 5;
  g.kw = 3;
  g.stride = 2;
  g.pad_t = 1;
  g.pad_h = 2;
  g.pad_w = 1;
  const std::size_t out_n = g.frames * g.out_ch * g.out_h() * g.out_w();
  auto x = random_vec(g.frames * g.in_ch * g.in_h * g.in_w, rng);
  auto w = random_vec(g.out_ch * g.patch(), rng);
  auto b = random_vec(g.out_ch, rng);
  std::vector<double> y1(out_n), y2(out_n);
  kernels::conv3d_forward(g, x.data(), w.data(), b.data(), y1.data());
  kernels::reference::conv3d_forward(g, x.data(), w.data(), b.data(), y2.data());
  CHECK(max_abs_diff(y1, y2) < 1e-12);

  auto dy = random_vec(out_n, rng);
  std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(b.size()), db2(b.size());
  kernels::conv3d_backward(g, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
  kernels::reference::conv3d_backward(g, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
  CHECK(max_abs_diff(dx1, dx2) < 1e-12);
  CHECK(max_abs_diff(dw1, dw2) < 1e-12);
  CHECK(max_abs_diff(db1, db2) < 1e-12);
}
