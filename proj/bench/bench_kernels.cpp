// Times the OpenMP kernels against the serial reference versions on shapes
// taken from the model (front-end convolutions, encoder projections).

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "glip/core/kernels.hpp"
#include "glip/core/rng.hpp"

using namespace glip;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

// Median wall time in milliseconds over `reps` runs after one warm-up.
double time_ms(const std::function<void()>& fn, int reps) {
  fn();
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[reps / 2];
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void row(const char* name, double serial, double parallel, double diff) {
  std::printf("%-34s %10.3f %10.3f %8.2fx %10.1e\n", name, serial, parallel, serial / parallel, diff);
}

void bench_gemm(std::size_t M, std::size_t N, std::size_t K, bool ta, bool tb, int reps) {
  Rng rng(1);
  auto A = random_vec(M * K, rng), B = random_vec(K * N, rng);
  std::vector<double> c1(M * N), c2(M * N);
  const double s = time_ms([&] { kernels::reference::gemm(ta, tb, M, N, K, A.data(), B.data(), c1.data(), false); }, reps);
  const double p = time_ms([&] { kernels::gemm(ta, tb, M, N, K, A.data(), B.data(), c2.data(), false); }, reps);
  char name[64];
  std::snprintf(name, sizeof name, "gemm%s%s %zux%zux%zu", ta ? "^T" : "", tb ? " .^T" : "", M, N, K);
  row(name, s, p, max_diff(c1, c2));
}

void bench_conv(const char* label, const kernels::Conv3dGeometry& g, int reps) {
  Rng rng(2);
  const std::size_t in = g.frames * g.in_ch * g.in_h * g.in_w;
  const std::size_t out = g.frames * g.out_ch * g.out_h() * g.out_w();
  auto x = random_vec(in, rng), w = random_vec(g.out_ch * g.patch(), rng), b = random_vec(g.out_ch, rng);
  auto dy = random_vec(out, rng);
  std::vector<double> y1(out), y2(out);
  const double sf = time_ms([&] { kernels::reference::conv3d_forward(g, x.data(), w.data(), b.data(), y1.data()); }, reps);
  const double pf = time_ms([&] { kernels::conv3d_forward(g, x.data(), w.data(), b.data(), y2.data()); }, reps);
  char name[64];
  std::snprintf(name, sizeof name, "%s forward", label);
  row(name, sf, pf, max_diff(y1, y2));

  std::vector<double> dx1(in), dw1(w.size()), db1(b.size()), dx2(in), dw2(w.size()), db2(b.size());
  auto reset = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  const double sb = time_ms([&] {
    reset(dx1), reset(dw1), reset(db1);
    kernels::reference::conv3d_backward(g, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
  }, reps);
  const double pb = time_ms([&] {
    reset(dx2), reset(dw2), reset(db2);
    kernels::conv3d_backward(g, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
  }, reps);
  std::snprintf(name, sizeof name, "%s backward", label);
  row(name, sb, pb, std::max({max_diff(dx1, dx2), max_diff(dw1, dw2), max_diff(db1, db2)}));
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 15;
  std::printf("threads: %d, median of %d runs\n", omp_get_max_threads(), reps);
  std::printf("%-34s %10s %10s %9s %10s\n", "kernel", "serial ms", "omp ms", "speedup", "max |diff|");

  bench_gemm(24, 32, 32, false, false, reps);
  bench_gemm(96, 64, 32, false, true, reps);
  bench_gemm(32, 64, 96, true, false, reps);
  bench_gemm(256, 256, 256, false, false, reps);

  kernels::Conv3dGeometry stem;
  stem.frames = 24, stem.in_ch = 1, stem.in_h = stem.in_w = 32, stem.out_ch = 8;
  stem.kt = 3, stem.kh = stem.kw = 5, stem.stride = 2, stem.pad_t = 1, stem.pad_h = stem.pad_w = 2;
  bench_conv("stem conv 24x1x32x32 -> 8", stem, reps);

  kernels::Conv3dGeometry block;
  block.frames = 24, block.in_ch = 8, block.in_h = block.in_w = 16, block.out_ch = 16;
  block.kt = 1, block.kh = block.kw = 3, block.stride = 2, block.pad_h = block.pad_w = 1;
  bench_conv("stage conv 24x8x16x16 -> 16", block, reps);
  return 0;
}
