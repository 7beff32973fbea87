#include "glip/model/dual_path.hpp"

#include <cmath>

namespace glip {

namespace {

void expect_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

}  // namespace

Tensor global_average_pool(const Tensor& F) {
  expect_rank(F, 4, "global_average_pool");
  const auto& s = F.shape();
  return mean(reshape(F, {s[0], s[1], s[2] * s[3]}), 2);
}

RegionDecoder RegionDecoder::create(nn::ParamStore& ps, const std::string& name, const DualPathConfig& cfg, Rng& rng) {
  RegionDecoder d;
  d.layer = nn::DecoderLayer::create(ps, name + ".layer", cfg.dim, cfg.heads, cfg.ff_hidden, rng);
  d.norm = nn::LayerNorm::create(ps, name + ".norm", cfg.dim);
  d.mlp_in = nn::Linear::create(ps, name + ".mlp_in", cfg.dim, cfg.dim, rng);
  d.mlp_out = nn::Linear::create(ps, name + ".mlp_out", cfg.dim, cfg.dim, rng);
  return d;
}

Tensor region_decode(const Tensor& F_pp, const Tensor& queries, const RegionDecoder& dec) {
  expect_rank(F_pp, 4, "region_decode");
  expect_rank(queries, 2, "region_decode queries");
  const auto& s = F_pp.shape();
  const std::size_t T = s[0], D = s[1], P = s[2] * s[3], N = queries.dim(0);
  if (queries.dim(1) != D)
    throw ShapeError("region_decode: queries " + shape_str(queries.shape()) + " vs features " + shape_str(s));
  // Each frame is its own batch entry: memory [T, h*w, D], queries tiled to [T, N, D].
  Tensor memory = permute(reshape(F_pp, {T, D, P}), {0, 2, 1});
  Tensor q = add(Tensor::zeros({T, N, D}), queries);
  Tensor x = dec.norm(dec.layer(q, memory));
  x = dec.mlp_out(gelu(dec.mlp_in(x)));
  return permute(x, {1, 0, 2});
}

std::pair<Tensor, Tensor> soft_assign(const Tensor& R, const Tensor& F_dense, MapAxis axis) {
  expect_rank(R, 3, "soft_assign R");
  expect_rank(F_dense, 4, "soft_assign F_dense");
  const auto& rs = R.shape();
  const auto& fs = F_dense.shape();
  if (rs[1] != fs[0] || rs[2] != fs[1])
    throw ShapeError("soft_assign: R " + shape_str(rs) + " vs F_dense " + shape_str(fs));
  const std::size_t N = rs[0], T = rs[1], D = rs[2], h = fs[2], w = fs[3];
  Tensor S = cosine_similarity(reshape(R, {N, T, D, 1, 1}), reshape(F_dense, {1, T, D, h, w}), 2);
  Tensor M;
  if (axis == MapAxis::Regions) {
    M = softmax(S, 0);
  } else {
    M = reshape(softmax(reshape(S, {N, T, h * w}), 2), {N, T, h, w});
  }
  return {S, M};
}

PoolResult weighted_region_pool(const Tensor& M, const Tensor& F_pp) {
  expect_rank(M, 4, "weighted_region_pool M");
  expect_rank(F_pp, 4, "weighted_region_pool F''");
  const auto& ms = M.shape();
  const auto& fs = F_pp.shape();
  if (ms[1] != fs[0] || ms[2] != fs[2] || ms[3] != fs[3])
    throw ShapeError("weighted_region_pool: M " + shape_str(ms) + " vs F'' " + shape_str(fs));
  const std::size_t N = ms[0], T = ms[1], D = fs[1], P = ms[2] * ms[3];
  constexpr double kMinMass = 1e-12;

  const double* m = M.data().data();
  const double* f = F_pp.data().data();
  std::vector<double> out(T * N * D, 0.0);
  std::vector<double> den(T * N, 0.0);
  PoolResult res;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      const double* mp = m + (n * T + t) * P;
      double z = 0.0;
      for (std::size_t p = 0; p < P; ++p) z += mp[p];
      den[t * N + n] = z;
      if (z < kMinMass) {
        res.degenerate.emplace_back(t, n);
        continue;
      }
      double* o = out.data() + (t * N + n) * D;
      for (std::size_t d = 0; d < D; ++d) {
        const double* fp = f + (t * D + d) * P;
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += mp[p] * fp[p];
        o[d] = acc / z;
      }
    }

  auto Mi = M.impl_ptr(), Fi = F_pp.impl_ptr();
  res.L = Tensor::make_result({T, N, D}, std::move(out), "weighted_region_pool", {M, F_pp},
                              [Mi, Fi, den = std::move(den), N, T, D, P](const TensorImpl& o) {
                                double* gm = grad_sink(Mi);
                                double* gf = grad_sink(Fi);
                                const double* m = Mi->data.data();
                                const double* f = Fi->data.data();
                                for (std::size_t t = 0; t < T; ++t)
                                  for (std::size_t n = 0; n < N; ++n) {
                                    const double z = den[t * N + n];
                                    if (z < kMinMass) continue;
                                    const double* g = o.grad.data() + (t * N + n) * D;
                                    const double* l = o.data.data() + (t * N + n) * D;
                                    const double* mp = m + (n * T + t) * P;
                                    for (std::size_t d = 0; d < D; ++d) {
                                      const double* fp = f + (t * D + d) * P;
                                      const double gz = g[d] / z;
                                      if (gm) {
                                        double* gmp = gm + (n * T + t) * P;
                                        for (std::size_t p = 0; p < P; ++p) gmp[p] += gz * (fp[p] - l[d]);
                                      }
                                      if (gf) {
                                        double* gfp = gf + (t * D + d) * P;
                                        for (std::size_t p = 0; p < P; ++p) gfp[p] += gz * mp[p];
                                      }
                                    }
                                  }
                              });
  return res;
}

DualPath DualPath::create(nn::ParamStore& ps, const std::string& name, const DualPathConfig& cfg,
                          std::size_t final_channels, std::size_t penultimate_channels, Rng& rng) {
  if (cfg.regions == 0) throw ShapeError("dual path: at least one region query is required");
  DualPath dp;
  dp.config = cfg;
  const std::size_t D = cfg.dim, c = penultimate_channels;
  dp.global_proj = nn::Linear::create(ps, name + ".global_proj", final_channels, D, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  dp.dense_w = ps.uniform(name + ".dense_proj.w", {D, c, 1, 1}, bound, rng);
  dp.dense_b = ps.zeros(name + ".dense_proj.b", {D});
  dp.inter_w = ps.uniform(name + ".inter_proj.w", {D, c, 1, 1}, bound, rng);
  dp.inter_b = ps.zeros(name + ".inter_proj.b", {D});
  dp.queries = ps.normal(name + ".queries", {cfg.regions, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  dp.decoder = RegionDecoder::create(ps, name + ".region_decoder", cfg, rng);
  return dp;
}

Tensor DualPath::global_branch(const Tensor& F) const { return global_proj(global_average_pool(F)); }

RegionBundle DualPath::local_branch(const Tensor& F_prime) const {
  expect_rank(F_prime, 4, "local_branch");
  RegionBundle b;
  b.F_dense = conv2d(F_prime, dense_w, dense_b, 1, 0);
  b.F_pp = conv2d(F_prime, inter_w, inter_b, 1, 0);
  b.R = region_decode(b.F_pp, queries, decoder);
  std::tie(b.S, b.M) = soft_assign(b.R, b.F_dense, config.map_axis);
  auto pooled = weighted_region_pool(b.M, b.F_pp);
  b.L = pooled.L;
  b.degenerate = std::move(pooled.degenerate);
  return b;
}

}  // namespace glip
