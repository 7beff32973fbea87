#pragma once

#include <string>
#include <utility>
#include <vector>

#include "glip/nn/layers.hpp"

namespace glip {

/// Which axis of the assignment tensor S [N,T,h,w] the softmax normalizes.
enum class MapAxis { Regions, Spatial };

struct DualPathConfig {
  std::size_t dim = 32;
  std::size_t regions = 5;
  std::size_t heads = 4;
  std::size_t ff_hidden = 64;
  MapAxis map_axis = MapAxis::Regions;
};

struct RegionBundle {
  Tensor R;        // [N, T, D]
  Tensor S;        // [N, T, h, w]
  Tensor M;        // [N, T, h, w]
  Tensor F_dense;  // [T, D, h, w]
  Tensor F_pp;     // [T, D, h, w]  (F'')
  Tensor L;        // [T, N, D]
  std::vector<std::pair<std::size_t, std::size_t>> degenerate;  // (t, n) with zero map mass
};

/// Spatial mean: [T,C,H,W] -> [T,C].
Tensor global_average_pool(const Tensor& F);

struct RegionDecoder {
  nn::DecoderLayer layer;
  nn::LayerNorm norm;
  nn::Linear mlp_in, mlp_out;

  static RegionDecoder create(nn::ParamStore& ps, const std::string& name, const DualPathConfig& cfg, Rng& rng);
};

/// One decoder layer per frame: the N queries attend over that frame's h*w
/// positions. F_pp [T,D,h,w], queries [N,D] -> R [N,T,D].
Tensor region_decode(const Tensor& F_pp, const Tensor& queries, const RegionDecoder& dec);

/// S[n,t,u,v] = cos(R[n,t,:], F_dense[t,:,u,v]); M = softmax(S) along `axis`.
std::pair<Tensor, Tensor> soft_assign(const Tensor& R, const Tensor& F_dense, MapAxis axis);

struct PoolResult {
  Tensor L;  // [T, N, D]
  std::vector<std::pair<std::size_t, std::size_t>> degenerate;
};

/// l[t,n] = sum_p M[n,t,p] F[t,:,p] / sum_p M[n,t,p]. A (t,n) whose mass is
/// below 1e-12 yields a zero vector, no gradient, and an entry in `degenerate`.
PoolResult weighted_region_pool(const Tensor& M, const Tensor& F_pp);

struct DualPath {
  DualPathConfig config;
  nn::Linear global_proj;        // C -> D
  Tensor dense_w, dense_b;       // 1x1 conv c -> D
  Tensor inter_w, inter_b;       // 1x1 conv c -> D
  Tensor queries;                // [N, D]
  RegionDecoder decoder;

  static DualPath create(nn::ParamStore& ps, const std::string& name, const DualPathConfig& cfg,
                         std::size_t final_channels, std::size_t penultimate_channels, Rng& rng);

  /// F [T,C,H,W] -> G [T,D].
  Tensor global_branch(const Tensor& F) const;
  /// F' [T,c,h,w] -> the full local-branch bundle.
  RegionBundle local_branch(const Tensor& F_prime) const;
};

}  // namespace glip
