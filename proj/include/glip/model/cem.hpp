#pragma once

#include <string>
#include <vector>

#include "glip/nn/layers.hpp"

namespace glip {

struct CemLayer {
  Tensor wq, wk, wv, wo;  // [D, D]
  nn::LayerNorm norm;

  static CemLayer create(nn::ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng);
};

/// LN(L + softmax((L Wq)(G Wk)^T / sqrt(D)) (G Wv) Wo).
/// L is [T,D] or a stack [N,T,D] of streams sharing the same G [T,D].
/// When `attention` is non-null it receives the attention rows ([T,T] or [N,T,T]).
Tensor cem_layer(const Tensor& L, const Tensor& G, const CemLayer& p, Tensor* attention = nullptr);

/// L [T,N,D], G [T,D]: every stream passes through all layers, then the
/// streams are averaged -> [T,D]. `refined` optionally receives [N,T,D].
Tensor cem_forward(const Tensor& L, const Tensor& G, const std::vector<CemLayer>& layers, Tensor* refined = nullptr);

std::vector<CemLayer> create_cem(nn::ParamStore& ps, const std::string& name, std::size_t dim, std::size_t layers,
                                 Rng& rng);

}  // namespace glip
