#include "glip/model/cem.hpp"

#include <cmath>

namespace glip {

CemLayer CemLayer::create(nn::ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  CemLayer l;
  l.wq = ps.uniform(name + ".wq", {dim, dim}, bound, rng);
  l.wk = ps.uniform(name + ".wk", {dim, dim}, bound, rng);
  l.wv = ps.uniform(name + ".wv", {dim, dim}, bound, rng);
  l.wo = ps.uniform(name + ".wo", {dim, dim}, bound, rng);
  l.norm = nn::LayerNorm::create(ps, name + ".norm", dim);
  return l;
}

std::vector<CemLayer> create_cem(nn::ParamStore& ps, const std::string& name, std::size_t dim, std::size_t layers,
                                 Rng& rng) {
  if (layers == 0) throw std::invalid_argument("cem: at least one layer is required");
  std::vector<CemLayer> out;
  for (std::size_t k = 0; k < layers; ++k) out.push_back(CemLayer::create(ps, name + ".layer" + std::to_string(k), dim, rng));
  return out;
}

Tensor cem_layer(const Tensor& L, const Tensor& G, const CemLayer& p, Tensor* attention) {
  if (G.rank() != 2 || (L.rank() != 2 && L.rank() != 3) || L.dim(L.rank() - 2) != G.dim(0) ||
      L.dim(L.rank() - 1) != G.dim(1))
    throw ShapeError("cem_layer: L " + shape_str(L.shape()) + " vs G " + shape_str(G.shape()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(G.dim(1)));
  Tensor q = matmul(L, p.wq);
  Tensor k = matmul(G, p.wk);
  Tensor v = matmul(G, p.wv);
  Tensor a = softmax(scale(matmul(q, k, true), inv_sqrt_d), -1);
  if (attention) *attention = a;
  return p.norm(add(L, matmul(matmul(a, v), p.wo)));
}

Tensor cem_forward(const Tensor& L, const Tensor& G, const std::vector<CemLayer>& layers, Tensor* refined) {
  if (layers.empty()) throw std::invalid_argument("cem_forward: at least one layer is required");
  if (L.rank() != 3) throw ShapeError("cem_forward: L must be [T,N,D], got " + shape_str(L.shape()));
  Tensor x = permute(L, {1, 0, 2});
  for (const auto& layer : layers) x = cem_layer(x, G, layer);
  if (refined) *refined = x;
  return mean(x, 0);
}

}  // namespace glip
