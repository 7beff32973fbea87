#pragma once

// Transformer/Conformer building blocks shared by the region decoder, the
// alignment head and the recognizer. All sequence inputs are [B, T, D].

#include <string>
#include <vector>

#include "glip/core/ops.hpp"
#include "glip/nn/params.hpp"

namespace glip::nn {

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out], may be undefined

  static Linear create(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm create(ParamStore& ps, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                   Rng& rng);
  /// query [B,Tq,D], memory [B,Tk,D]; mask is an additive [Tq,Tk] tensor or undefined.
  /// When `weights` is non-null it receives the attention probabilities [B*H,Tq,Tk].
  Tensor operator()(const Tensor& query, const Tensor& memory, const Tensor& mask = {},
                    Tensor* weights = nullptr) const;
};

enum class Activation { Relu, Gelu, Silu };

Tensor activate(const Tensor& x, Activation act);

struct FeedForward {
  Linear in, out;
  Activation act = Activation::Silu;

  static FeedForward create(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t hidden,
                            Activation act, Rng& rng);
  Tensor operator()(const Tensor& x) const { return out(activate(in(x), act)); }
};

struct ConformerConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ff_mult = 2;
  std::size_t conv_kernel = 7;
};

/// Macaron block: half-step FF, self-attention, convolution module, half-step
/// FF, each pre-normalized with a residual, then a final LayerNorm.
struct ConformerBlock {
  LayerNorm ff1_norm, attn_norm, conv_norm, ff2_norm, final_norm;
  FeedForward ff1, ff2;
  MultiHeadAttention attn;
  Linear conv_pointwise_in;   // D -> 2D, then GLU
  Tensor conv_depthwise_w;    // [D, k]
  Tensor conv_depthwise_b;    // [D]
  LayerNorm conv_mid_norm;
  Linear conv_pointwise_out;  // D -> D

  static ConformerBlock create(ParamStore& ps, const std::string& name, const ConformerConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  Tensor conv_module(const Tensor& x) const;
};

struct ConformerEncoder {
  std::vector<ConformerBlock> blocks;

  static ConformerEncoder create(ParamStore& ps, const std::string& name, const ConformerConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Pre-norm Transformer decoder layer: self-attention, cross-attention, FF.
struct DecoderLayer {
  LayerNorm self_norm, cross_norm, ff_norm;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;

  static DecoderLayer create(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                             std::size_t ff_hidden, Rng& rng);
  /// x [B,U,D], memory [B,T,D]; self_mask additive [U,U] or undefined.
  Tensor operator()(const Tensor& x, const Tensor& memory, const Tensor& self_mask = {}) const;
};

/// Additive mask with -inf above the diagonal.
Tensor causal_mask(std::size_t n);

/// Standard sinusoidal table [n, dim].
Tensor sinusoidal_positions(std::size_t n, std::size_t dim);

/// GLU over the last axis: first half * sigmoid(second half).
Tensor glu_last(const Tensor& x);

}  // namespace glip::nn
