#pragma once

#include <string>
#include <vector>

#include "glip/nn/layers.hpp"

namespace glip {

struct AlignConfig {
  nn::ConformerConfig encoder;
  std::size_t codebook = 64;
  std::size_t units_per_frame = 4;
  bool share_encoder = true;
};

struct AlignmentHead {
  AlignConfig config;
  nn::ConformerEncoder encoder;        // global stream (and local streams when shared)
  nn::ConformerEncoder local_encoder;  // used only when share_encoder is false
  nn::Linear global_proj, local_proj;  // D -> units_per_frame * codebook

  static AlignmentHead create(nn::ParamStore& ps, const std::string& name, const AlignConfig& cfg, Rng& rng);

  /// Encoded [B,T,D] streams -> logits [B,T,units,V].
  Tensor global_logits(const Tensor& encoded) const;
  Tensor local_logits(const Tensor& encoded) const;
};

/// Mean over the T*units positions of -log softmax(logits)[code].
/// logits [T,units,V]; codes has length T*units, frame-major.
Tensor unit_ce_loss(const Tensor& logits, const std::vector<std::size_t>& codes);

struct AlignmentLoss {
  Tensor total, global_part, local_part;
};

/// G [T,D], L [T,N,D]. When L is undefined only the global term is formed
/// and local_part is a zero constant.
AlignmentLoss alignment_loss(const Tensor& G, const Tensor& L, const std::vector<std::size_t>& codes,
                             const AlignmentHead& head);

}  // namespace glip
