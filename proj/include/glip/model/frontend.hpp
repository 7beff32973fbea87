#pragma once

#include <string>
#include <vector>

#include "glip/core/ops.hpp"
#include "glip/nn/params.hpp"

namespace glip {

/// Shallow residual video front-end: a 3D stem followed by residual stages of
/// per-frame 3x3 convolutions.
///
/// Shape arithmetic (all convolutions pad to "same" before striding):
///   stem:    H0 = (H + 2*(kh/2) - kh) / stem_stride + 1          (likewise W)
///   stage i: H_{i+1} = (H_i - 1) / stage_stride + 1               (3x3, pad 1)
/// The final stage gives F [T, stage_channels.back(), H_f, W_f]; the stage
/// before it (or the stem when there is a single stage) gives
/// F' [T, c, h, w]. Time is never strided, so both keep the clip's T.
struct FrontendConfig {
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::size_t stem_kt = 3, stem_kh = 5, stem_kw = 5;
  std::size_t stem_stride = 2;
  std::vector<std::size_t> stage_channels{8, 16};
  std::size_t blocks_per_stage = 1;
  std::size_t stage_stride = 2;

  void validate() const;
  std::size_t stem_out_h() const;
  std::size_t stem_out_w() const;
  /// Spatial size after stage i (0-based).
  std::size_t stage_out_h(std::size_t i) const;
  std::size_t stage_out_w(std::size_t i) const;
  std::size_t penultimate_channels() const;
  std::size_t final_channels() const { return stage_channels.back(); }
};

struct FeaturePair {
  Tensor F;        // [T, C, H_f, W_f]
  Tensor F_prime;  // [T, c, h, w]
};

struct ResidualBlock {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor proj_w, proj_b;  // 1x1 shortcut; undefined when the block keeps its shape
  std::size_t stride = 1;

  Tensor operator()(const Tensor& x) const;
};

struct Frontend {
  FrontendConfig config;
  Tensor stem_w, stem_b;
  std::vector<std::vector<ResidualBlock>> stages;

  static Frontend create(nn::ParamStore& ps, const std::string& name, const FrontendConfig& cfg, Rng& rng);

  /// clip: [T, 1, H, W] with H, W equal to the configured input size.
  FeaturePair operator()(const Tensor& clip) const;
};

}  // namespace glip
