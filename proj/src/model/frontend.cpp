#include "glip/model/frontend.hpp"

#include <cmath>

namespace glip {

void FrontendConfig::validate() const {
  if (stage_channels.empty()) throw ShapeError("frontend: stage_channels must be nonempty");
  if (stem_kt % 2 == 0 || stem_kh % 2 == 0 || stem_kw % 2 == 0)
    throw ShapeError("frontend: stem kernel sizes must be odd");
  if (stem_stride == 0 || stage_stride == 0 || blocks_per_stage == 0)
    throw ShapeError("frontend: strides and block counts must be positive");
  const std::size_t last = stage_channels.size() - 1;
  if (stage_out_h(last) < 2 || stage_out_w(last) < 2)
    throw ShapeError("frontend: final feature map " + std::to_string(stage_out_h(last)) + "x" +
                     std::to_string(stage_out_w(last)) + " is smaller than 2x2");
}

std::size_t FrontendConfig::stem_out_h() const { return (in_height + 2 * (stem_kh / 2) - stem_kh) / stem_stride + 1; }
std::size_t FrontendConfig::stem_out_w() const { return (in_width + 2 * (stem_kw / 2) - stem_kw) / stem_stride + 1; }

std::size_t FrontendConfig::stage_out_h(std::size_t i) const {
  std::size_t h = stem_out_h();
  for (std::size_t s = 0; s <= i; ++s) h = (h - 1) / stage_stride + 1;
  return h;
}

std::size_t FrontendConfig::stage_out_w(std::size_t i) const {
  std::size_t w = stem_out_w();
  for (std::size_t s = 0; s <= i; ++s) w = (w - 1) / stage_stride + 1;
  return w;
}

std::size_t FrontendConfig::penultimate_channels() const {
  return stage_channels.size() >= 2 ? stage_channels[stage_channels.size() - 2] : stage_channels[0];
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor h = relu(conv2d(x, conv1_w, conv1_b, stride, 1));
  h = conv2d(h, conv2_w, conv2_b, 1, 1);
  Tensor shortcut = proj_w.defined() ? conv2d(x, proj_w, proj_b, stride, 0) : x;
  return relu(add(shortcut, h));
}

Frontend Frontend::create(nn::ParamStore& ps, const std::string& name, const FrontendConfig& cfg, Rng& rng) {
  cfg.validate();
  Frontend f;
  f.config = cfg;
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  const std::size_t c0 = cfg.stage_channels[0];
  f.stem_w = ps.normal(name + ".stem.w", {c0, 1, cfg.stem_kt, cfg.stem_kh, cfg.stem_kw},
                       he(cfg.stem_kt * cfg.stem_kh * cfg.stem_kw), rng);
  f.stem_b = ps.zeros(name + ".stem.b", {c0});
  std::size_t in_ch = c0;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const std::size_t ch = cfg.stage_channels[s];
    std::vector<ResidualBlock> blocks;
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = name + ".stage" + std::to_string(s) + ".block" + std::to_string(b);
      ResidualBlock blk;
      blk.stride = b == 0 ? cfg.stage_stride : 1;
      blk.conv1_w = ps.normal(p + ".conv1.w", {ch, in_ch, 3, 3}, he(in_ch * 9), rng);
      blk.conv1_b = ps.zeros(p + ".conv1.b", {ch});
      // Residual branch starts small so each block begins close to its shortcut.
      blk.conv2_w = ps.normal(p + ".conv2.w", {ch, ch, 3, 3}, 0.25 * he(ch * 9), rng);
      blk.conv2_b = ps.zeros(p + ".conv2.b", {ch});
      if (blk.stride != 1 || in_ch != ch) {
        blk.proj_w = ps.normal(p + ".proj.w", {ch, in_ch, 1, 1}, he(in_ch), rng);
        blk.proj_b = ps.zeros(p + ".proj.b", {ch});
      }
      blocks.push_back(blk);
      in_ch = ch;
    }
    f.stages.push_back(std::move(blocks));
  }
  return f;
}

FeaturePair Frontend::operator()(const Tensor& clip) const {
  const auto& s = clip.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != config.in_height || s[3] != config.in_width)
    throw ShapeError("frontend: expected [T,1," + std::to_string(config.in_height) + "," +
                     std::to_string(config.in_width) + "], got " + shape_str(s));
  Tensor h = relu(conv3d(clip, stem_w, stem_b, config.stem_stride, config.stem_kt / 2, config.stem_kh / 2));
  FeaturePair out;
  if (stages.size() == 1) out.F_prime = h;
  for (std::size_t st = 0; st < stages.size(); ++st) {
    for (const auto& blk : stages[st]) h = blk(h);
    if (st + 2 == stages.size()) out.F_prime = h;
  }
  out.F = h;
  return out;
}

}  // namespace glip
