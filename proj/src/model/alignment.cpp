#include "glip/model/alignment.hpp"

namespace glip {

AlignmentHead AlignmentHead::create(nn::ParamStore& ps, const std::string& name, const AlignConfig& cfg, Rng& rng) {
  AlignmentHead h;
  h.config = cfg;
  const std::size_t D = cfg.encoder.dim, out = cfg.units_per_frame * cfg.codebook;
  h.encoder = nn::ConformerEncoder::create(ps, name + ".encoder", cfg.encoder, rng);
  if (!cfg.share_encoder) h.local_encoder = nn::ConformerEncoder::create(ps, name + ".local_encoder", cfg.encoder, rng);
  h.global_proj = nn::Linear::create(ps, name + ".global_proj", D, out, rng);
  h.local_proj = nn::Linear::create(ps, name + ".local_proj", D, out, rng);
  return h;
}

namespace {

Tensor split_units(const Tensor& flat, std::size_t units, std::size_t V) {
  const auto& s = flat.shape();
  return reshape(flat, {s[0], s[1], units, V});
}

}  // namespace

Tensor AlignmentHead::global_logits(const Tensor& encoded) const {
  return split_units(global_proj(encoded), config.units_per_frame, config.codebook);
}

Tensor AlignmentHead::local_logits(const Tensor& encoded) const {
  return split_units(local_proj(encoded), config.units_per_frame, config.codebook);
}

Tensor unit_ce_loss(const Tensor& logits, const std::vector<std::size_t>& codes) {
  if (logits.rank() != 3)
    throw ShapeError("unit_ce_loss: expected logits [T,units,V], got " + shape_str(logits.shape()));
  const std::size_t T = logits.dim(0), U = logits.dim(1), V = logits.dim(2);
  if (codes.size() != T * U)
    throw ShapeError("unit_ce_loss: " + std::to_string(codes.size()) + " codes for logits " +
                     shape_str(logits.shape()) + " (need " + std::to_string(T * U) + ")");
  for (auto c : codes)
    if (c >= V)
      throw std::out_of_range("unit_ce_loss: code " + std::to_string(c) + " >= codebook size " + std::to_string(V));
  Tensor lp = log_softmax(reshape(logits, {T * U, V}), 1);
  return scale(mean(pick(lp, codes)), -1.0);
}

AlignmentLoss alignment_loss(const Tensor& G, const Tensor& L, const std::vector<std::size_t>& codes,
                             const AlignmentHead& head) {
  if (G.rank() != 2) throw ShapeError("alignment_loss: G must be [T,D], got " + shape_str(G.shape()));
  const std::size_t T = G.dim(0), D = G.dim(1);
  AlignmentLoss out;
  auto stream_loss = [&](const Tensor& logits, std::size_t i) {
    return unit_ce_loss(reshape(slice(logits, 0, i, 1), {T, head.config.units_per_frame, head.config.codebook}), codes);
  };
  if (!L.defined()) {
    out.global_part = stream_loss(head.global_logits(head.encoder(reshape(G, {1, T, D}))), 0);
    out.local_part = Tensor::scalar(0.0);
    out.total = out.global_part;
    return out;
  }
  if (L.rank() != 3 || L.dim(0) != T || L.dim(2) != D)
    throw ShapeError("alignment_loss: L " + shape_str(L.shape()) + " does not match G " + shape_str(G.shape()));
  const std::size_t N = L.dim(1);
  Tensor streams = permute(L, {1, 0, 2});  // [N,T,D]
  Tensor enc_g, enc_l;
  if (head.config.share_encoder) {
    Tensor enc = head.encoder(concat({reshape(G, {1, T, D}), streams}, 0));
    enc_g = slice(enc, 0, 0, 1);
    enc_l = slice(enc, 0, 1, N);
  } else {
    enc_g = head.encoder(reshape(G, {1, T, D}));
    enc_l = head.local_encoder(streams);
  }
  out.global_part = stream_loss(head.global_logits(enc_g), 0);
  Tensor local_logits = head.local_logits(enc_l);
  std::vector<Tensor> parts;
  for (std::size_t n = 0; n < N; ++n) parts.push_back(stream_loss(local_logits, n));
  out.local_part = mean(concat(parts, 0));
  out.total = add(out.global_part, out.local_part);
  return out;
}

}  // namespace glip
