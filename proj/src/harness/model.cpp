#include "glip/harness/model.hpp"

#include <algorithm>
#include <cmath>

#include "glip/data/tensor_io.hpp"

namespace glip {

std::vector<Example> load_split(const std::filesystem::path& corpus_dir, const std::filesystem::path& units_dir,
                                Split split) {
  auto rows = read_manifest(corpus_dir);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
  UnitTable units;
  if (!units_dir.empty()) units = read_units(units_dir / "units.jsonl");
  std::vector<Example> out;
  for (const auto& r : rows) {
    if (r.split != split) continue;
    Example e;
    e.clip_id = r.clip_id;
    e.transcript = r.transcript;
    e.condition = r.condition;
    e.frames = read_tensor_file(corpus_dir / r.frames_path);
    if (e.frames.rank() != 4 || e.frames.dim(0) != r.frames)
      throw IoError("frame file of " + r.clip_id + " disagrees with the manifest");
    if (!units_dir.empty()) {
      const auto it = units.find(r.clip_id);
      if (it == units.end()) throw IoError("no units for clip " + r.clip_id);
      e.units = it->second;
    }
    out.push_back(std::move(e));
  }
  return out;
}

nn::ConformerConfig encoder_config(const RunConfig& cfg) {
  nn::ConformerConfig e;
  e.layers = cfg.encoder_layers;
  e.dim = cfg.dim;
  e.heads = cfg.heads;
  e.conv_kernel = cfg.conv_kernel;
  return e;
}

GlipModel::GlipModel(const RunConfig& cfg)
    : cfg_(cfg), vocab_(transcript_alphabet()), params_(std::make_unique<nn::ParamStore>()) {
  cfg_.validate();
}

namespace {

DualPathConfig dual_config(const RunConfig& cfg) {
  DualPathConfig d;
  d.dim = cfg.dim;
  d.regions = cfg.regions;
  d.heads = cfg.heads;
  d.ff_hidden = cfg.ff_hidden;
  d.map_axis = cfg.map_axis;
  return d;
}

}  // namespace

GlipModel GlipModel::stage1(const RunConfig& cfg) {
  GlipModel m(cfg);
  Rng rng(mix_seed(cfg.seed, 0x51));
  auto& ps = *m.params_;
  m.frontend_ = Frontend::create(ps, "frontend", cfg.frontend, rng);
  m.dual_ = DualPath::create(ps, "dual_path", dual_config(cfg), cfg.frontend.final_channels(),
                             cfg.frontend.penultimate_channels(), rng);
  AlignConfig ac;
  ac.encoder = encoder_config(cfg);
  ac.codebook = cfg.codebook;
  ac.units_per_frame = kAudioPerFrame;
  ac.share_encoder = cfg.share_encoder;
  m.head_ = AlignmentHead::create(ps, "align", ac, rng);
  return m;
}

GlipModel GlipModel::stage2(const RunConfig& cfg) {
  GlipModel m(cfg);
  Rng rng(mix_seed(cfg.seed, 0x52));
  auto& ps = *m.params_;
  m.frontend_ = Frontend::create(ps, "frontend", cfg.frontend, rng);
  m.dual_ = DualPath::create(ps, "dual_path", dual_config(cfg), cfg.frontend.final_channels(),
                             cfg.frontend.penultimate_channels(), rng);
  if (cfg.fusion == Fusion::Cem) m.cem_ = create_cem(ps, "cem", cfg.dim, cfg.cem_layers, rng);
  RecognizerConfig rc;
  rc.encoder = encoder_config(cfg);
  rc.decoder_layers = cfg.decoder_layers;
  rc.heads = cfg.heads;
  rc.ff_hidden = cfg.ff_hidden;
  m.rec_ = Recognizer::create(ps, "recognizer", rc, m.vocab_.size(), rng);
  return m;
}

Tensor standardize_clip(const Tensor& frames) {
  const auto x = frames.data();
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  const double inv = 1.0 / (std::sqrt(var / static_cast<double>(x.size())) + 1e-3);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) * inv;
  return Tensor::from(frames.shape(), std::move(out));
}

Streams GlipModel::streams(const Tensor& frames, bool need_local) const {
  const auto f = frontend_(standardize_clip(frames));
  Streams s;
  s.G = dual_.global_branch(f.F);
  if (need_local) s.local = dual_.local_branch(f.F_prime);
  return s;
}

AlignmentLoss GlipModel::stage1_loss(const Tensor& frames, const std::vector<std::size_t>& units) const {
  if (!head_) throw GraphError("stage1_loss needs a stage-1 model");
  const bool local = cfg_.stage1_streams == Stage1Streams::GlobalLocal;
  const auto s = streams(frames, local);
  return alignment_loss(s.G, local ? s.local.L : Tensor{}, units, *head_);
}

Tensor GlipModel::fuse(const Streams& s) const {
  const std::size_t T = s.G.dim(0), D = s.G.dim(1);
  switch (cfg_.fusion) {
    case Fusion::GlobalOnly:
      return s.G;
    case Fusion::LocalOnly:
      return mean(s.local.L, 1);
    case Fusion::Avg:
      return mean(concat({reshape(s.G, {T, 1, D}), s.local.L}, 1), 1);
    case Fusion::Cem:
      return cem_forward(s.local.L, s.G, cem_);
  }
  return s.G;
}

Tensor GlipModel::encode(const Tensor& frames, Tensor* attention_maps) const {
  if (!rec_) throw GraphError("encode needs a stage-2 model");
  const auto s = streams(frames, cfg_.fusion != Fusion::GlobalOnly);
  if (attention_maps) *attention_maps = s.local.M;
  return rec_->encode(fuse(s));
}

RecognizerLoss GlipModel::stage2_loss(const Tensor& frames, const std::string& transcript) const {
  return recognizer_loss(*rec_, encode(frames), vocab_.encode(transcript), cfg_.ctc_weight);
}

Hypothesis GlipModel::transcribe(const Tensor& frames) const {
  NoGradGuard guard;
  DecodeOptions o;
  o.mode = cfg_.decode;
  o.beam_width = cfg_.beam_width;
  o.ctc_weight = cfg_.ctc_weight;
  return decode(*rec_, encode(frames), o);
}

}  // namespace glip
