#include "glip/data/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include "glip/data/tensor_io.hpp"
#include "json.hpp"

namespace glip {

namespace {

constexpr double kLipValue = 0.32;
constexpr double kCavityValue = 0.08;
constexpr double kTeethValue = 0.92;
constexpr double kCentre = kFrameSize / 2.0;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Anti-aliased ellipse coverage, roughly one pixel of soft edge.
double ellipse_cover(double dx, double dy, double rx, double ry) {
  if (rx <= 0.0 || ry <= 0.0) return 0.0;
  const double rho = std::sqrt((dx / rx) * (dx / rx) + (dy / ry) * (dy / ry));
  return clamp01(0.5 + (1.0 - rho) * std::min(rx, ry));
}

const std::array<Latent, 12>& targets() {
  // aperture, width, teeth, thickness for "aeioubdfgkms"
  static const std::array<Latent, 12> t = {{
      {0.90, 0.55, 0.0, 0.3},
      {0.50, 1.00, 0.3, 0.0},
      {0.35, 1.00, 1.0, 0.3},
      {0.90, 0.10, 0.0, 1.0},
      {0.45, 0.00, 0.0, 1.0},
      {0.00, 0.30, 0.0, 1.0},
      {0.55, 0.55, 1.0, 0.6},
      {0.25, 0.60, 1.0, 0.0},
      {0.65, 0.35, 0.0, 0.0},
      {0.90, 0.95, 0.6, 0.7},
      {0.00, 0.90, 0.0, 0.2},
      {0.20, 0.15, 1.0, 0.5},
  }};
  return t;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double z = 0.0;
  for (int i = -r; i <= r; ++i) z += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= z;
  return k;
}

// Separable blur of one H x W image with replicated borders.
void blur_image(double* img, std::size_t H, std::size_t W, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const long xx = std::clamp<long>(static_cast<long>(x) + i, 0, static_cast<long>(W) - 1);
        s += k[i + r] * img[y * W + xx];
      }
      tmp[y * W + x] = s;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const long yy = std::clamp<long>(static_cast<long>(y) + i, 0, static_cast<long>(H) - 1);
        s += k[i + r] * tmp[yy * W + x];
      }
      img[y * W + x] = s;
    }
}

// Inverse-mapped horizontal compression + shear + shift; bilinear, skin outside.
void warp_image(const double* src, double* dst, std::size_t H, std::size_t W, double yaw_deg, int side) {
  const double th = yaw_deg * std::numbers::pi / 180.0;
  const double compress = 0.5 + 0.5 * std::cos(th);
  const double shear = 0.25 * std::sin(th) * side;
  const double shift = 3.0 * std::sin(th) * side;
  auto at = [&](long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return kSkinValue;
    return src[y * W + x];
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - kCentre;
      const double dx = static_cast<double>(x) + 0.5 - kCentre;
      const double sx = kCentre + (dx - shift - shear * dy) / compress - 0.5;
      const double sy = static_cast<double>(y);
      const long x0 = static_cast<long>(std::floor(sx));
      const double fx = sx - x0;
      const long yi = static_cast<long>(sy);
      dst[y * W + x] = (1.0 - fx) * at(yi, x0) + fx * at(yi, x0 + 1);
    }
}

const std::array<std::array<double, 4>, kAudioDim>& audio_readout() {
  static const auto w = [] {
    std::array<std::array<double, 4>, kAudioDim> m{};
    Rng rng(0xA0D10);
    for (auto& row : m)
      for (double& v : row) v = rng.normal();
    return m;
  }();
  return w;
}

}  // namespace

const std::string& phoneme_letters() {
  static const std::string p = "aeioubdfgkms";
  return p;
}

std::string transcript_alphabet() { return std::string(1, kPause) + phoneme_letters(); }

const std::vector<std::string>& lexicon() {
  static const std::vector<std::string> words = {
      "ba",   "mo",   "di",   "fu",   "ke",   "sa",   "go",   "ub",   "am",   "is",   "bad",
      "mek",  "sim",  "fog",  "dub",  "kas",  "gif",  "mud",  "bes",  "kom",  "baku", "dime",
      "fosa", "gemu", "kibo", "sade", "mugi", "odes", "ifka", "uma",  "efe",  "sobi"};
  return words;
}

Latent rest_pose() { return {0.15, 0.6, 0.0, 0.4}; }

Latent phoneme_target(char c) {
  if (c == kPause) return rest_pose();
  const auto p = phoneme_letters().find(c);
  if (p == std::string::npos) throw std::invalid_argument(std::string("unknown token '") + c + "'");
  return targets()[p];
}

Latent gesture(char c, double s) {
  const Latent tgt = phoneme_target(c), rest = rest_pose();
  const double a = std::sin(std::numbers::pi * s);
  Latent z;
  for (std::size_t i = 0; i < 4; ++i) z[i] = rest[i] + (tgt[i] - rest[i]) * a;
  return z;
}

Latent latent_at(const std::string& text, std::size_t frames, double tau) {
  const double n = static_cast<double>(text.size());
  const double span = static_cast<double>(frames) / n;
  const std::size_t j = std::min(text.size() - 1, static_cast<std::size_t>(std::floor(tau / span)));
  const double s = (tau - static_cast<double>(j) * span) / span;
  return gesture(text[j], s);
}

std::vector<double> render_mouth(const Latent& z) {
  const double a = z[0], w = z[1], teeth = z[2], k = z[3];
  const double rx = 6.0 + 8.0 * w;
  const double th = 1.5 + 2.0 * k;
  const double ry_in = 7.0 * a, rx_in = rx - th;
  const double ry_out = ry_in + th;
  std::vector<double> img(kFrameSize * kFrameSize);
  for (std::size_t y = 0; y < kFrameSize; ++y)
    for (std::size_t x = 0; x < kFrameSize; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - kCentre;
      const double dy = static_cast<double>(y) + 0.5 - kCentre;
      double v = kSkinValue;
      v += (kLipValue - v) * ellipse_cover(dx, dy, rx, ry_out);
      const double inner = ellipse_cover(dx, dy, rx_in, ry_in);
      v += (kCavityValue - v) * inner;
      const double band = clamp01(-ry_in + 2.5 - dy);  // upper teeth strip
      v += (kTeethValue - v) * inner * teeth * band;
      img[y * kFrameSize + x] = v;
    }
  return img;
}

std::string ConditionLabel::code() const {
  static const char* il = "BMD";
  static const char* oc = "NY";
  static const char* bl = "CMB";
  static const char* po = "SML";
  return {il[static_cast<int>(illumination)], oc[static_cast<int>(occlusion)], bl[static_cast<int>(blur)],
          po[static_cast<int>(pose)]};
}

ConditionLabel ConditionLabel::parse(const std::string& code) {
  auto idx = [&](char c, const std::string& opts, const char* what) {
    const auto p = opts.find(c);
    if (p == std::string::npos) throw std::invalid_argument(std::string("bad ") + what + " bin in '" + code + "'");
    return static_cast<int>(p);
  };
  if (code.size() != 4) throw std::invalid_argument("condition code must have 4 letters: '" + code + "'");
  ConditionLabel c;
  c.illumination = static_cast<Illumination>(idx(code[0], "BMD", "illumination"));
  c.occlusion = static_cast<Occlusion>(idx(code[1], "NY", "occlusion"));
  c.blur = static_cast<Blur>(idx(code[2], "CMB", "blur"));
  c.pose = static_cast<Pose>(idx(code[3], "SML", "pose"));
  return c;
}

double illumination_gain(Illumination i) {
  switch (i) {
    case Illumination::B: return 1.6;
    case Illumination::M: return 1.0;
    case Illumination::D: return 0.45;
  }
  return 1.0;
}

double blur_sigma(Blur b) {
  switch (b) {
    case Blur::C: return 0.0;
    case Blur::M: return 0.8;
    case Blur::B: return 1.8;
  }
  return 0.0;
}

std::pair<double, double> yaw_range(Pose p) {
  switch (p) {
    case Pose::S: return {0.0, 30.0};
    case Pose::M: return {30.0, 60.0};
    case Pose::L: return {60.0, 90.0};
  }
  return {0.0, 0.0};
}

std::size_t occluded_pixel_count(double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(Region{}.area())));
}

DegradeParams DegradeParams::sample(const ConditionLabel& cond, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xDE6));
  DegradeParams p;
  p.gain = illumination_gain(cond.illumination);
  p.sigma = blur_sigma(cond.blur);
  const auto [lo, hi] = yaw_range(cond.pose);
  p.yaw_deg = rng.uniform(lo, hi);
  p.yaw_side = rng.uniform() < 0.5 ? -1 : 1;
  if (cond.occlusion == Occlusion::Y) {
    const Region r;
    p.occlusion_fraction = rng.uniform(0.2, 0.4);
    const std::size_t h = r.y1 - r.y0, cols = (occluded_pixel_count(p.occlusion_fraction) + h - 1) / h;
    p.occlusion_start_col = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(r.x1 - r.x0 - cols)));
  }
  return p;
}

std::vector<bool> occlusion_mask(const DegradeParams& p) {
  std::vector<bool> m(kFrameSize * kFrameSize, false);
  const Region r;
  const std::size_t count = occluded_pixel_count(p.occlusion_fraction), h = r.y1 - r.y0;
  if (count == 0) return m;
  if (p.occlusion_start_col + (count + h - 1) / h > r.x1 - r.x0)
    throw std::invalid_argument("occluder does not fit inside the mouth region");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t x = r.x0 + p.occlusion_start_col + i / h, y = r.y0 + i % h;
    m[y * kFrameSize + x] = true;
  }
  return m;
}

Tensor degrade(const Tensor& frames, const DegradeParams& p) {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("degrade: expected [T,1,H,W], got " + shape_str(s));
  const std::size_t T = s[0], H = s[2], W = s[3], P = H * W;
  std::vector<double> out(frames.data().begin(), frames.data().end());
  const bool occlude = p.occlusion_fraction > 0.0;
  if (occlude && (H != kFrameSize || W != kFrameSize))
    throw ShapeError("degrade: occlusion needs " + std::to_string(kFrameSize) + "x" + std::to_string(kFrameSize) +
                     " frames, got " + shape_str(s));
  const auto mask = occlude ? occlusion_mask(p) : std::vector<bool>{};
  const auto kernel = p.sigma > 0.0 ? gaussian_kernel(p.sigma) : std::vector<double>{};
  std::vector<double> tmp(P);
  for (std::size_t t = 0; t < T; ++t) {
    double* img = out.data() + t * P;
    if (p.yaw_deg != 0.0) {
      warp_image(img, tmp.data(), H, W, p.yaw_deg, p.yaw_side);
      std::copy(tmp.begin(), tmp.end(), img);
    }
    if (occlude)
      for (std::size_t i = 0; i < P; ++i)
        if (mask[i]) img[i] = kOccluderValue;
    if (p.gain != 1.0)
      for (std::size_t i = 0; i < P; ++i) img[i] *= p.gain;
    if (!kernel.empty()) blur_image(img, H, W, kernel);
    for (std::size_t i = 0; i < P; ++i) img[i] = clamp01(img[i]);
  }
  return Tensor::from(s, std::move(out));
}

AugmentParams AugmentParams::sample(std::size_t frames, Rng& rng) {
  AugmentParams a;
  a.crop_size = 28;
  a.crop_y = static_cast<std::size_t>(rng.uniform_int(0, kFrameSize - a.crop_size));
  a.crop_x = static_cast<std::size_t>(rng.uniform_int(0, kFrameSize - a.crop_size));
  const std::size_t max_mask = (frames + 7) / 8;
  a.mask_len = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(max_mask)));
  a.mask_start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(frames - a.mask_len)));
  a.gain = rng.uniform(0.85, 1.15);
  a.sigma = rng.uniform(0.0, 0.5);
  return a;
}

Tensor augment(const Tensor& frames, const AugmentParams& p) {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("augment: expected [T,1,H,W], got " + shape_str(s));
  const std::size_t T = s[0], H = s[2], W = s[3], P = H * W;
  if (p.crop_size == 0 || p.crop_y + p.crop_size > H || p.crop_x + p.crop_size > W)
    throw std::invalid_argument("augment: crop window outside the frame");
  if (p.mask_start + p.mask_len > T) throw std::invalid_argument("augment: time mask outside the clip");
  const double* src = frames.data().data();
  std::vector<double> out(T * P);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t sy = p.crop_y + y * p.crop_size / H, sx = p.crop_x + x * p.crop_size / W;
        out[t * P + y * W + x] = src[t * P + sy * W + sx];
      }
  if (p.mask_len > 0) {
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= static_cast<double>(out.size());
    std::fill(out.begin() + static_cast<long>(p.mask_start * P),
              out.begin() + static_cast<long>((p.mask_start + p.mask_len) * P), mean);
  }
  Tensor cropped = Tensor::from(s, std::move(out));
  if (p.gain == 1.0 && p.sigma == 0.0) return cropped;
  DegradeParams d;
  d.gain = p.gain;
  d.sigma = p.sigma;
  return degrade(cropped, d);
}

std::size_t draw_frame_count(const std::string& transcript, std::uint64_t seed) {
  const std::size_t lo = std::max(kMinFrames, 2 * transcript.size());
  if (transcript.empty() || lo > kMaxFrames)
    throw std::invalid_argument("transcript of " + std::to_string(transcript.size()) + " characters does not fit in " +
                                std::to_string(kMaxFrames) + " frames");
  Rng rng(mix_seed(seed, 0x7));
  return static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lo), static_cast<long>(kMaxFrames)));
}

VideoClip generate_clip(const std::string& transcript, std::uint64_t seed, const ConditionLabel& cond,
                        std::optional<DegradeParams> override_params) {
  for (char c : transcript) (void)phoneme_target(c);  // validates every token
  const std::size_t T = draw_frame_count(transcript, seed);
  VideoClip clip;
  clip.transcript = transcript;
  clip.condition = cond;
  clip.seed = seed;

  std::vector<double> frames, latent;
  for (std::size_t t = 0; t < T; ++t) {
    const Latent z = latent_at(transcript, T, static_cast<double>(t) + 0.5);
    latent.insert(latent.end(), z.begin(), z.end());
    const auto img = render_mouth(z);
    frames.insert(frames.end(), img.begin(), img.end());
  }
  clip.latent = Tensor::from({T, 4}, std::move(latent));
  clip.clean_frames = Tensor::from({T, 1, kFrameSize, kFrameSize}, std::move(frames));

  const auto& W = audio_readout();
  Rng noise(mix_seed(seed, 0xA0));
  std::vector<double> audio;
  for (std::size_t q = 0; q < kAudioPerFrame * T; ++q) {
    const double tau = (static_cast<double>(q) + 0.5) / kAudioPerFrame;
    const Latent z = latent_at(transcript, T, tau);
    for (std::size_t d = 0; d < kAudioDim; ++d) {
      double v = 0.0;
      for (std::size_t i = 0; i < 4; ++i) v += W[d][i] * z[i];
      audio.push_back(v + noise.normal(0.0, 0.03));
    }
  }
  clip.audio = Tensor::from({kAudioPerFrame * T, kAudioDim}, std::move(audio));

  clip.degradation = override_params ? *override_params : DegradeParams::sample(cond, seed);
  clip.frames = degrade(clip.clean_frames, clip.degradation);
  return clip;
}

std::string sample_transcript(std::size_t frames, Rng& rng) {
  const std::size_t max_chars = std::min(frames, kMaxFrames) / 2;
  const auto& words = lexicon();
  while (true) {
    const auto count = rng.uniform_int(1, 3);
    std::string s;
    for (long i = 0; i < count; ++i) {
      if (i) s.push_back(kPause);
      s += words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(words.size()) - 1))];
    }
    if (s.size() <= max_chars) return s;
  }
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::string serialize_row(const ManifestRow& row) {
  nlohmann::ordered_json j;
  j["clip_id"] = row.clip_id;
  j["frames_path"] = row.frames_path;
  j["audio_path"] = row.audio_path;
  j["transcript"] = row.transcript;
  j["condition"] = row.condition.code();
  j["seed"] = row.seed;
  j["split"] = split_name(row.split);
  j["frames"] = row.frames;
  return j.dump();
}

ManifestRow parse_row(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  ManifestRow r;
  r.clip_id = j.at("clip_id").get<std::string>();
  r.frames_path = j.at("frames_path").get<std::string>();
  r.audio_path = j.at("audio_path").get<std::string>();
  r.transcript = j.at("transcript").get<std::string>();
  r.condition = ConditionLabel::parse(j.at("condition").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.split = parse_split(j.at("split").get<std::string>());
  r.frames = j.at("frames").get<std::size_t>();
  return r;
}

CorpusPlan plan_corpus(const CorpusConfig& cfg) {
  if (cfg.test_clips + cfg.val_clips >= cfg.clips)
    throw std::invalid_argument("corpus: test + val clips must leave room for training clips");
  CorpusPlan plan;
  const std::size_t n = cfg.clips;
  plan.split.assign(n, Split::Train);
  plan.condition.assign(n, ConditionLabel::clean());
  plan.clip_seed.resize(n);
  plan.transcript.resize(n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(mix_seed(cfg.seed, 0x5B1));
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  for (std::size_t k = 0; k < n; ++k)
    plan.split[order[k]] = k < cfg.test_clips ? Split::Test : k < cfg.test_clips + cfg.val_clips ? Split::Val : Split::Train;

  // Balanced factor levels inside each split, shuffled independently per factor.
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (plan.split[i] == sp) members.push_back(i);
    std::size_t clean = 0;
    if (sp != Split::Test) clean = static_cast<std::size_t>(std::floor(cfg.clean_fraction * members.size()));
    const std::size_t m = members.size() - clean;
    Rng rng(mix_seed(cfg.seed, 0xC0D, static_cast<std::uint64_t>(sp)));
    auto levels = [&](int count) {
      std::vector<int> v(m);
      for (std::size_t i = 0; i < m; ++i) v[i] = static_cast<int>(i % count);
      std::shuffle(v.begin(), v.end(), rng.engine());
      return v;
    };
    const auto il = levels(3), oc = levels(2), bl = levels(3), po = levels(3);
    for (std::size_t k = 0; k < m; ++k) {
      auto& c = plan.condition[members[clean + k]];
      c.illumination = static_cast<Illumination>(il[k]);
      c.occlusion = static_cast<Occlusion>(oc[k]);
      c.blur = static_cast<Blur>(bl[k]);
      c.pose = static_cast<Pose>(po[k]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    plan.clip_seed[i] = mix_seed(cfg.seed, i, 0xC11F);
    Rng rng(mix_seed(plan.clip_seed[i], 0x7E7));
    plan.transcript[i] = sample_transcript(kMaxFrames, rng);
  }
  return plan;
}

namespace {

std::string clip_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%05zu", i);
  return buf;
}

}  // namespace

std::vector<ManifestRow> write_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir) {
  const auto plan = plan_corpus(cfg);
  std::vector<ManifestRow> rows(cfg.clips);
  std::vector<VideoClip> clips(cfg.clips);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < cfg.clips; ++i)
    clips[i] = generate_clip(plan.transcript[i], plan.clip_seed[i], plan.condition[i]);
  std::string manifest;
  for (std::size_t i = 0; i < cfg.clips; ++i) {
    auto& r = rows[i];
    r.clip_id = clip_name(i);
    r.frames_path = "clips/" + r.clip_id + ".frames";
    r.audio_path = "clips/" + r.clip_id + ".audio";
    r.transcript = plan.transcript[i];
    r.condition = plan.condition[i];
    r.seed = plan.clip_seed[i];
    r.split = plan.split[i];
    r.frames = clips[i].frames.dim(0);
    write_tensor_file(dir / r.frames_path, clips[i].frames);
    write_tensor_file(dir / r.audio_path, clips[i].audio);
    manifest += serialize_row(r) + "\n";
  }
  write_text_file(dir / "manifest.jsonl", manifest);
  return rows;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.jsonl");
  if (!is) throw IoError("missing corpus manifest in " + dir.string());
  std::vector<ManifestRow> rows;
  std::set<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_row(line));
    if (!ids.insert(rows.back().clip_id).second) throw IoError("duplicate clip id " + rows.back().clip_id);
  }
  if (rows.empty()) throw IoError("empty corpus manifest in " + dir.string());
  return rows;
}

}  // namespace glip
