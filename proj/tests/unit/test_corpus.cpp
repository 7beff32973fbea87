#include <cmath>
#include <algorithm>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <numbers>
#include <set>

#include "doctest.h"
#include "glip/data/corpus.hpp"
#include "glip/data/tensor_io.hpp"

using namespace glip;

namespace {

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double mean(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("glip_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("clip generation is deterministic in the seed") {
  auto cond = ConditionLabel::parse("DYBL");
  auto a = generate_clip("bad mo", 77, cond), b = generate_clip("bad mo", 77, cond);
  CHECK(same(a.frames, b.frames));
  CHECK(same(a.audio, b.audio));
  auto c = generate_clip("bad mo", 78, cond);
  CHECK(!same(a.frames, c.frames));
}

TEST_CASE("shapes and value range") {
  auto clip = generate_clip("kibo", 3, ConditionLabel::parse("BYMM"));
  const std::size_t T = clip.frames.dim(0);
  CHECK(T >= kMinFrames);
  CHECK(T <= kMaxFrames);
  CHECK(clip.frames.shape() == Shape{T, 1, kFrameSize, kFrameSize});
  CHECK(clip.audio.shape() == Shape{4 * T, kAudioDim});
  for (double v : clip.frames.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS(generate_clip("bax", 1, ConditionLabel::clean()));
  CHECK_THROWS(draw_frame_count("sobi sobi sobi", 1));
}

TEST_CASE("clean degradation is the identity") {
  auto clip = generate_clip("sade", 11, ConditionLabel::clean(), DegradeParams::clean());
  CHECK(same(clip.frames, clip.clean_frames));
  CHECK(same(degrade(clip.clean_frames, DegradeParams::clean()), clip.clean_frames));
}

TEST_CASE("sampled clean condition leaves frames untouched") {
  auto clip = generate_clip("sade", 11, ConditionLabel::clean());
  CHECK(clip.degradation.yaw_deg < 30.0);
  auto p = clip.degradation;
  p.yaw_deg = 0.0;
  CHECK(same(degrade(clip.clean_frames, p), clip.clean_frames));
}

TEST_CASE("dark gain scales the mean intensity") {
  auto clip = generate_clip("mud", 5, ConditionLabel::clean(), DegradeParams::clean());
  DegradeParams p;
  p.gain = illumination_gain(Illumination::D);
  CHECK(p.gain == 0.45);
  auto dark = degrade(clip.clean_frames, p);
  CHECK(std::abs(mean(dark) - 0.45 * mean(clip.clean_frames)) < 1e-12);
}

TEST_CASE("occluder covers exactly floor(f * area) pixels") {
  CHECK(Region{}.area() == 480);
  for (double f : {0.2, 0.3, 0.37, 0.4}) {
    DegradeParams p;
    p.occlusion_fraction = f;
    auto m = occlusion_mask(p);
    std::size_t n = 0;
    for (bool b : m) n += b;
    CHECK(n == static_cast<std::size_t>(std::floor(f * 480)));
  }
  DegradeParams p;
  p.occlusion_fraction = 0.3;
  p.occlusion_start_col = 5;
  auto clip = generate_clip("go", 2, ConditionLabel::clean(), DegradeParams::clean());
  auto out = degrade(clip.clean_frames, p);
  auto m = occlusion_mask(p);
  const Region r;
  for (std::size_t t = 0; t < out.dim(0); ++t)
    for (std::size_t i = 0; i < m.size(); ++i) {
      const std::size_t y = i / kFrameSize, x = i % kFrameSize;
      if (m[i]) {
        CHECK(y >= r.y0);
        CHECK(y < r.y1);
        CHECK(x >= r.x0);
        CHECK(x < r.x1);
        CHECK(out[t * 1024 + i] == kOccluderValue);
      } else {
        CHECK(out[t * 1024 + i] == clip.clean_frames[t * 1024 + i]);
      }
    }
  p.occlusion_start_col = 20;
  CHECK_THROWS(occlusion_mask(p));
}

TEST_CASE("sampled occlusion stays within bounds") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto p = DegradeParams::sample(ConditionLabel::parse("MYCS"), s);
    CHECK(p.occlusion_fraction >= 0.2);
    CHECK(p.occlusion_fraction <= 0.4);
    CHECK_NOTHROW(occlusion_mask(p));
    auto q = DegradeParams::sample(ConditionLabel::parse("MNCL"), s);
    CHECK(q.yaw_deg >= 60.0);
    CHECK(q.yaw_deg <= 90.0);
    CHECK(q.occlusion_fraction == 0.0);
  }
}

TEST_CASE("blur preserves mass away from the border and reduces contrast") {
  auto clip = generate_clip("a", 9, ConditionLabel::clean(), DegradeParams::clean());
  DegradeParams p;
  p.sigma = blur_sigma(Blur::B);
  auto b = degrade(clip.clean_frames, p);
  CHECK(std::abs(mean(b) - mean(clip.clean_frames)) < 1e-3);
  auto range = [](const Tensor& t) {
    auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
    return *hi - *lo;
  };
  CHECK(range(b) < range(clip.clean_frames));
}

TEST_CASE("audio is independent of the visual condition") {
  auto a = generate_clip("fosa", 21, ConditionLabel::clean());
  auto b = generate_clip("fosa", 21, ConditionLabel::parse("DYBL"));
  CHECK(same(a.audio, b.audio));
  CHECK(same(a.clean_frames, b.clean_frames));
  CHECK(!same(a.frames, b.frames));
}

TEST_CASE("single-token trajectory follows the closed-form template") {
  for (char c : phoneme_letters()) {
    auto clip = generate_clip(std::string(1, c), 4, ConditionLabel::clean());
    const std::size_t T = clip.frames.dim(0);
    const Latent rest = rest_pose(), tgt = phoneme_target(c);
    for (std::size_t t = 0; t < T; ++t) {
      const double s = (t + 0.5) / static_cast<double>(T);
      for (std::size_t k = 0; k < 4; ++k) {
        const double expect = rest[k] + (tgt[k] - rest[k]) * std::sin(std::numbers::pi * s);
        CHECK(std::abs(clip.latent[t * 4 + k] - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("rendered aperture grows with the latent") {
  auto dark = [](const std::vector<double>& img) {
    std::size_t n = 0;
    for (double v : img) n += v < 0.2;
    return n;
  };
  Latent z = rest_pose();
  std::size_t prev = 0;
  for (double a : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    z[0] = a;
    const auto n = dark(render_mouth(z));
    CHECK(n > prev);
    prev = n;
  }
  z[0] = 0.0;
  CHECK(dark(render_mouth(z)) == 0);
}

TEST_CASE("augmentation identity, crop shape and time mask") {
  auto clip = generate_clip("dime", 8, ConditionLabel::parse("MNMS"));
  CHECK(same(augment(clip.frames, AugmentParams::identity()), clip.frames));

  AugmentParams crop;
  crop.crop_size = 28;
  crop.crop_y = 4;
  crop.crop_x = 0;
  auto c = augment(clip.frames, crop);
  CHECK(c.shape() == clip.frames.shape());
  CHECK(c[0] == clip.frames[4 * 32]);

  AugmentParams mask;
  mask.mask_start = 1;
  mask.mask_len = 2;
  auto m = augment(clip.frames, mask);
  const double mu = mean(clip.frames);
  for (std::size_t i = 1024; i < 3 * 1024; ++i) CHECK(std::abs(m[i] - mu) < 1e-12);
  for (std::size_t i = 0; i < 1024; ++i) CHECK(m[i] == clip.frames[i]);

  Rng rng(3);
  for (int k = 0; k < 30; ++k) {
    const std::size_t T = clip.frames.dim(0);
    auto p = AugmentParams::sample(T, rng);
    CHECK(p.crop_size == 28);
    CHECK(p.crop_y <= 4);
    CHECK(p.mask_len <= (T + 7) / 8);
    CHECK(p.mask_start + p.mask_len <= T);
    CHECK(augment(clip.frames, p).shape() == clip.frames.shape());
  }
  AugmentParams bad;
  bad.crop_y = 1;
  CHECK_THROWS(augment(clip.frames, bad));
}

TEST_CASE("condition codes round trip") {
  for (const char* code : {"BNCS", "MYMM", "DYBL"}) CHECK(ConditionLabel::parse(code).code() == code);
  CHECK(ConditionLabel::clean().code() == "MNCS");
  CHECK_THROWS(ConditionLabel::parse("XNCS"));
  CHECK_THROWS(ConditionLabel::parse("MNC"));
}

TEST_CASE("manifest rows round trip") {
  ManifestRow r{"c00042", "clips/c00042.frames", "clips/c00042.audio", "ba sim", ConditionLabel::parse("DNBM"),
                0xFFFFFFFFFFFFFFF1ULL, Split::Val, 17};
  CHECK(parse_row(serialize_row(r)) == r);
  CHECK_THROWS(parse_row("{\"clip_id\": 1}"));
}

TEST_CASE("corpus plan: disjoint splits and balanced test bins") {
  CorpusConfig cfg;
  auto plan = plan_corpus(cfg);
  CHECK(plan.split.size() == 500);
  std::size_t test = 0, val = 0;
  std::map<std::string, std::size_t> bins;
  for (std::size_t i = 0; i < 500; ++i) {
    test += plan.split[i] == Split::Test;
    val += plan.split[i] == Split::Val;
    if (plan.split[i] != Split::Test) continue;
    const auto code = plan.condition[i].code();
    for (std::size_t f = 0; f < 4; ++f) ++bins[std::to_string(f) + code[f]];
  }
  CHECK(test == 150);
  CHECK(val == 50);
  CHECK(bins.size() == 11);
  for (const auto& [k, n] : bins) CHECK(n >= 50);
  std::size_t train_clean = 0;
  for (std::size_t i = 0; i < 500; ++i)
    train_clean += plan.split[i] == Split::Train && plan.condition[i] == ConditionLabel::clean();
  CHECK(train_clean >= 150);  // half of the 300 training clips, plus chance draws
  std::set<std::uint64_t> seeds(plan.clip_seed.begin(), plan.clip_seed.end());
  CHECK(seeds.size() == 500);
  for (const auto& t : plan.transcript) CHECK(2 * t.size() <= kMaxFrames);
  auto again = plan_corpus(cfg);
  CHECK(again.transcript == plan.transcript);
  CHECK(again.split == plan.split);

  cfg.test_clips = 400;
  cfg.val_clips = 100;
  CHECK_THROWS(plan_corpus(cfg));
}

TEST_CASE("corpus written to disk reads back identically") {
  auto dir = temp_dir("corpus");
  CorpusConfig cfg;
  cfg.clips = 24;
  cfg.test_clips = 6;
  cfg.val_clips = 3;
  auto rows = write_corpus(cfg, dir);
  auto back = read_manifest(dir);
  CHECK(back == rows);
  std::set<std::string> ids;
  for (const auto& r : back) {
    ids.insert(r.clip_id);
    auto f = read_tensor_file(dir / r.frames_path);
    auto a = read_tensor_file(dir / r.audio_path);
    CHECK(f.dim(0) == r.frames);
    CHECK(a.dim(0) == 4 * r.frames);
    auto clip = generate_clip(r.transcript, r.seed, r.condition);
    CHECK(same(clip.frames, f));
  }
  CHECK(ids.size() == 24);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_manifest(dir), IoError);
}
