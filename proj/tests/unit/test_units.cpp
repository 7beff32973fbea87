#include <algorithm>
#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "doctest.h"
#include "glip/data/corpus.hpp"
#include "glip/data/units.hpp"
#include "support/gradcheck.hpp"

using namespace glip;

namespace {

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Codebook make_codebook(std::vector<double> c, std::size_t V, std::size_t A) {
  return {0, Tensor::from({V, A}, std::move(c))};
}

}  // namespace

TEST_CASE("centroids quantize to their own index") {
  Rng rng(1);
  Codebook cb{0, glip::testing::random_tensor({16, 8}, rng, 1.0, false)};
  auto codes = quantize(cb.centroids, cb);
  for (std::size_t v = 0; v < 16; ++v) CHECK(codes[v] == v);
}

TEST_CASE("duplicate centroids resolve to the lowest index") {
  auto cb = make_codebook({1, 1, 0, 0, 0, 0, 1, 1}, 4, 2);
  auto codes = quantize(Tensor::from({3, 2}, {0.1, 0.0, 0.9, 1.2, 0.5, 0.5}), cb);
  CHECK(codes == std::vector<std::size_t>{1, 0, 0});
}

TEST_CASE("quantization matches brute force and is idempotent") {
  Rng rng(2);
  Codebook cb{0, glip::testing::random_tensor({12, 3}, rng, 1.0, false)};
  auto x = glip::testing::random_tensor({200, 3}, rng, 2.0, false);
  auto codes = quantize(x, cb);
  std::vector<double> snapped;
  for (std::size_t i = 0; i < 200; ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t v = 0; v < 12; ++v) {
      double d = 0;
      for (std::size_t k = 0; k < 3; ++k) d += std::pow(x[i * 3 + k] - cb.centroids[v * 3 + k], 2);
      if (d < bd) bd = d, best = v;
    }
    CHECK(codes[i] == best);
    for (std::size_t k = 0; k < 3; ++k) snapped.push_back(cb.centroids[best * 3 + k]);
  }
  CHECK(quantize(Tensor::from({200, 3}, snapped), cb) == codes);
}

TEST_CASE("unit rate is checked against the frame count") {
  auto clip = generate_clip("uma", 6, ConditionLabel::clean());
  const std::size_t T = clip.frames.dim(0);
  auto cb = fit_codebook({clip.audio}, 8, 3);
  CHECK(quantize_clip(clip.audio, T, cb).size() == 4 * T);
  CHECK_THROWS_AS(quantize_clip(clip.audio, T + 1, cb), ConfigError);
  CHECK_THROWS_AS(quantize(Tensor::zeros({4, 3}), cb), ShapeError);
}

TEST_CASE("k-means fitting is seeded and reduces distortion") {
  std::vector<Tensor> audio;
  for (std::uint64_t s = 0; s < 10; ++s) audio.push_back(generate_clip("baku efe", s, ConditionLabel::clean()).audio);
  auto a = fit_codebook(audio, 16, 5), b = fit_codebook(audio, 16, 5);
  CHECK(same(a.centroids, b.centroids));
  auto distortion = [&](const Codebook& cb) {
    double d = 0;
    for (const auto& x : audio) {
      auto codes = quantize(x, cb);
      for (std::size_t i = 0; i < codes.size(); ++i)
        for (std::size_t k = 0; k < cb.dim(); ++k) d += std::pow(x[i * cb.dim() + k] - cb.centroids[codes[i] * cb.dim() + k], 2);
    }
    return d;
  };
  CHECK(distortion(fit_codebook(audio, 16, 5, 20)) <= distortion(fit_codebook(audio, 16, 5, 0)) + 1e-12);
  CHECK_THROWS_AS(fit_codebook(audio, 0, 1), ConfigError);
  CHECK_THROWS_AS(fit_codebook({Tensor::zeros({3, 8})}, 4, 1), ConfigError);
}

TEST_CASE("codebook and unit files round trip") {
  auto dir = std::filesystem::temp_directory_path() / ("glip_units_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  CorpusConfig cfg;
  cfg.clips = 20;
  cfg.test_clips = 5;
  cfg.val_clips = 2;
  auto rows = write_corpus(cfg, dir / "corpus");
  auto r = build_units(dir / "corpus", dir / "units", 16, 9);
  auto cb = read_codebook(dir / "units" / "codebook.bin");
  CHECK(cb.seed == 9);
  CHECK(same(cb.centroids, r.codebook.centroids));
  auto u = read_units(dir / "units" / "units.jsonl");
  CHECK(u == r.units);
  CHECK(u.size() == rows.size());
  for (const auto& row : rows) {
    CHECK(u.at(row.clip_id).size() == 4 * row.frames);
    for (auto c : u.at(row.clip_id)) CHECK(c < 16);
  }
  std::filesystem::remove_all(dir);
}
