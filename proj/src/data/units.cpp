#include "glip/data/units.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <span>

#include "glip/core/rng.hpp"
#include "glip/data/corpus.hpp"
#include "glip/data/tensor_io.hpp"
#include "json.hpp"

namespace glip {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'C', 'B'};
constexpr std::uint32_t kVersion = 1;

double sqdist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const double* x, std::span<const double> c, std::size_t V, std::size_t A) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < V; ++v) {
    const double d = sqdist(x, c.data() + v * A, A);
    if (d < bd) {
      bd = d;
      best = v;
    }
  }
  return best;
}

}  // namespace

Codebook fit_codebook(const std::vector<Tensor>& audio, std::size_t units, std::uint64_t seed,
                      std::size_t iterations) {
  if (units == 0) throw ConfigError("codebook size must be positive");
  if (audio.empty()) throw ConfigError("no audio to fit a codebook on");
  const std::size_t A = audio.front().dim(1);
  std::vector<double> pts;
  for (const auto& a : audio) {
    if (a.rank() != 2 || a.dim(1) != A) throw ShapeError("audio matrices must share feature size");
    pts.insert(pts.end(), a.data().begin(), a.data().end());
  }
  const std::size_t M = pts.size() / A;
  if (M < units) throw ConfigError("fewer audio frames (" + std::to_string(M) + ") than units");

  Rng rng(mix_seed(seed, 0xC0DE));
  std::vector<double> c(units * A);
  std::vector<double> d2(M, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(M) - 1));
  for (std::size_t v = 0; v < units; ++v) {
    std::copy_n(pts.begin() + static_cast<long>(pick * A), A, c.begin() + static_cast<long>(v * A));
    double total = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      d2[i] = std::min(d2[i], sqdist(pts.data() + i * A, c.data() + v * A, A));
      total += d2[i];
    }
    if (v + 1 == units) break;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(M) - 1));
      continue;
    }
    double r = rng.uniform(0.0, total);
    pick = M - 1;
    for (std::size_t i = 0; i < M; ++i) {
      r -= d2[i];
      if (r < 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<std::size_t> assign(M);
  for (std::size_t it = 0; it < iterations; ++it) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < M; ++i) assign[i] = nearest(pts.data() + i * A, c, units, A);
    std::vector<double> sum(units * A, 0.0);
    std::vector<std::size_t> count(units, 0);
    for (std::size_t i = 0; i < M; ++i) {
      ++count[assign[i]];
      for (std::size_t k = 0; k < A; ++k) sum[assign[i] * A + k] += pts[i * A + k];
    }
    bool moved = false;
    for (std::size_t v = 0; v < units; ++v) {
      if (count[v] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t k = 0; k < A; ++k) {
        const double nv = sum[v * A + k] / static_cast<double>(count[v]);
        moved |= nv != c[v * A + k];
        c[v * A + k] = nv;
      }
    }
    if (!moved) break;
  }
  return {seed, Tensor::from({units, A}, std::move(c))};
}

std::vector<std::size_t> quantize(const Tensor& audio, const Codebook& cb) {
  if (audio.rank() != 2 || audio.dim(1) != cb.dim())
    throw ShapeError("quantize: audio " + shape_str(audio.shape()) + " vs codebook " + shape_str(cb.centroids.shape()));
  const std::size_t M = audio.dim(0), A = cb.dim(), V = cb.size();
  const auto& c = cb.centroids.data();
  std::vector<std::size_t> out(M);
  for (std::size_t i = 0; i < M; ++i) out[i] = nearest(audio.data().data() + i * A, c, V, A);
  return out;
}

std::vector<std::size_t> quantize_clip(const Tensor& audio, std::size_t frames, const Codebook& cb,
                                       std::size_t per_frame) {
  if (audio.rank() != 2 || audio.dim(0) != per_frame * frames)
    throw ConfigError("unit rate mismatch: " + std::to_string(audio.rank() ? audio.dim(0) : 0) + " audio rows for " +
                      std::to_string(frames) + " frames at " + std::to_string(per_frame) + " units per frame");
  return quantize(audio, cb);
}

void write_codebook(const std::filesystem::path& path, const Codebook& cb) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  auto put = [&](auto v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
  os.write(kMagic, 4);
  put(kVersion);
  put(static_cast<std::uint64_t>(cb.seed));
  put(static_cast<std::uint64_t>(cb.size()));
  put(static_cast<std::uint64_t>(cb.dim()));
  os.write(reinterpret_cast<const char*>(cb.centroids.data().data()),
           static_cast<std::streamsize>(cb.centroids.numel() * sizeof(double)));
  if (!os) throw IoError("write failed for " + path.string());
}

Codebook read_codebook(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  auto get = [&](auto& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated codebook " + path.string());
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a codebook: " + path.string());
  std::uint32_t version;
  get(version);
  if (version != kVersion) throw IoError("unsupported codebook version " + std::to_string(version));
  std::uint64_t seed, V, A;
  get(seed);
  get(V);
  get(A);
  std::vector<double> data(V * A);
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double))))
    throw IoError("truncated codebook " + path.string());
  return {seed, Tensor::from({V, A}, std::move(data))};
}

void write_units(const std::filesystem::path& path, const UnitTable& units) {
  std::string text;
  for (const auto& [id, u] : units) {
    nlohmann::ordered_json j;
    j["clip_id"] = id;
    j["units"] = u;
    text += j.dump() + "\n";
  }
  write_text_file(path, text);
}

UnitTable read_units(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  UnitTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    t[j.at("clip_id").get<std::string>()] = j.at("units").get<std::vector<std::size_t>>();
  }
  return t;
}

UnitsResult build_units(const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                        std::size_t units, std::uint64_t seed, std::size_t iterations) {
  const auto rows = read_manifest(corpus_dir);
  std::vector<Tensor> audio(rows.size()), train;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    audio[i] = read_tensor_file(corpus_dir / rows[i].audio_path);
    if (rows[i].split == Split::Train) train.push_back(audio[i]);
  }
  UnitsResult r;
  r.codebook = fit_codebook(train, units, seed, iterations);
  for (std::size_t i = 0; i < rows.size(); ++i)
    r.units[rows[i].clip_id] = quantize_clip(audio[i], rows[i].frames, r.codebook, kAudioPerFrame);
  write_codebook(out_dir / "codebook.bin", r.codebook);
  write_units(out_dir / "units.jsonl", r.units);
  return r;
}

}  // namespace glip
