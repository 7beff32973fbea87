#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "glip/core/tensor.hpp"

namespace glip {

/// Discrete audio units: k-means centroids over audio feature vectors.
struct Codebook {
  std::uint64_t seed = 0;
  Tensor centroids;  // [V, A]

  std::size_t size() const { return centroids.dim(0); }
  std::size_t dim() const { return centroids.dim(1); }
};

/// Seeded k-means++ initialisation followed by Lloyd iterations.
/// `audio` holds [M_i, A] matrices; all rows are pooled.
Codebook fit_codebook(const std::vector<Tensor>& audio, std::size_t units, std::uint64_t seed,
                      std::size_t iterations = 25);

/// Nearest centroid per row (squared Euclidean, ties to the lowest index).
std::vector<std::size_t> quantize(const Tensor& audio, const Codebook& cb);

/// Quantizes a clip and checks the unit rate: audio must have
/// `per_frame * frames` rows, otherwise ConfigError.
std::vector<std::size_t> quantize_clip(const Tensor& audio, std::size_t frames, const Codebook& cb,
                                       std::size_t per_frame = 4);

/// Binary layout: "GLCB", u32 version, u64 seed, u64 V, u64 A, f64 x V*A.
void write_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook read_codebook(const std::filesystem::path& path);

using UnitTable = std::map<std::string, std::vector<std::size_t>>;

/// One JSON object per line: {"clip_id": ..., "units": [...]}.
void write_units(const std::filesystem::path& path, const UnitTable& units);
UnitTable read_units(const std::filesystem::path& path);

struct UnitsResult {
  Codebook codebook;
  UnitTable units;
};

/// Fits the codebook on the train split of a corpus directory, quantizes every
/// clip and writes codebook.bin and units.jsonl into `out_dir`.
UnitsResult build_units(const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                        std::size_t units, std::uint64_t seed, std::size_t iterations = 25);

}  // namespace glip
