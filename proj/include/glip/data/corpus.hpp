#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glip/core/rng.hpp"
#include "glip/core/tensor.hpp"

namespace glip {

// Synthetic audio-visual "language": words over twelve phoneme letters,
// separated by a pause character. Each frame shows a grayscale mouth whose
// shape follows a 4-D articulatory latent (aperture, width, teeth, lip
// thickness); the audio stream is a fixed noisy linear readout of the same
// latent at four samples per frame.

inline constexpr std::size_t kFrameSize = 32;
inline constexpr std::size_t kAudioDim = 8;
inline constexpr std::size_t kAudioPerFrame = 4;
inline constexpr std::size_t kMinFrames = 8;
inline constexpr std::size_t kMaxFrames = 24;
inline constexpr char kPause = ' ';

/// The twelve phonemes, in vocabulary order.
const std::string& phoneme_letters();
/// Characters that may appear in a transcript (pause first).
std::string transcript_alphabet();
const std::vector<std::string>& lexicon();

using Latent = std::array<double, 4>;  // aperture, width, teeth, thickness

/// Articulatory target of a character (the pause maps to the rest pose).
Latent phoneme_target(char c);
Latent rest_pose();

/// Per-character gesture: rest + (target - rest) * sin(pi * s) for s in [0,1].
Latent gesture(char c, double s);

/// Latent trajectory at continuous time tau in [0, T): character j occupies
/// [j*T/n, (j+1)*T/n) and is evaluated at its local phase.
Latent latent_at(const std::string& text, std::size_t frames, double tau);

/// One 32x32 frame (row-major, values in [0,1]).
std::vector<double> render_mouth(const Latent& z);

enum class Illumination { B, M, D };
enum class Occlusion { N, Y };
enum class Blur { C, M, B };
enum class Pose { S, M, L };

struct ConditionLabel {
  Illumination illumination = Illumination::M;
  Occlusion occlusion = Occlusion::N;
  Blur blur = Blur::C;
  Pose pose = Pose::S;

  static ConditionLabel clean() { return {}; }
  bool operator==(const ConditionLabel&) const = default;
  /// Four letters, e.g. "MNCS".
  std::string code() const;
  static ConditionLabel parse(const std::string& code);
};

/// Mouth-region box used by the occluder: rows [y0,y1), cols [x0,x1).
struct Region {
  std::size_t y0 = 6, y1 = 26, x0 = 4, x1 = 28;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

struct DegradeParams {
  double gain = 1.0;
  double occlusion_fraction = 0.0;
  std::size_t occlusion_start_col = 0;  // offset within the region
  double sigma = 0.0;
  double yaw_deg = 0.0;
  int yaw_side = 1;  // +1 or -1

  static DegradeParams clean() { return {}; }
  /// Draws the concrete parameters for a condition from the clip seed.
  static DegradeParams sample(const ConditionLabel& cond, std::uint64_t seed);
};

inline constexpr double kOccluderValue = 0.8;
inline constexpr double kSkinValue = 0.62;

double illumination_gain(Illumination i);
double blur_sigma(Blur b);
std::pair<double, double> yaw_range(Pose p);

/// Frames [T,1,H,W]; order: pose warp, occlusion, gain, blur, clamp to [0,1].
Tensor degrade(const Tensor& frames, const DegradeParams& p);

/// Pixels covered by the occluder, row-major over the full frame.
std::vector<bool> occlusion_mask(const DegradeParams& p);

/// Number of occluded pixels for a given fraction: floor(fraction * area).
std::size_t occluded_pixel_count(double fraction);

struct AugmentParams {
  std::size_t crop_size = kFrameSize;
  std::size_t crop_y = 0, crop_x = 0;
  std::size_t mask_start = 0, mask_len = 0;
  double gain = 1.0;
  double sigma = 0.0;

  static AugmentParams identity() { return {}; }
  /// Crop 28 at a random offset, mask up to ceil(T/8) frames, mild gain/blur.
  static AugmentParams sample(std::size_t frames, Rng& rng);
};

/// Training-time augmentation: crop + nearest resize back to full size,
/// time mask (filled with the clip's mean pixel), mild photometric noise.
Tensor augment(const Tensor& frames, const AugmentParams& p);

struct VideoClip {
  std::string clip_id;
  std::string transcript;
  ConditionLabel condition;
  std::uint64_t seed = 0;
  Tensor frames;       // [T,1,32,32]
  Tensor clean_frames; // [T,1,32,32], before degradation
  Tensor audio;        // [4T, 8]
  Tensor latent;       // [T, 4], articulatory trajectory at frame centres
  DegradeParams degradation;
};

/// Frame count drawn for a transcript from its seed (needs 2 frames per character).
std::size_t draw_frame_count(const std::string& transcript, std::uint64_t seed);

VideoClip generate_clip(const std::string& transcript, std::uint64_t seed, const ConditionLabel& cond,
                        std::optional<DegradeParams> override_params = std::nullopt);

/// Random transcript of whole lexicon words whose length fits `frames`.
std::string sample_transcript(std::size_t frames, Rng& rng);

enum class Split { Train, Val, Test };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestRow {
  std::string clip_id;
  std::string frames_path;  // relative to the corpus directory
  std::string audio_path;
  std::string transcript;
  ConditionLabel condition;
  std::uint64_t seed = 0;
  Split split = Split::Train;
  std::size_t frames = 0;

  bool operator==(const ManifestRow&) const = default;
};

std::string serialize_row(const ManifestRow& row);
ManifestRow parse_row(const std::string& line);

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t clips = 500;
  std::size_t test_clips = 150;
  std::size_t val_clips = 50;
  /// Fraction of train/val clips rendered under the clean condition
  /// (the rest are balanced over the factor levels).
  double clean_fraction = 0.5;  // train and val only
};

/// Assignment of clips to splits and condition bins. A pure function of
/// the config: each factor level is balanced within the test split.
struct CorpusPlan {
  std::vector<Split> split;
  std::vector<ConditionLabel> condition;
  std::vector<std::uint64_t> clip_seed;
  std::vector<std::string> transcript;
};

CorpusPlan plan_corpus(const CorpusConfig& cfg);

/// Generates and writes the corpus: clips/<id>.frames, clips/<id>.audio and
/// manifest.jsonl, in clip-index order.
std::vector<ManifestRow> write_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir);

std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir);

}  // namespace glip
