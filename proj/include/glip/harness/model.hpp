#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glip/data/corpus.hpp"
#include "glip/data/units.hpp"
#include "glip/harness/config.hpp"
#include "glip/model/alignment.hpp"
#include "glip/model/cem.hpp"
#include "glip/model/dual_path.hpp"
#include "glip/model/frontend.hpp"
#include "glip/model/recognizer.hpp"

namespace glip {

/// One clip held in memory for training or evaluation.
struct Example {
  std::string clip_id;
  std::string transcript;
  ConditionLabel condition;
  Tensor frames;                    // [T,1,32,32]
  std::vector<std::size_t> units;   // 4T codes, empty when units were not loaded
};

/// Loads one split of a corpus, sorted by clip id. `units_dir` may be empty.
std::vector<Example> load_split(const std::filesystem::path& corpus_dir, const std::filesystem::path& units_dir,
                                Split split);

/// Zero mean, unit variance over the whole clip (model input normalisation).
Tensor standardize_clip(const Tensor& frames);

/// Parameter-name prefixes shared by both stages.
inline const std::string kFrontendPrefix = "frontend.";
inline const std::string kDualPathPrefix = "dual_path.";
inline const std::string kAlignPrefix = "align.";
inline const std::string kCemPrefix = "cem.";
inline const std::string kRecognizerPrefix = "recognizer.";

struct Streams {
  Tensor G;            // [T,D]
  RegionBundle local;  // local.L undefined when the local branch is skipped
};

/// Front-end + dual path + a stage-specific head. Parameters live in `params`.
class GlipModel {
 public:
  static GlipModel stage1(const RunConfig& cfg);
  static GlipModel stage2(const RunConfig& cfg);

  GlipModel(GlipModel&&) = default;
  GlipModel& operator=(GlipModel&&) = default;

  nn::ParamStore& params() { return *params_; }
  const nn::ParamStore& params() const { return *params_; }
  const RunConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const Recognizer& recognizer() const { return *rec_; }

  Streams streams(const Tensor& frames, bool need_local) const;

  /// Stage 1 objective for one clip.
  AlignmentLoss stage1_loss(const Tensor& frames, const std::vector<std::size_t>& units) const;

  /// Fused [T,D] sequence handed to the recognizer, per the configured fusion.
  Tensor fuse(const Streams& s) const;
  Tensor encode(const Tensor& frames, Tensor* attention_maps = nullptr) const;
  RecognizerLoss stage2_loss(const Tensor& frames, const std::string& transcript) const;
  Hypothesis transcribe(const Tensor& frames) const;

 private:
  explicit GlipModel(const RunConfig& cfg);
  RunConfig cfg_;
  Vocab vocab_;
  std::unique_ptr<nn::ParamStore> params_;
  Frontend frontend_;
  DualPath dual_;
  std::optional<AlignmentHead> head_;
  std::vector<CemLayer> cem_;
  std::optional<Recognizer> rec_;
};

nn::ConformerConfig encoder_config(const RunConfig& cfg);

}  // namespace glip
