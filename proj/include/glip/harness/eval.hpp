#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "glip/harness/model.hpp"

namespace glip {

std::vector<std::string> split_words(const std::string& text);

/// Word-level Levenshtein distance.
std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

/// edit_distance / |ref|; throws std::invalid_argument on an empty reference.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
double wer(const std::string& ref, const std::string& hyp);

struct ClipResult {
  std::string clip_id;
  ConditionLabel condition;
  std::string reference;
  std::string hypothesis;
  double wer = 0.0;
};

/// One column of the condition table.
struct BinCell {
  std::string factor;  // illumination | occlusion | blur | pose
  char level = ' ';
  std::size_t clips = 0;
  std::optional<double> wer;  // absent when the bin has no clips
};

/// Overall WER is the mean per-clip WER; each cell averages its clips.
struct EvalReport {
  double overall_wer = 0.0;
  std::size_t clips = 0;
  std::array<BinCell, 11> cells;
  std::vector<ClipResult> results;  // sorted by clip id
};

/// Column order: illumination B M D, occlusion N Y, blur C M B, pose S M L.
EvalReport make_report(std::vector<ClipResult> results);

/// Largest |overall - clip-weighted mean of the bins| over the four factors.
double partition_gap(const EvalReport& r);

/// Decodes every example (in parallel, aggregated in clip-id order).
EvalReport evaluate(const GlipModel& model, const std::vector<Example>& data);

/// Structured (JSON) form of the report, including per-clip records.
std::string report_json(const EvalReport& r, const std::map<std::string, std::string>& meta = {});
EvalReport parse_report_json(const std::string& text);
/// Aligned plain-text table.
std::string report_table(const EvalReport& r, const std::string& title = "");
std::string hypotheses_jsonl(const EvalReport& r);

/// report.json, report.txt and hypotheses.jsonl into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& r,
                  const std::map<std::string, std::string>& meta = {});

/// Attention maps of the first `count` examples: <id>.bin (tensor file, M as
/// [N,T,h,w]), <id>.txt (shape and dtype) and <id>.pgm (region x time grid).
std::vector<std::filesystem::path> export_heatmaps(const GlipModel& model, const std::vector<Example>& data,
                                                   std::size_t count, const std::filesystem::path& dir);

/// Tiles M [N,T,h,w] into an 8-bit grayscale image (rows = regions, columns
/// = frames), each map scaled to its own maximum and upsampled by `zoom`.
std::string heatmap_pgm(const Tensor& M, std::size_t zoom = 4);

}  // namespace glip
