#pragma once

#include <string>
#include <vector>

#include "glip/harness/eval.hpp"
#include "glip/harness/train.hpp"

namespace glip {

/// One configuration of the stage-1 / stage-2 / fusion ablation.
struct AblationRow {
  std::string name;
  std::string stage1;  // none | global | global_local
  std::string stage2;  // global | local | global_local
  std::string fusion;  // none | avg | cem

  /// The run settings for this row on top of a base config.
  RunConfig apply(const RunConfig& base) const;
};

/// The six rows, from the plain global baseline to stage-1 G&L + CEM.
const std::vector<AblationRow>& ablation_rows();

struct AblationCell {
  std::string row;
  std::uint64_t seed = 0;
  double wer = 0.0;
  double final_loss = 0.0;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::string table() const;
  std::string json() const;
};

/// Runs stage 1 (once per seed and stream set) and stage 2 + evaluation for
/// every row and seed. Each row's settings are written to
/// run_dir/ablation/seed<k>/<row>.conf and its report next to it.
AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& progress = {});

/// Stage-1 checkpoint + stage-2 training + evaluation for one config (the
/// stage-1 checkpoint is trained first when init = stage1 and it is missing).
struct PipelineResult {
  TrainResult stage2;
  EvalReport report;
};
PipelineResult train_and_evaluate(const RunConfig& cfg, const std::vector<Example>& eval_data);

}  // namespace glip
