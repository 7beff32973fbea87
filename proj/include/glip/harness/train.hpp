#pragma once

#include <functional>
#include <string>
#include <vector>

#include "glip/harness/checkpoint.hpp"
#include "glip/harness/model.hpp"

namespace glip {

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double part_a = 0.0;  // stage 1: global term, stage 2: CTC term
  double part_b = 0.0;  // stage 1: local term,  stage 2: attention CE
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> log;
  Checkpoint checkpoint;
};

/// Called after every optimizer step (progress output).
using StepCallback = std::function<void(const StepRecord&)>;

/// Stage 1: align global (and local) streams with audio units.
/// Requires corpus_dir/manifest.jsonl and units_dir/units.jsonl.
TrainResult train_stage1(const RunConfig& cfg, const StepCallback& on_step = {});

/// Stage 2: hybrid CTC-attention training of the fused recognizer. With
/// init = stage1 the front-end and dual-path tensors are loaded by name from
/// cfg.stage1_checkpoint (plus the alignment encoder when seed_encoder).
TrainResult train_stage2(const RunConfig& cfg, const StepCallback& on_step = {});

/// Applies the stage-1 initialisation rules to a fresh stage-2 model.
void init_from_stage1(GlipModel& model, const Checkpoint& stage1);

/// Writes one JSON line per step.
void write_train_log(const std::filesystem::path& path, const std::vector<StepRecord>& log);

/// Order in which clips are visited: one seeded permutation per epoch.
std::vector<std::size_t> batch_indices(std::size_t dataset, std::size_t batch, std::size_t step, std::uint64_t seed);

}  // namespace glip
