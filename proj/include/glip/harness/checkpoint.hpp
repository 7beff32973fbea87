#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "glip/nn/params.hpp"

namespace glip {

/// Checkpoint file:
///   bytes 0-3  magic "GLCK"
///   u32        version (1)
///   u64        header length H
///   H bytes    JSON header {"meta": {...}, "tensors": [{"name","shape","offset"}...]}
///              with keys sorted and tensors in name order
///   f64 blob   tensor values back to back, offsets in doubles
/// Saving the same tensors and metadata always produces the same bytes.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of every parameter (values copied).
Checkpoint snapshot(const nn::ParamStore& ps, std::map<std::string, std::string> meta = {});

/// Raised when parameters cannot be restored; `problems` lists every
/// missing name and every shape mismatch.
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Copies checkpoint tensors into the store. Each rule maps a checkpoint
/// prefix to a store prefix; every store parameter under a target prefix
/// must be present with the same shape. Returns the number of tensors copied.
struct LoadRule {
  std::string from, to;
};
std::size_t load_parameters(nn::ParamStore& ps, const Checkpoint& ckpt, const std::vector<LoadRule>& rules);

}  // namespace glip
