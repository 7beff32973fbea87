#pragma once

#include <filesystem>
#include <string>

#include "glip/core/tensor.hpp"

namespace glip {

/// Raw tensor file:
///   bytes 0-3   magic "GLTN"
///   u32         format version (1)
///   u32         rank
///   u64 x rank  dimensions
///   f64 x numel values, row-major
/// All integers and doubles little-endian.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glip
