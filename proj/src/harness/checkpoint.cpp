#include "glip/harness/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "glip/data/tensor_io.hpp"
#include "json.hpp"

namespace glip {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::string join_problems(const std::string& what, const std::vector<std::string>& p) {
  std::string s = what;
  for (const auto& x : p) s += "\n  " + x;
  return s;
}

}  // namespace

CheckpointError::CheckpointError(const std::string& what, std::vector<std::string> problems)
    : std::runtime_error(join_problems(what, problems)), problems_(std::move(problems)) {}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string h = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  const std::uint32_t version = kVersion;
  const std::uint64_t len = h.size();
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : ckpt.tensors)
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a checkpoint: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&version), sizeof version) || !is.read(reinterpret_cast<char*>(&len), sizeof len))
    throw IoError("truncated checkpoint " + path.string());
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::string h(len, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint " + path.string());
  const auto header = nlohmann::json::parse(h);
  Checkpoint c;
  c.meta = header.at("meta").get<std::map<std::string, std::string>>();
  std::uint64_t expected = 0;
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    if (e.at("offset").get<std::uint64_t>() != expected) throw IoError("corrupt offsets in " + path.string());
    std::vector<double> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double))))
      throw IoError("truncated tensor '" + name + "' in " + path.string());
    expected += data.size();
    c.tensors.emplace(name, Tensor::from(shape, std::move(data)));
  }
  return c;
}

Checkpoint snapshot(const nn::ParamStore& ps, std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const auto& [name, t] : ps.all()) c.tensors.emplace(name, t.clone());
  return c;
}

std::size_t load_parameters(nn::ParamStore& ps, const Checkpoint& ckpt, const std::vector<LoadRule>& rules) {
  std::vector<std::string> problems;
  std::vector<std::pair<Tensor, const Tensor*>> copies;
  for (const auto& rule : rules) {
    const auto targets = ps.names_with_prefix(rule.to);
    if (targets.empty()) problems.push_back("no parameters under '" + rule.to + "'");
    for (const auto& name : targets) {
      const auto src = rule.from + name.substr(rule.to.size());
      const auto it = ckpt.tensors.find(src);
      const Tensor dst = ps.get(name);
      if (it == ckpt.tensors.end()) {
        problems.push_back("missing '" + src + "' (for '" + name + "')");
      } else if (it->second.shape() != dst.shape()) {
        problems.push_back("shape mismatch for '" + src + "': checkpoint " + shape_str(it->second.shape()) +
                           " vs model " + shape_str(dst.shape()));
      } else {
        copies.emplace_back(dst, &it->second);
      }
    }
  }
  if (!problems.empty()) throw CheckpointError("cannot load checkpoint:", problems);
  for (auto& [dst, src] : copies) {
    auto d = dst.mutable_data();
    std::copy(src->data().begin(), src->data().end(), d.begin());
  }
  return copies.size();
}

}  // namespace glip
