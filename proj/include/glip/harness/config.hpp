#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "glip/data/corpus.hpp"
#include "glip/model/dual_path.hpp"
#include "glip/model/frontend.hpp"
#include "glip/model/recognizer.hpp"

namespace glip {

/// Flat `key = value` settings. Lines starting with '#' are comments; a '#'
/// after a value also starts a comment. Later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long> get_int_list(const std::string& key, const std::vector<long>& fallback) const;

  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

enum class Fusion { Cem, Avg, GlobalOnly, LocalOnly };
enum class Init { Scratch, Stage1 };
enum class Stage1Streams { Global, GlobalLocal };

std::string fusion_name(Fusion f);
Fusion parse_fusion(const std::string& s);
std::string init_name(Init i);
Init parse_init(const std::string& s);
std::string streams_name(Stage1Streams s);
Stage1Streams parse_streams(const std::string& s);

/// Every setting a run needs. Defaults are the desk-scale configuration.
struct RunConfig {
  // paths
  std::filesystem::path corpus_dir = "work/corpus";
  std::filesystem::path units_dir = "work/units";
  std::filesystem::path run_dir = "work/run";
  std::filesystem::path stage1_checkpoint = "work/run/stage1.ckpt";
  std::filesystem::path stage2_checkpoint = "work/run/stage2.ckpt";

  // corpus / units
  CorpusConfig corpus;
  std::size_t codebook = 64;
  std::size_t kmeans_iterations = 25;

  // model
  FrontendConfig frontend;
  std::size_t dim = 32;
  std::size_t regions = 5;
  std::size_t heads = 4;
  std::size_t ff_hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t conv_kernel = 7;
  std::size_t decoder_layers = 2;
  std::size_t cem_layers = 1;
  MapAxis map_axis = MapAxis::Regions;

  // optimisation
  std::uint64_t seed = 1;
  std::vector<long> seeds{1, 2, 3, 4};
  std::size_t stage1_steps = 250;
  std::size_t stage2_steps = 600;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  double beta1 = 0.9, beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  double grad_clip = 5.0;
  bool augment = true;
  std::size_t log_every = 25;

  // stage-specific switches
  double ctc_weight = 0.1;  // lambda
  Fusion fusion = Fusion::Cem;
  Init init = Init::Stage1;
  Stage1Streams stage1_streams = Stage1Streams::GlobalLocal;
  bool share_encoder = true;  // stage-1 streams share one alignment encoder
  bool seed_encoder = false;

  // evaluation
  DecodeMode decode = DecodeMode::Greedy;
  std::size_t beam_width = 4;
  std::string eval_split = "test";
  std::size_t heatmap_clips = 4;

  void validate() const;
  static RunConfig from(const KeyValueConfig& kv);
  KeyValueConfig to_key_values() const;
};

}  // namespace glip
