#include "glip/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "glip/data/tensor_io.hpp"

namespace glip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': expected " + what + ", got '" + value + "'");
}

std::string join(const std::vector<long>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value', got '" + line + "'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_text_file(path), path.string());
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad_value(key, s, "an integer");
  return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) bad_value(key, it->second, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, it->second, "a number");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, s, "a boolean");
}

std::vector<long> KeyValueConfig::get_int_list(const std::string& key, const std::vector<long>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<long> out;
  std::istringstream is(it->second);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    KeyValueConfig one;
    one.set(key, item);
    out.push_back(one.get_int(key, 0));
  }
  if (out.empty()) bad_value(key, it->second, "a comma-separated integer list");
  return out;
}

std::string KeyValueConfig::dump() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::Cem: return "cem";
    case Fusion::Avg: return "avg";
    case Fusion::GlobalOnly: return "global_only";
    case Fusion::LocalOnly: return "local_only";
  }
  return "cem";
}

Fusion parse_fusion(const std::string& s) {
  if (s == "cem") return Fusion::Cem;
  if (s == "avg") return Fusion::Avg;
  if (s == "global_only") return Fusion::GlobalOnly;
  if (s == "local_only") return Fusion::LocalOnly;
  throw ConfigError("fusion must be cem|avg|global_only|local_only, got '" + s + "'");
}

std::string init_name(Init i) { return i == Init::Scratch ? "scratch" : "stage1"; }

Init parse_init(const std::string& s) {
  if (s == "scratch") return Init::Scratch;
  if (s == "stage1") return Init::Stage1;
  throw ConfigError("init must be scratch|stage1, got '" + s + "'");
}

std::string streams_name(Stage1Streams s) { return s == Stage1Streams::Global ? "global" : "global_local"; }

Stage1Streams parse_streams(const std::string& s) {
  if (s == "global") return Stage1Streams::Global;
  if (s == "global_local") return Stage1Streams::GlobalLocal;
  throw ConfigError("stage1_streams must be global|global_local, got '" + s + "'");
}

void RunConfig::validate() const {
  frontend.validate();
  if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("ctc_weight must lie in [0,1]");
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (regions == 0) throw ConfigError("regions must be positive");
  if (cem_layers == 0) throw ConfigError("cem_layers must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (codebook < 2) throw ConfigError("codebook must have at least 2 units");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0,1)");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ConfigError("warmup_fraction must lie in [0,1]");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (decode == DecodeMode::Beam && beam_width == 0) throw ConfigError("beam_width must be positive");
  if (eval_split != "test" && eval_split != "val" && eval_split != "train")
    throw ConfigError("eval_split must be train|val|test");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
}

RunConfig RunConfig::from(const KeyValueConfig& kv) {
  static const std::set<std::string> known = {
      "corpus_dir", "units_dir", "run_dir", "stage1_checkpoint", "stage2_checkpoint", "corpus_seed", "clips",
      "test_clips", "val_clips", "clean_fraction", "codebook", "kmeans_iterations", "stem_stride", "stage_channels",
      "blocks_per_stage", "stage_stride", "dim", "regions", "heads", "ff_hidden", "encoder_layers", "conv_kernel",
      "decoder_layers", "cem_layers", "map_axis", "seed", "seeds", "stage1_steps", "stage2_steps", "batch_size", "lr",
      "beta1", "beta2", "eps", "weight_decay", "warmup_fraction", "grad_clip", "augment", "log_every", "ctc_weight",
      "fusion", "init", "stage1_streams", "share_encoder", "seed_encoder", "decode", "beam_width", "eval_split", "heatmap_clips"};
  for (const auto& [k, v] : kv.values())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

  auto size = [&](const std::string& key, std::size_t fallback) {
    const long v = kv.get_int(key, static_cast<long>(fallback));
    if (v < 0) bad_value(key, kv.get_string(key, ""), "a non-negative integer");
    return static_cast<std::size_t>(v);
  };
  RunConfig c;
  c.corpus_dir = kv.get_string("corpus_dir", c.corpus_dir.string());
  c.units_dir = kv.get_string("units_dir", c.units_dir.string());
  c.run_dir = kv.get_string("run_dir", c.run_dir.string());
  c.stage1_checkpoint = kv.get_string("stage1_checkpoint", (c.run_dir / "stage1.ckpt").string());
  c.stage2_checkpoint = kv.get_string("stage2_checkpoint", (c.run_dir / "stage2.ckpt").string());

  c.corpus.seed = static_cast<std::uint64_t>(kv.get_int("corpus_seed", static_cast<long>(c.corpus.seed)));
  c.corpus.clips = size("clips", c.corpus.clips);
  c.corpus.test_clips = size("test_clips", c.corpus.test_clips);
  c.corpus.val_clips = size("val_clips", c.corpus.val_clips);
  c.corpus.clean_fraction = kv.get_double("clean_fraction", c.corpus.clean_fraction);
  c.codebook = size("codebook", c.codebook);
  c.kmeans_iterations = size("kmeans_iterations", c.kmeans_iterations);

  c.frontend.stem_stride = size("stem_stride", c.frontend.stem_stride);
  std::vector<long> ch(c.frontend.stage_channels.begin(), c.frontend.stage_channels.end());
  ch = kv.get_int_list("stage_channels", ch);
  c.frontend.stage_channels.clear();
  for (long v : ch) {
    if (v <= 0) throw ConfigError("stage_channels entries must be positive");
    c.frontend.stage_channels.push_back(static_cast<std::size_t>(v));
  }
  c.frontend.blocks_per_stage = size("blocks_per_stage", c.frontend.blocks_per_stage);
  c.frontend.stage_stride = size("stage_stride", c.frontend.stage_stride);
  c.dim = size("dim", c.dim);
  c.regions = size("regions", c.regions);
  c.heads = size("heads", c.heads);
  c.ff_hidden = size("ff_hidden", c.ff_hidden);
  c.encoder_layers = size("encoder_layers", c.encoder_layers);
  c.conv_kernel = size("conv_kernel", c.conv_kernel);
  c.decoder_layers = size("decoder_layers", c.decoder_layers);
  c.cem_layers = size("cem_layers", c.cem_layers);
  const auto axis = kv.get_string("map_axis", "regions");
  if (axis == "regions") c.map_axis = MapAxis::Regions;
  else if (axis == "spatial") c.map_axis = MapAxis::Spatial;
  else throw ConfigError("map_axis must be regions|spatial, got '" + axis + "'");

  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
  c.seeds = kv.get_int_list("seeds", c.seeds);
  c.stage1_steps = size("stage1_steps", c.stage1_steps);
  c.stage2_steps = size("stage2_steps", c.stage2_steps);
  c.batch_size = size("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.eps = kv.get_double("eps", c.eps);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.warmup_fraction = kv.get_double("warmup_fraction", c.warmup_fraction);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.augment = kv.get_bool("augment", c.augment);
  c.log_every = size("log_every", c.log_every);

  c.ctc_weight = kv.get_double("ctc_weight", c.ctc_weight);
  c.fusion = parse_fusion(kv.get_string("fusion", fusion_name(c.fusion)));
  c.init = parse_init(kv.get_string("init", init_name(c.init)));
  c.stage1_streams = parse_streams(kv.get_string("stage1_streams", streams_name(c.stage1_streams)));
  c.share_encoder = kv.get_bool("share_encoder", c.share_encoder);
  c.seed_encoder = kv.get_bool("seed_encoder", c.seed_encoder);

  const auto mode = kv.get_string("decode", "greedy");
  if (mode == "greedy") c.decode = DecodeMode::Greedy;
  else if (mode == "beam") c.decode = DecodeMode::Beam;
  else throw ConfigError("decode must be greedy|beam, got '" + mode + "'");
  c.beam_width = size("beam_width", c.beam_width);
  c.eval_split = kv.get_string("eval_split", c.eval_split);
  c.heatmap_clips = size("heatmap_clips", c.heatmap_clips);
  c.validate();
  return c;
}

KeyValueConfig RunConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("corpus_dir", corpus_dir.string());
  kv.set("units_dir", units_dir.string());
  kv.set("run_dir", run_dir.string());
  kv.set("stage1_checkpoint", stage1_checkpoint.string());
  kv.set("stage2_checkpoint", stage2_checkpoint.string());
  kv.set("corpus_seed", std::to_string(corpus.seed));
  kv.set("clips", std::to_string(corpus.clips));
  kv.set("test_clips", std::to_string(corpus.test_clips));
  kv.set("val_clips", std::to_string(corpus.val_clips));
  kv.set("clean_fraction", num(corpus.clean_fraction));
  kv.set("codebook", std::to_string(codebook));
  kv.set("kmeans_iterations", std::to_string(kmeans_iterations));
  kv.set("stem_stride", std::to_string(frontend.stem_stride));
  kv.set("stage_channels", join(std::vector<long>(frontend.stage_channels.begin(), frontend.stage_channels.end())));
  kv.set("blocks_per_stage", std::to_string(frontend.blocks_per_stage));
  kv.set("stage_stride", std::to_string(frontend.stage_stride));
  kv.set("dim", std::to_string(dim));
  kv.set("regions", std::to_string(regions));
  kv.set("heads", std::to_string(heads));
  kv.set("ff_hidden", std::to_string(ff_hidden));
  kv.set("encoder_layers", std::to_string(encoder_layers));
  kv.set("conv_kernel", std::to_string(conv_kernel));
  kv.set("decoder_layers", std::to_string(decoder_layers));
  kv.set("cem_layers", std::to_string(cem_layers));
  kv.set("map_axis", map_axis == MapAxis::Regions ? "regions" : "spatial");
  kv.set("seed", std::to_string(seed));
  kv.set("seeds", join(seeds));
  kv.set("stage1_steps", std::to_string(stage1_steps));
  kv.set("stage2_steps", std::to_string(stage2_steps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("lr", num(lr));
  kv.set("beta1", num(beta1));
  kv.set("beta2", num(beta2));
  kv.set("eps", num(eps));
  kv.set("weight_decay", num(weight_decay));
  kv.set("warmup_fraction", num(warmup_fraction));
  kv.set("grad_clip", num(grad_clip));
  kv.set("augment", augment ? "true" : "false");
  kv.set("log_every", std::to_string(log_every));
  kv.set("ctc_weight", num(ctc_weight));
  kv.set("fusion", fusion_name(fusion));
  kv.set("init", init_name(init));
  kv.set("stage1_streams", streams_name(stage1_streams));
  kv.set("share_encoder", share_encoder ? "true" : "false");
  kv.set("seed_encoder", seed_encoder ? "true" : "false");
  kv.set("decode", decode == DecodeMode::Greedy ? "greedy" : "beam");
  kv.set("beam_width", std::to_string(beam_width));
  kv.set("eval_split", eval_split);
  kv.set("heatmap_clips", std::to_string(heatmap_clips));
  return kv;
}

}  // namespace glip
