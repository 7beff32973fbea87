#include "glip/harness/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "glip/data/tensor_io.hpp"
#include "json.hpp"

namespace glip {

RunConfig AblationRow::apply(const RunConfig& base) const {
  RunConfig c = base;
  if (stage1 == "none") {
    c.init = Init::Scratch;
  } else {
    c.init = Init::Stage1;
    c.stage1_streams = parse_streams(stage1);
  }
  if (stage2 == "global") c.fusion = Fusion::GlobalOnly;
  else if (stage2 == "local") c.fusion = Fusion::LocalOnly;
  else c.fusion = fusion == "avg" ? Fusion::Avg : Fusion::Cem;
  return c;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = {
      {"baseline", "none", "global", "none"},
      {"s1g-s2g", "global", "global", "none"},
      {"s1gl-s2g", "global_local", "global", "none"},
      {"s1gl-s2l", "global_local", "local", "none"},
      {"s1gl-s2gl-avg", "global_local", "global_local", "avg"},
      {"s1gl-s2gl-cem", "global_local", "global_local", "cem"},
  };
  return rows;
}

PipelineResult train_and_evaluate(const RunConfig& cfg, const std::vector<Example>& eval_data) {
  if (cfg.init == Init::Stage1 && !std::filesystem::exists(cfg.stage1_checkpoint))
    save_checkpoint(cfg.stage1_checkpoint, train_stage1(cfg).checkpoint);
  PipelineResult r;
  r.stage2 = train_stage2(cfg);
  auto model = GlipModel::stage2(cfg);
  load_parameters(model.params(), r.stage2.checkpoint, {{"", ""}});
  r.report = evaluate(model, eval_data);
  return r;
}

AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const std::string&)>& progress) {
  const auto eval_data = load_split(base.corpus_dir, "", parse_split(base.eval_split));
  AblationResult out;
  for (auto seed : seeds) {
    const auto dir = base.run_dir / "ablation" / ("seed" + std::to_string(seed));
    for (const auto& row : ablation_rows()) {
      RunConfig c = row.apply(base);
      c.seed = seed;
      c.run_dir = dir / row.name;
      c.stage1_checkpoint = dir / ("stage1_" + streams_name(c.stage1_streams) + ".ckpt");
      c.stage2_checkpoint = c.run_dir / "stage2.ckpt";
      write_text_file(dir / (row.name + ".conf"), c.to_key_values().dump());
      if (progress) progress("seed " + std::to_string(seed) + " row " + row.name);
      auto r = train_and_evaluate(c, eval_data);
      save_checkpoint(c.stage2_checkpoint, r.stage2.checkpoint);
      write_train_log(c.run_dir / "stage2_log.jsonl", r.stage2.log);
      write_report(c.run_dir, r.report, {{"row", row.name}, {"seed", std::to_string(seed)}});
      out.cells.push_back({row.name, seed, r.report.overall_wer, r.stage2.log.empty() ? 0.0 : r.stage2.log.back().loss});
    }
  }
  return out;
}

std::string AblationResult::table() const {
  std::vector<std::uint64_t> seeds;
  for (const auto& c : cells)
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
  std::ostringstream os;
  os << std::left << std::setw(14) << "stage1" << std::setw(14) << "stage2" << std::setw(8) << "fusion";
  for (auto s : seeds) os << std::right << std::setw(10) << ("seed " + std::to_string(s));
  os << std::setw(10) << "mean" << "\n";
  for (const auto& row : ablation_rows()) {
    os << std::left << std::setw(14) << row.stage1 << std::setw(14) << row.stage2 << std::setw(8) << row.fusion;
    double sum = 0.0;
    std::size_t n = 0;
    for (auto s : seeds)
      for (const auto& c : cells)
        if (c.row == row.name && c.seed == s) {
          os << std::right << std::setw(10) << std::fixed << std::setprecision(2) << 100.0 * c.wer;
          sum += c.wer;
          ++n;
        }
    if (n) os << std::setw(10) << std::fixed << std::setprecision(2) << 100.0 * sum / static_cast<double>(n);
    os << "\n";
  }
  return os.str();
}

std::string AblationResult::json() const {
  nlohmann::ordered_json j = nlohmann::json::array();
  for (const auto& c : cells)
    j.push_back({{"row", c.row}, {"seed", c.seed}, {"wer", c.wer}, {"final_loss", c.final_loss}});
  return j.dump(2) + "\n";
}

}  // namespace glip
