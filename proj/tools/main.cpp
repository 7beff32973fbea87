// glip: command-line driver for corpus generation, training and evaluation.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "glip/data/tensor_io.hpp"
#include "glip/data/units.hpp"
#include "glip/harness/ablation.hpp"

using namespace glip;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string corpus_dir, units_dir, run_dir;
  long seed = -1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "key = value settings file")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.sets, "override one setting (key=value), repeatable");
  app->add_option("--corpus-dir", c.corpus_dir, "same as --set corpus_dir=...");
  app->add_option("--units-dir", c.units_dir, "same as --set units_dir=...");
  app->add_option("--run-dir", c.run_dir, "same as --set run_dir=...");
  app->add_option("--seed", c.seed, "same as --set seed=...");
}

RunConfig resolve(const Common& c) {
  auto kv = c.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(c.config);
  if (!c.corpus_dir.empty()) kv.set("corpus_dir", c.corpus_dir);
  if (!c.units_dir.empty()) kv.set("units_dir", c.units_dir);
  if (!c.run_dir.empty()) kv.set("run_dir", c.run_dir);
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      const auto a = v.find_first_not_of(" \t"), b = v.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : v.substr(a, b - a + 1);
    };
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  auto cfg = RunConfig::from(kv);
  cfg.validate();
  return cfg;
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

StepCallback progress(const RunConfig& cfg, const char* tag, std::size_t total) {
  auto clock = std::make_shared<Clock>();
  return [&cfg, tag, total, clock](const StepRecord& r) {
    if (cfg.log_every == 0) return;
    if (r.step % cfg.log_every != 0 && r.step != total) return;
    std::fprintf(stderr, "[%s] step %zu/%zu loss %.4f (%.4f, %.4f) lr %.2e |g| %.3f  %.0fs\n", tag, r.step, total,
                 r.loss, r.part_a, r.part_b, r.lr, r.grad_norm, clock->seconds());
  };
}

GlipModel load_stage2(const RunConfig& cfg) {
  auto model = GlipModel::stage2(cfg);
  load_parameters(model.params(), load_checkpoint(cfg.stage2_checkpoint), {{"", ""}});
  return model;
}

int cmd_corpus(const RunConfig& cfg) {
  const auto rows = write_corpus(cfg.corpus, cfg.corpus_dir);
  std::size_t n[3] = {0, 0, 0};
  for (const auto& r : rows) ++n[static_cast<int>(r.split)];
  write_text_file(cfg.corpus_dir / "corpus.conf", cfg.to_key_values().dump());
  std::cout << "wrote " << rows.size() << " clips to " << cfg.corpus_dir.string() << " (train " << n[0] << ", val "
            << n[1] << ", test " << n[2] << ")\n";
  return kOk;
}

int cmd_units(const RunConfig& cfg) {
  const auto r = build_units(cfg.corpus_dir, cfg.units_dir, cfg.codebook, cfg.seed, cfg.kmeans_iterations);
  std::cout << "codebook of " << cfg.codebook << " units, " << r.units.size() << " clips quantized into "
            << cfg.units_dir.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, int stage) {
  const std::string tag = stage == 1 ? "stage1" : "stage2";
  const auto steps = stage == 1 ? cfg.stage1_steps : cfg.stage2_steps;
  write_text_file(cfg.run_dir / (tag + ".conf"), cfg.to_key_values().dump());
  auto r = stage == 1 ? train_stage1(cfg, progress(cfg, tag.c_str(), steps))
                      : train_stage2(cfg, progress(cfg, tag.c_str(), steps));
  const auto& ckpt = stage == 1 ? cfg.stage1_checkpoint : cfg.stage2_checkpoint;
  save_checkpoint(ckpt, r.checkpoint);
  write_train_log(cfg.run_dir / (tag + "_log.jsonl"), r.log);
  std::cout << tag << ": " << steps << " steps";
  if (!r.log.empty()) std::cout << ", final loss " << r.log.back().loss;
  std::cout << ", checkpoint " << ckpt.string() << "\n";
  for (const auto& s : r.log)
    if (!std::isfinite(s.loss)) {
      std::cerr << "non-finite loss at step " << s.step << "\n";
      return kFailure;
    }
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& out) {
  const auto model = load_stage2(cfg);
  const auto data = load_split(cfg.corpus_dir, "", parse_split(cfg.eval_split));
  const auto report = evaluate(model, data);
  const auto dir = out.empty() ? cfg.run_dir / "eval" : std::filesystem::path(out);
  write_report(dir, report,
               {{"checkpoint", cfg.stage2_checkpoint.string()},
                {"split", cfg.eval_split},
                {"fusion", fusion_name(cfg.fusion)},
                {"decode", cfg.decode == DecodeMode::Beam ? "beam" : "greedy"}});
  std::cout << report_table(report, "WER (%) on " + cfg.eval_split + ", " + std::to_string(report.clips) + " clips");
  std::cout << "report written to " << dir.string() << "\n";
  return kOk;
}

int cmd_report(const RunConfig& cfg, std::vector<std::string> inputs, bool as_json) {
  if (inputs.empty()) inputs.push_back((cfg.run_dir / "eval" / "report.json").string());
  int status = kOk;
  for (const auto& in : inputs) {
    std::filesystem::path p = in;
    if (std::filesystem::is_directory(p)) p /= "report.json";
    const auto r = parse_report_json(read_text_file(p));
    if (as_json) {
      std::cout << report_json(r);
    } else {
      std::cout << report_table(r, p.string());
    }
    const double gap = partition_gap(r);
    if (gap > 1e-9) {
      std::cerr << p.string() << ": factor bins disagree with the overall WER by " << gap << "\n";
      status = kFailure;
    }
  }
  return status;
}

int cmd_heatmaps(const RunConfig& cfg, const std::string& out) {
  if (cfg.fusion != Fusion::Cem) throw ConfigError("heatmaps need fusion = cem");
  const auto model = load_stage2(cfg);
  const auto data = load_split(cfg.corpus_dir, "", parse_split(cfg.eval_split));
  const auto dir = out.empty() ? cfg.run_dir / "heatmaps" : std::filesystem::path(out);
  const auto files = export_heatmaps(model, data, cfg.heatmap_clips, dir);
  std::cout << "wrote " << files.size() << " files to " << dir.string() << "\n";
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, const std::vector<long>& seeds_flag) {
  const auto& src = seeds_flag.empty() ? cfg.seeds : seeds_flag;
  std::vector<std::uint64_t> seeds(src.begin(), src.end());
  Clock clock;
  auto result = run_ablation(cfg, seeds, [&](const std::string& msg) {
    std::fprintf(stderr, "[ablate] %s  %.0fs\n", msg.c_str(), clock.seconds());
  });
  const auto dir = cfg.run_dir / "ablation";
  write_text_file(dir / "ablation.txt", result.table());
  write_text_file(dir / "ablation.json", result.json());
  std::cout << "WER (%) per configuration\n" << result.table();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glip: synthetic lip-reading pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "glip 1.0");

  Common common;
  std::string out_dir;
  std::vector<std::string> inputs;
  std::vector<long> seeds;
  bool as_json = false;

  auto* corpus = app.add_subcommand("corpus", "generate the synthetic audio-visual corpus");
  auto* units = app.add_subcommand("units", "fit the audio codebook and quantize every clip");
  auto* s1 = app.add_subcommand("train-stage1", "audio-visual alignment pre-training");
  auto* s2 = app.add_subcommand("train-stage2", "recognizer training");
  auto* ev = app.add_subcommand("eval", "decode a split and write the WER report");
  auto* rep = app.add_subcommand("report", "print saved reports");
  auto* hm = app.add_subcommand("heatmaps", "export attention maps");
  auto* ab = app.add_subcommand("ablate", "stage-1 streams / stage-2 streams / fusion ablation");
  for (auto* sc : {corpus, units, s1, s2, ev, rep, hm, ab}) add_common(sc, common);
  for (auto* sc : {ev, hm}) sc->add_option("-o,--out", out_dir, "output directory");
  rep->add_option("inputs", inputs, "report.json files or directories");
  rep->add_flag("--json", as_json, "print JSON instead of a table");
  ab->add_option("--seeds", seeds, "seeds to run (default: the seeds setting)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kBadConfig;
  }

  try {
    const auto cfg = resolve(common);
    if (corpus->parsed()) return cmd_corpus(cfg);
    if (units->parsed()) return cmd_units(cfg);
    if (s1->parsed()) return cmd_train(cfg, 1);
    if (s2->parsed()) return cmd_train(cfg, 2);
    if (ev->parsed()) return cmd_eval(cfg, out_dir);
    if (rep->parsed()) return cmd_report(cfg, inputs, as_json);
    if (hm->parsed()) return cmd_heatmaps(cfg, out_dir);
    if (ab->parsed()) return cmd_ablate(cfg, seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
