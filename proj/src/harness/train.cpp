#include "glip/harness/train.hpp"

#include <cmath>
#include <numeric>

#include "glip/data/tensor_io.hpp"
#include "glip/harness/optim.hpp"
#include "json.hpp"

namespace glip {

namespace {

void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) throw IoError(std::string("missing ") + what + ": " + p.string());
}

struct Parts {
  Tensor loss;
  double a = 0.0, b = 0.0;
};

TrainResult run_loop(GlipModel& model, const std::vector<Example>& data, std::size_t steps, const RunConfig& cfg,
                     std::uint64_t stream, const std::function<Parts(const Tensor&, const Example&)>& clip_loss,
                     const StepCallback& on_step) {
  if (data.empty()) throw IoError("training split is empty");
  AdamW opt(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
  auto& ps = model.params();
  TrainResult r;
  const std::size_t B = std::min(cfg.batch_size, data.size());
  for (std::size_t step = 0; step < steps; ++step) {
    ps.zero_grad();
    StepRecord rec;
    rec.step = step;
    const auto batch = batch_indices(data.size(), B, step, mix_seed(cfg.seed, stream));
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto& ex = data[batch[k]];
      Tensor frames = ex.frames;
      if (cfg.augment) {
        Rng rng(mix_seed(cfg.seed, stream ^ 0xA06, step * 1000 + k));
        frames = augment(frames, AugmentParams::sample(frames.dim(0), rng));
      }
      auto parts = clip_loss(frames, ex);
      scale(parts.loss, 1.0 / static_cast<double>(batch.size())).backward();
      rec.loss += parts.loss.item() / static_cast<double>(batch.size());
      rec.part_a += parts.a / static_cast<double>(batch.size());
      rec.part_b += parts.b / static_cast<double>(batch.size());
    }
    rec.grad_norm = clip_grad_norm(ps, cfg.grad_clip);
    rec.lr = scheduled_lr(cfg.lr, step, steps, cfg.warmup_fraction);
    opt.step(ps, rec.lr);
    r.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  ps.zero_grad();
  return r;
}

std::map<std::string, std::string> run_meta(const RunConfig& cfg, const char* stage, std::size_t steps) {
  return {{"stage", stage},
          {"seed", std::to_string(cfg.seed)},
          {"steps", std::to_string(steps)},
          {"fusion", fusion_name(cfg.fusion)},
          {"init", init_name(cfg.init)},
          {"stage1_streams", streams_name(cfg.stage1_streams)}};
}

}  // namespace

std::vector<std::size_t> batch_indices(std::size_t dataset, std::size_t batch, std::size_t step, std::uint64_t seed) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  const std::size_t per_epoch = dataset / batch;  // drop the ragged tail of each epoch
  const std::size_t epoch = step / per_epoch, pos = (step % per_epoch) * batch;
  std::vector<std::size_t> perm(dataset);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, 0xE90C, epoch));
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  for (std::size_t i = 0; i < batch; ++i) out.push_back(perm[pos + i]);
  return out;
}

TrainResult train_stage1(const RunConfig& cfg, const StepCallback& on_step) {
  require_file(cfg.corpus_dir / "manifest.jsonl", "corpus manifest");
  require_file(cfg.units_dir / "units.jsonl", "unit cache");
  require_file(cfg.units_dir / "codebook.bin", "unit codebook");
  const auto cb = read_codebook(cfg.units_dir / "codebook.bin");
  if (cb.size() != cfg.codebook)
    throw ConfigError("codebook has " + std::to_string(cb.size()) + " units but the config asks for " +
                      std::to_string(cfg.codebook));
  const auto data = load_split(cfg.corpus_dir, cfg.units_dir, Split::Train);
  auto model = GlipModel::stage1(cfg);
  auto r = run_loop(model, data, cfg.stage1_steps, cfg, 0x5741, [&](const Tensor& frames, const Example& ex) {
    auto l = model.stage1_loss(frames, ex.units);
    return Parts{l.total, l.global_part.item(), l.local_part.item()};
  }, on_step);
  r.checkpoint = snapshot(model.params(), run_meta(cfg, "1", cfg.stage1_steps));
  return r;
}

void init_from_stage1(GlipModel& model, const Checkpoint& stage1) {
  std::vector<LoadRule> rules{{kFrontendPrefix, kFrontendPrefix}, {kDualPathPrefix, kDualPathPrefix}};
  if (model.config().seed_encoder)
    rules.push_back({kAlignPrefix + "encoder.", kRecognizerPrefix + "encoder."});
  load_parameters(model.params(), stage1, rules);
}

TrainResult train_stage2(const RunConfig& cfg, const StepCallback& on_step) {
  require_file(cfg.corpus_dir / "manifest.jsonl", "corpus manifest");
  auto model = GlipModel::stage2(cfg);
  if (cfg.init == Init::Stage1) {
    require_file(cfg.stage1_checkpoint, "stage-1 checkpoint");
    init_from_stage1(model, load_checkpoint(cfg.stage1_checkpoint));
  }
  const auto data = load_split(cfg.corpus_dir, "", Split::Train);
  auto r = run_loop(model, data, cfg.stage2_steps, cfg, 0x5742, [&](const Tensor& frames, const Example& ex) {
    auto l = model.stage2_loss(frames, ex.transcript);
    return Parts{l.total, l.ctc_finite ? l.ctc.item() : std::nan(""), l.ce.item()};
  }, on_step);
  r.checkpoint = snapshot(model.params(), run_meta(cfg, "2", cfg.stage2_steps));
  return r;
}

void write_train_log(const std::filesystem::path& path, const std::vector<StepRecord>& log) {
  std::string text;
  for (const auto& s : log) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["loss"] = s.loss;
    j["part_a"] = s.part_a;
    j["part_b"] = s.part_b;
    j["lr"] = s.lr;
    j["grad_norm"] = s.grad_norm;
    text += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  write_text_file(path, text);
}

}  // namespace glip
