#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "glip/data/tensor_io.hpp"
#include "glip/harness/ablation.hpp"
#include "glip/harness/optim.hpp"

using namespace glip;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("glip_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Small enough that a few training steps take well under a second.
RunConfig tiny(const std::filesystem::path& root) {
  RunConfig c;
  c.corpus_dir = root / "corpus";
  c.units_dir = root / "units";
  c.run_dir = root / "run";
  c.stage1_checkpoint = root / "run" / "stage1.ckpt";
  c.stage2_checkpoint = root / "run" / "stage2.ckpt";
  c.corpus.clips = 30;
  c.corpus.test_clips = 11;
  c.corpus.val_clips = 3;
  c.corpus.seed = 5;
  c.codebook = 4;
  c.kmeans_iterations = 5;
  c.frontend.stage_channels = {4, 8};
  c.dim = 8;
  c.heads = 2;
  c.ff_hidden = 16;
  c.regions = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.stage1_steps = 2;
  c.stage2_steps = 2;
  c.batch_size = 2;
  c.lr = 1e-3;
  return c;
}

ClipResult result(const std::string& id, const std::string& cond, const std::string& ref, const std::string& hyp) {
  return {id, ConditionLabel::parse(cond), ref, hyp, wer(ref, hyp)};
}

}  // namespace

TEST_CASE("key-value parsing") {
  auto kv = KeyValueConfig::parse("# header\nlr = 0.5\nseeds = 1, 2,3  # trailing\n\nfusion=avg\nlr=0.25\n");
  CHECK(kv.get_double("lr", 0) == 0.25);
  CHECK(kv.get_int_list("seeds", {}) == std::vector<long>{1, 2, 3});
  CHECK(kv.get_string("fusion", "") == "avg");
  CHECK(kv.get_string("missing", "x") == "x");
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign"), ConfigError);
  CHECK_THROWS_AS(kv.get_int("fusion", 0), ConfigError);
  CHECK(KeyValueConfig::parse(kv.dump()).values() == kv.values());
}

TEST_CASE("run config defaults, overrides and validation") {
  const RunConfig d = RunConfig::from(KeyValueConfig{});
  CHECK(d.ctc_weight == 0.1);
  CHECK(d.regions == 5);
  CHECK(d.cem_layers == 1);
  CHECK(d.beta1 == 0.9);
  CHECK(d.beta2 == 0.98);
  CHECK(d.fusion == Fusion::Cem);
  CHECK(d.init == Init::Stage1);
  CHECK(d.seed_encoder == false);

  auto kv = KeyValueConfig::parse("ctc_weight = 0.3\nfusion = avg\ninit = scratch\nrun_dir = /x\n");
  const auto c = RunConfig::from(kv);
  CHECK(c.ctc_weight == 0.3);
  CHECK(c.fusion == Fusion::Avg);
  CHECK(c.init == Init::Scratch);
  CHECK(c.stage1_checkpoint == std::filesystem::path("/x/stage1.ckpt"));

  CHECK(RunConfig::from(c.to_key_values()).to_key_values().dump() == c.to_key_values().dump());
  CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("lamda = 0.1")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("fusion = max")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("ctc_weight = 1.5")).validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("dim = 30\nheads = 4")).validate(), ConfigError);
}

TEST_CASE("shipped default config matches the built-in defaults") {
  const auto kv = KeyValueConfig::load(std::filesystem::path(GLIP_SOURCE_DIR) / "configs" / "default.conf");
  CHECK(RunConfig::from(kv).to_key_values().values() == RunConfig{}.to_key_values().values());
}

TEST_CASE("stage-1 streams share the alignment encoder unless told otherwise") {
  auto count_local = [](const RunConfig& c) {
    const auto m = GlipModel::stage1(c);
    std::size_t n = 0;
    for (const auto& [name, t] : m.params().all()) n += name.rfind("align.local_encoder.", 0) == 0;
    return n;
  };
  auto c = tiny(std::filesystem::temp_directory_path());
  CHECK(count_local(c) == 0);
  c.share_encoder = false;
  CHECK(count_local(c) > 0);
  KeyValueConfig kv;
  kv.set("share_encoder", "false");
  CHECK_FALSE(RunConfig::from(kv).share_encoder);
}

TEST_CASE("learning-rate schedule") {
  CHECK(scheduled_lr(1.0, 0, 100, 0.1) == doctest::Approx(0.1));
  CHECK(scheduled_lr(1.0, 9, 100, 0.1) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0, 10, 100, 0.1) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0, 55, 100, 0.1) == doctest::Approx(0.5));
  CHECK(scheduled_lr(1.0, 99, 100, 0.1) < 1e-3);
  double prev = 2.0;
  for (std::size_t s = 10; s < 100; ++s) {
    CHECK(scheduled_lr(1.0, s, 100, 0.1) <= prev);
    prev = scheduled_lr(1.0, s, 100, 0.1);
  }
}

TEST_CASE("gradient clipping and the AdamW update") {
  nn::ParamStore ps;
  Tensor w = ps.constant("w", {2, 2}, 1.0);
  Tensor b = ps.constant("b", {2}, 1.0);
  sum(add(mul(w, Tensor::from({2, 2}, {3, 0, 0, 0})), Tensor::zeros({2, 2}))).backward();
  sum(mul(b, Tensor::from({2}, {0, 4}))).backward();
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(w.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, 0.0) == doctest::Approx(1.0));

  // First step: bias-corrected moments reduce to g and g^2.
  AdamW opt(0.9, 0.98, 1e-8, 0.1);
  opt.step(ps, 0.01);
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.01 * (0.1 * 1.0 + 0.6 / (0.6 + 1e-8))).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(1.0 - 0.01 * 0.1).epsilon(1e-12));
  CHECK(b.data()[0] == 1.0);  // no decay on 1-D tensors, zero gradient
  CHECK(b.data()[1] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
}

TEST_CASE("batches visit every clip once per epoch") {
  std::set<std::size_t> seen;
  for (std::size_t step = 0; step < 5; ++step)
    for (auto i : batch_indices(11, 2, step, 3)) seen.insert(i);
  CHECK(seen.size() == 10);
  CHECK(batch_indices(11, 2, 1, 3) == batch_indices(11, 2, 1, 3));
  CHECK(batch_indices(11, 2, 0, 3) != batch_indices(11, 2, 5, 3));
}

TEST_CASE("checkpoint files round trip byte for byte") {
  auto dir = temp_dir("ckpt");
  nn::ParamStore ps;
  Rng rng(1);
  ps.normal("a.w", {3, 2}, 1.0, rng);
  ps.normal("b.bias", {4}, 1.0, rng);
  const auto ck = snapshot(ps, {{"stage", "1"}});
  save_checkpoint(dir / "one.ckpt", ck);
  const auto back = load_checkpoint(dir / "one.ckpt");
  save_checkpoint(dir / "two.ckpt", back);
  CHECK(bytes(dir / "one.ckpt") == bytes(dir / "two.ckpt"));
  CHECK(back.meta == ck.meta);
  CHECK(same(back.tensors.at("a.w"), ps.get("a.w")));

  nn::ParamStore other;
  other.zeros("a.w", {3, 2});
  CHECK(load_parameters(other, back, {{"", ""}}) == 1);
  CHECK(same(other.get("a.w"), ps.get("a.w")));

  nn::ParamStore wrong;
  wrong.zeros("a.w", {2, 3});
  wrong.zeros("a.extra", {1});
  try {
    load_parameters(wrong, back, {{"a.", "a."}});
    FAIL("expected a CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.problems().size() == 2);
  }
  std::ofstream(dir / "bad.ckpt") << "GLCKjunk";
  CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("word error rate") {
  CHECK(wer("the cat sat", "the mat") == doctest::Approx(2.0 / 3.0));
  CHECK(wer("a b", "a b") == 0.0);
  CHECK(wer("a b", "") == 1.0);
  CHECK(wer("a", "b c d") == 3.0);
  CHECK(edit_distance(split_words(" x  y "), split_words("x y")) == 0);
  CHECK_THROWS_AS(wer("", "a"), std::invalid_argument);
}

TEST_CASE("condition table: columns, absent bins and partition consistency") {
  std::vector<ClipResult> rs{result("c1", "BNCS", "ab ba", "ab"), result("c2", "MYMM", "mo", "mo"),
                             result("c3", "DNBL", "kom di ub", "kom di"), result("c4", "MNCS", "ifka", "sim")};
  auto r = make_report(rs);
  CHECK(r.clips == 4);
  CHECK(r.overall_wer == doctest::Approx((0.5 + 0 + 1.0 / 3 + 1) / 4));
  const char* levels = "BMDNYCMBSML";
  for (std::size_t i = 0; i < 11; ++i) CHECK(r.cells[i].level == levels[i]);
  CHECK(r.cells[9].wer.has_value());
  CHECK(r.cells[10].clips == 1);
  CHECK(partition_gap(r) < 1e-12);

  auto only = make_report({result("c9", "MNCS", "mo", "mo")});
  CHECK_FALSE(only.cells[0].wer.has_value());
  CHECK(only.cells[1].wer == 0.0);
  CHECK(report_table(only).find('-') != std::string::npos);

  auto back = parse_report_json(report_json(r));
  CHECK(back.overall_wer == r.overall_wer);
  CHECK(back.results.size() == 4);
  CHECK(report_json(back) == report_json(r));
  CHECK(parse_report_json(report_json(only)).cells[0].wer == std::nullopt);

  std::vector<ClipResult> perfect;
  for (const auto& x : rs) perfect.push_back(result(x.clip_id, x.condition.code(), x.reference, x.reference));
  auto p = make_report(perfect);
  CHECK(p.overall_wer == 0.0);
  for (const auto& c : p.cells)
    if (c.wer) CHECK(*c.wer == 0.0);
}

TEST_CASE("partition consistency on random tables") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<ClipResult> rs;
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
    for (std::size_t i = 0; i < n; ++i) {
      std::string code = {"BMD"[rng.uniform_int(0, 2)], "NY"[rng.uniform_int(0, 1)], "CMB"[rng.uniform_int(0, 2)],
                          "SML"[rng.uniform_int(0, 2)]};
      rs.push_back({"c" + std::to_string(i), ConditionLabel::parse(code), "x", "", rng.uniform(0.0, 2.0)});
    }
    CHECK(partition_gap(make_report(rs)) < 1e-9);
  }
}

TEST_CASE("heatmap image layout") {
  auto M = Tensor::full({2, 3, 2, 2}, 0.25);
  const auto pgm = heatmap_pgm(M, 2);
  CHECK(pgm.rfind("P5\n", 0) == 0);
  CHECK(pgm.find("15 10\n255\n") != std::string::npos);
}

TEST_CASE("pipeline on a tiny corpus") {
  auto root = temp_dir("pipeline");
  auto cfg = tiny(root);
  write_corpus(cfg.corpus, cfg.corpus_dir);
  build_units(cfg.corpus_dir, cfg.units_dir, cfg.codebook, cfg.seed, cfg.kmeans_iterations);

  SUBCASE("stage 1 requires its inputs") {
    auto bad = cfg;
    bad.units_dir = root / "nowhere";
    CHECK_THROWS_AS(train_stage1(bad), IoError);
    bad = cfg;
    bad.codebook = 8;
    CHECK_THROWS_AS(train_stage1(bad), ConfigError);
  }

  SUBCASE("training is deterministic and checkpoints are reproducible") {
    auto a = train_stage1(cfg), b = train_stage1(cfg);
    REQUIRE(a.log.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(a.log[i].loss == b.log[i].loss);
      CHECK(a.log[i].grad_norm == b.log[i].grad_norm);
    }
    save_checkpoint(root / "a.ckpt", a.checkpoint);
    save_checkpoint(root / "b.ckpt", b.checkpoint);
    CHECK(bytes(root / "a.ckpt") == bytes(root / "b.ckpt"));
    CHECK(std::abs(a.log[0].loss - (a.log[0].part_a + a.log[0].part_b)) < 1e-12);
  }

  SUBCASE("stage-1 initialisation loads the front-end and drops the head") {
    save_checkpoint(cfg.stage1_checkpoint, train_stage1(cfg).checkpoint);
    auto c0 = cfg;
    c0.stage2_steps = 0;
    const auto s1 = load_checkpoint(cfg.stage1_checkpoint);
    const auto s2 = train_stage2(c0).checkpoint;
    std::size_t front = 0;
    for (const auto& [name, t] : s2.tensors) {
      if (name.rfind(kFrontendPrefix, 0) == 0 || name.rfind(kDualPathPrefix, 0) == 0) {
        CHECK(same(t, s1.tensors.at(name)));
        ++front;
      }
      CHECK(name.rfind(kAlignPrefix, 0) != 0);
    }
    CHECK(front > 0);
    auto scratch = c0;
    scratch.init = Init::Scratch;
    CHECK_FALSE(same(train_stage2(scratch).checkpoint.tensors.at("frontend.stem.w"), s1.tensors.at("frontend.stem.w")));

    auto missing = cfg;
    missing.stage1_checkpoint = root / "none.ckpt";
    CHECK_THROWS_AS(train_stage2(missing), IoError);
    auto shape = cfg;
    shape.dim = 12;
    shape.heads = 2;
    CHECK_THROWS_AS(train_stage2(shape), CheckpointError);
  }

  SUBCASE("fusion choice changes the objective") {
    auto c = cfg;
    c.init = Init::Scratch;
    c.stage2_steps = 1;
    auto cem = train_stage2(c);
    c.fusion = Fusion::Avg;
    auto avg = train_stage2(c);
    CHECK(cem.log[0].loss != avg.log[0].loss);
    auto has_cem = [](const Checkpoint& ck) {
      return std::any_of(ck.tensors.begin(), ck.tensors.end(),
                         [](const auto& kv) { return kv.first.rfind(kCemPrefix, 0) == 0; });
    };
    CHECK(has_cem(cem.checkpoint));
    CHECK_FALSE(has_cem(avg.checkpoint));
  }

  SUBCASE("evaluation writes the full table and heatmaps") {
    auto c = cfg;
    c.init = Init::Scratch;
    auto model = GlipModel::stage2(c);
    const auto data = load_split(c.corpus_dir, "", Split::Test);
    REQUIRE(data.size() == 11);
    const auto r = evaluate(model, data);
    CHECK(r.clips == 11);
    for (const auto& cell : r.cells) CHECK(cell.clips > 0);
    CHECK(partition_gap(r) < 1e-9);
    CHECK(report_json(evaluate(model, data)) == report_json(r));
    write_report(c.run_dir / "eval", r);
    CHECK(std::filesystem::exists(c.run_dir / "eval" / "report.txt"));
    CHECK(parse_report_json(read_text_file(c.run_dir / "eval" / "report.json")).clips == 11);

    const auto files = export_heatmaps(model, data, 2, c.run_dir / "maps");
    CHECK(files.size() == 2);
    for (const char* ext : {".bin", ".txt", ".pgm"})
      CHECK(std::filesystem::exists(c.run_dir / "maps" / (data[1].clip_id + ext)));
    const auto M = read_tensor_file(c.run_dir / "maps" / (data[0].clip_id + ".bin"));
    CHECK(M.dim(0) == c.regions);
    CHECK(M.dim(1) == data[0].frames.dim(0));
  }

  SUBCASE("ablation rows map onto run settings") {
    const auto& rows = ablation_rows();
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].apply(cfg).init == Init::Scratch);
    CHECK(rows[1].apply(cfg).stage1_streams == Stage1Streams::Global);
    CHECK(rows[3].apply(cfg).fusion == Fusion::LocalOnly);
    CHECK(rows[4].apply(cfg).fusion == Fusion::Avg);
    CHECK(rows[5].apply(cfg).fusion == Fusion::Cem);
    CHECK(rows[5].apply(cfg).stage1_streams == Stage1Streams::GlobalLocal);
  }
  std::filesystem::remove_all(root);
}
