// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dualglance/harness.hpp"

using namespace dualglance;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

struct TempDataset {
  fs::path dir;
  RunConfig config;

  explicit TempDataset(const std::string& name, double ambiguous_fraction,
                       int num_images = 60) {
    dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    RelationshipTaxonomy taxonomy = RelationshipTaxonomy::default_taxonomy();
    SyntheticSpec spec;
    spec.num_images = num_images;
    spec.image_size = 32;
    spec.ambiguous_fraction = ambiguous_fraction;
    spec.context_informative_fraction = 0.4;
    spec.val_per_class = 1;
    spec.test_per_class = 2;
    spec.seed = 31;
    write_dataset(generate_synthetic(spec, taxonomy), dir.string(), taxonomy);

    config.taxonomy = taxonomy;
    config.annotations = (dir / "annotations.jsonl").string();
    config.manifest = (dir / "manifest.json").string();
    config.proposals = (dir / "proposals.jsonl").string();
    config.splits = (dir / "splits.json").string();
    config.backbone.patch_size = 8;
    config.backbone.output_channels = 4;
    config.feature_dim = 16;
    config.geo_hidden = 8;
    config.augment = false;
    config.optimizer.batch_size = 16;
    config.optimizer.learning_rate = 0.02;
    config.stage1.max_epochs = 3;
    config.stage2.max_epochs = 3;
    config.seed = 17;
    config.out_dir = (dir / "run").string();
    config.artifacts.overlay_limit = 4;
  }

  ~TempDataset() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("run config json round trip keeps defaults") {
  RunConfig config;
  CHECK(config.optimizer.learning_rate == 0.01);
  CHECK(config.optimizer.batch_size == 32);
  CHECK(config.optimizer.momentum == 0.9);
  CHECK(config.regions.tau_u == 0.7);
  CHECK(config.regions.max_regions == 30);
  CHECK(config.loss.kind == LossKind::adaptive_focal);
  CHECK(config.loss.gamma == 1.0);

  json j = config;
  RunConfig back = j.get<RunConfig>();
  CHECK(json(back) == j);

  // gamma defaults follow the loss kind.
  CHECK(LossConfig::make(LossKind::focal).gamma == 2.0);
  CHECK(LossConfig::make(LossKind::adaptive_focal).gamma == 1.0);
}

TEST_CASE("config hash ignores out_dir but tracks semantic fields") {
  RunConfig a;
  RunConfig b = a;
  b.out_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.regions.tau_u = 0.5;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("zero-epoch training returns the seeded initialization") {
  TempDataset data("dg_harness_zero_epoch", 0.0);
  RunConfig config = data.config;
  config.stage1.max_epochs = 0;
  RuntimeDataset ds = load_runtime_dataset(config);
  TrainResult result = train_stage1(config, ds);

  DualGlanceModel fresh(config.model_shape());
  Rng rng(config.seed);
  fresh.init(rng);
  CHECK(param_hash(result.model.params()) == param_hash(fresh.params()));
  CHECK(result.epoch_losses.empty());
}

TEST_CASE("stage-1 training runs and the loss stays finite") {
  TempDataset data("dg_harness_stage1", 0.0);
  RuntimeDataset ds = load_runtime_dataset(data.config);
  TrainResult result = train_stage1(data.config, ds);
  REQUIRE_FALSE(result.epoch_losses.empty());
  for (double loss : result.epoch_losses) CHECK(std::isfinite(loss));
  CHECK(result.meta.stage == "stage1");
  CHECK(result.meta.alpha.size() == 5);
}

TEST_CASE("stage-2 freezes the first glance and trains the rest") {
  TempDataset data("dg_harness_stage2", 0.0);
  RuntimeDataset ds = load_runtime_dataset(data.config);
  TrainResult s1 = train_stage1(data.config, ds);
  const fs::path ck1 = data.dir / "ck1.bin";
  save_checkpoint(ck1.string(), s1.model, s1.meta);
  const std::uint64_t fg_before = param_hash(s1.model.first_glance_params());
  const std::uint64_t sg_before = param_hash(s1.model.second_glance_params());

  TrainResult s2 = train_stage2(data.config, ds, load_checkpoint(ck1.string()));
  CHECK(param_hash(s2.model.first_glance_params()) == fg_before);
  CHECK(param_hash(s2.model.second_glance_params()) != sg_before);
  CHECK(s2.meta.stage == "stage2");
}

TEST_CASE("stage-2 checkpoints with incompatible taxonomy are rejected") {
  TempDataset data("dg_harness_incompat", 0.0);
  RuntimeDataset ds = load_runtime_dataset(data.config);
  RunConfig c1 = data.config;
  c1.stage1.max_epochs = 0;
  TrainResult s1 = train_stage1(c1, ds);
  const fs::path ck = data.dir / "ck.bin";
  s1.meta.taxonomy.relationships[0] = "Strangers";
  save_checkpoint(ck.string(), s1.model, s1.meta);
  CHECK_THROWS_AS(
      train_stage2(data.config, ds, load_checkpoint(ck.string())),
      IncompatibleCheckpoint);
}

TEST_CASE("convergence tracker flags divergence and stalls") {
  StageConfig cfg;
  cfg.min_rel_improvement = 1e-3;
  cfg.patience = 2;
  ConvergenceTracker tracker;
  CHECK_FALSE(tracker.update(1.0, cfg));
  CHECK_FALSE(tracker.update(0.5, cfg));   // big improvement
  CHECK_FALSE(tracker.update(0.4999, cfg)); // stall 1
  CHECK(tracker.update(0.4999, cfg));       // stall 2 -> stop
  CHECK_THROWS_AS(tracker.update(std::nan(""), cfg), DivergenceDetected);
}

TEST_CASE("evaluating an empty split raises MissingSplit") {
  TempDataset data("dg_harness_missing_split", 0.0);
  RunConfig config = data.config;
  config.stage1.max_epochs = 0;
  RuntimeDataset ds = load_runtime_dataset(config);
  ds.splits.ids["val"].clear();
  TrainResult s1 = train_stage1(config, ds);
  const fs::path ck = data.dir / "ck.bin";
  save_checkpoint(ck.string(), s1.model, s1.meta);
  LoadedCheckpoint ckpt = load_checkpoint(ck.string());
  CHECK_THROWS_AS(
      evaluate_run(config, ckpt, ds, SplitKind::val, config.out_dir),
      MissingSplit);
}

TEST_CASE("hard-label losses refuse the ambiguous split") {
  TempDataset data("dg_harness_hardlabel", 0.5);
  RunConfig config = data.config;
  config.loss = LossConfig::make(LossKind::cross_entropy);
  config.train_split = SplitKind::train_ambiguous;
  RuntimeDataset ds = load_runtime_dataset(config);
  CHECK_THROWS_AS(train_stage1(config, ds), ConfigError);
}

TEST_CASE("all-filtered proposals fall back to the first glance") {
  TempDataset data("dg_harness_fallback", 0.0);
  RunConfig config = data.config;
  // A proposal file with no entries leaves every region bag empty.
  const fs::path empty_props = data.dir / "empty_proposals.jsonl";
  std::ofstream(empty_props).close();
  config.proposals = empty_props.string();
  RuntimeDataset ds = load_runtime_dataset(config);
  TrainResult s1 = train_stage1(config, ds);
  const fs::path ck1 = data.dir / "ck1.bin";
  save_checkpoint(ck1.string(), s1.model, s1.meta);
  TrainResult s2 = train_stage2(config, ds, load_checkpoint(ck1.string()));

  // With no contextual regions anywhere, stage 2 predictions equal the
  // frozen first glance everywhere.
  const fs::path ck2 = data.dir / "ck2.bin";
  save_checkpoint(ck2.string(), s2.model, s2.meta);
  LoadedCheckpoint stage2 = load_checkpoint(ck2.string());
  LoadedCheckpoint stage1 = load_checkpoint(ck1.string());
  DatasetSplit test = ds.splits.materialize(SplitKind::test, ds.records);
  auto p2 = predict_split(stage2.meta, stage2.model, ds, test,
                          EvalOptions::from_meta(stage2.meta));
  auto p1 = predict_split(stage1.meta, stage1.model, ds, test,
                          EvalOptions::from_meta(stage1.meta));
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i].probabilities == p2[i].probabilities);
}

TEST_CASE("evaluate_run writes coherent artifacts") {
  TempDataset data("dg_harness_eval", 0.0);
  RuntimeDataset ds = load_runtime_dataset(data.config);
  TrainResult s1 = train_stage1(data.config, ds);
  const fs::path ck1 = data.dir / "ck1.bin";
  save_checkpoint(ck1.string(), s1.model, s1.meta);
  TrainResult s2 = train_stage2(data.config, ds, load_checkpoint(ck1.string()));
  const fs::path ck2 = data.dir / "ck2.bin";
  save_checkpoint(ck2.string(), s2.model, s2.meta);

  LoadedCheckpoint ckpt = load_checkpoint(ck2.string());
  EvalResult result = evaluate_run(data.config, ckpt, ds, SplitKind::test,
                                   data.config.out_dir);

  const fs::path out = data.config.out_dir;
  REQUIRE(fs::exists(out / "metrics.json"));
  REQUIRE(fs::exists(out / "confusion.png"));
  REQUIRE(fs::exists(out / "attention" / "overlays.json"));

  json metrics = json::parse(std::ifstream(out / "metrics.json"));
  CHECK(metrics.at("config_hash").get<std::string>() == config_hash(data.config));
  CHECK(metrics.at("version").get<std::string>() == std::string(kVersion));
  EvalResult reread = metrics.at("result").get<EvalResult>();
  CHECK(json(reread) == json(result));

  // PNG magic plus embedded tEXt metadata.
  const std::string png = read_bytes(out / "confusion.png");
  CHECK(png.substr(1, 3) == "PNG");
  CHECK(png.find("config_hash") != std::string::npos);

  // Overlays list exactly min(2, N) top regions per sample.
  json overlays = json::parse(std::ifstream(out / "attention" / "overlays.json"));
  REQUIRE(overlays.at("overlays").size() > 0);
  std::map<std::string, const AnnotationRecord*> by_id;
  DatasetSplit test = ds.splits.materialize(SplitKind::test, ds.records);
  for (const auto& r : test.records) by_id[r.id] = &r;
  for (const auto& entry : overlays.at("overlays")) {
    const auto* rec = by_id.at(entry.at("record_id").get<std::string>());
    const auto regions = select_contextual_regions(
        ds.proposals_for(rec->image_id), rec->box_1, rec->box_2,
        ckpt.meta.tau_u, ckpt.meta.max_regions);
    CHECK(entry.at("top_regions").size() ==
          std::min<size_t>(2, regions.size()));
    CHECK(fs::exists(out / entry.at("file").get<std::string>()));
  }
}

TEST_CASE("deterministic reruns produce identical metrics files") {
  TempDataset data("dg_harness_repro", 0.2);
  RunConfig config = data.config;
  config.deterministic = true;
  config.augment = true;  // exercise the flip/reversal pipeline too
  RuntimeDataset ds = load_runtime_dataset(config);

  auto run_once = [&](const std::string& out_name) {
    RunConfig c = config;
    c.out_dir = (data.dir / out_name).string();
    TrainResult s1 = train_stage1(c, ds);
    const fs::path ck1 = data.dir / (out_name + "_ck1.bin");
    save_checkpoint(ck1.string(), s1.model, s1.meta);
    TrainResult s2 = train_stage2(c, ds, load_checkpoint(ck1.string()));
    const fs::path ck2 = data.dir / (out_name + "_ck2.bin");
    save_checkpoint(ck2.string(), s2.model, s2.meta);
    LoadedCheckpoint ckpt = load_checkpoint(ck2.string());
    evaluate_run(c, ckpt, ds, SplitKind::test, c.out_dir);
    return read_bytes(data.dir / out_name / "metrics.json");
  };
  CHECK(run_once("run_a") == run_once("run_b"));
}

TEST_CASE("single-value sweep equals a direct run") {
  TempDataset data("dg_harness_sweep", 0.0, 40);
  RunConfig config = data.config;
  config.stage1.max_epochs = 2;
  config.stage2.max_epochs = 2;
  config.artifacts.overlays = false;
  RuntimeDataset ds = load_runtime_dataset(config);

  auto rows = sweep(config, ds, SweepAxis::tau_u, {"0.7"}, SplitKind::test);
  REQUIRE(rows.size() == 1);
  CHECK(fs::exists(fs::path(config.out_dir) / "sweep.csv"));
  CHECK(fs::exists(fs::path(config.out_dir) / "sweep.json"));

  // Direct run with the same seed reproduces the row.
  RunConfig direct = config;
  direct.regions.tau_u = 0.7;
  direct.out_dir = (data.dir / "direct").string();
  TrainResult s1 = train_stage1(direct, ds);
  const fs::path ck1 = data.dir / "direct_ck1.bin";
  save_checkpoint(ck1.string(), s1.model, s1.meta);
  TrainResult s2 = train_stage2(direct, ds, load_checkpoint(ck1.string()));
  const fs::path ck2 = data.dir / "direct_ck2.bin";
  save_checkpoint(ck2.string(), s2.model, s2.meta);
  LoadedCheckpoint ckpt = load_checkpoint(ck2.string());
  EvalResult direct_result =
      evaluate_run(direct, ckpt, ds, SplitKind::test, direct.out_dir);
  CHECK(json(direct_result) == json(rows[0].result));

  const std::string csv = read_bytes(fs::path(config.out_dir) / "sweep.csv");
  CHECK(csv.find("config_hash=") != std::string::npos);
  CHECK(csv.find("tau_u,0.7") != std::string::npos);
}

TEST_CASE("stage 1 solves a pair-appearance-only task") {
  const fs::path dir = fs::temp_directory_path() / "dg_harness_pair_only";
  fs::remove_all(dir);
  RelationshipTaxonomy taxonomy = RelationshipTaxonomy::default_taxonomy();
  SyntheticSpec spec;
  spec.num_images = 400;
  spec.image_size = 32;
  spec.context_informative_fraction = 0.0;  // labels live in the pair boxes
  spec.ambiguous_fraction = 0.0;
  spec.val_per_class = 5;
  spec.test_per_class = 10;
  spec.seed = 90;
  write_dataset(generate_synthetic(spec, taxonomy), dir.string(), taxonomy);

  RunConfig config;
  config.taxonomy = taxonomy;
  config.annotations = (dir / "annotations.jsonl").string();
  config.manifest = (dir / "manifest.json").string();
  config.proposals = (dir / "proposals.jsonl").string();
  config.splits = (dir / "splits.json").string();
  config.backbone.patch_size = 16;
  config.augment = false;
  config.optimizer.learning_rate = 0.02;
  config.loss = LossConfig::make(LossKind::focal);
  config.stage1.max_epochs = 14;
  config.seed = 91;
  config.artifacts.overlays = false;
  config.out_dir = (dir / "run").string();

  RuntimeDataset ds = load_runtime_dataset(config);
  TrainResult s1 = train_stage1(config, ds);
  const fs::path ck = dir / "ck.bin";
  save_checkpoint(ck.string(), s1.model, s1.meta);
  LoadedCheckpoint ckpt = load_checkpoint(ck.string());

  EvalResult test_result = evaluate_run(config, ckpt, ds, SplitKind::test,
                                        (dir / "eval_test").string());
  CHECK(test_result.accuracy > 0.9);

  // Memorized training split: mAP sits at (or next to) 1.
  EvalResult train_result = evaluate_run(
      config, ckpt, ds, SplitKind::train_consistent, (dir / "eval_train").string());
  CHECK(train_result.map > 0.98);
  fs::remove_all(dir);
}

TEST_CASE("attention aggregation beats plain averaging on a context task") {
  const fs::path dir = fs::temp_directory_path() / "dg_harness_agg_sweep";
  fs::remove_all(dir);
  RelationshipTaxonomy taxonomy = RelationshipTaxonomy::default_taxonomy();
  SyntheticSpec spec;
  spec.num_images = 400;
  spec.image_size = 32;
  spec.num_context_regions = 6;
  spec.context_informative_fraction = 0.6;
  spec.ambiguous_fraction = 0.0;
  spec.val_per_class = 5;
  spec.test_per_class = 10;
  spec.seed = 92;
  write_dataset(generate_synthetic(spec, taxonomy), dir.string(), taxonomy);

  RunConfig config;
  config.taxonomy = taxonomy;
  config.annotations = (dir / "annotations.jsonl").string();
  config.manifest = (dir / "manifest.json").string();
  config.proposals = (dir / "proposals.jsonl").string();
  config.splits = (dir / "splits.json").string();
  config.backbone.patch_size = 16;
  config.augment = false;
  config.optimizer.learning_rate = 0.02;
  config.loss = LossConfig::make(LossKind::focal);
  config.stage1.max_epochs = 12;
  config.stage2.max_epochs = 12;
  config.seed = 93;
  config.artifacts.overlays = false;
  config.out_dir = (dir / "run").string();

  RuntimeDataset ds = load_runtime_dataset(config);
  auto rows =
      sweep(config, ds, SweepAxis::aggregation, {"attention", "avg"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].result.map >= rows[1].result.map);
  fs::remove_all(dir);
}

TEST_CASE("heuristic proposals back the pipeline when no file is given") {
  TempDataset data("dg_harness_heuristic", 0.0, 40);
  RunConfig config = data.config;
  config.proposals.clear();
  RuntimeDataset ds = load_runtime_dataset(config);
  for (const auto& [id, props] : ds.proposals) CHECK_FALSE(props.empty());
}
