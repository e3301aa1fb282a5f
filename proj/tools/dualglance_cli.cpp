// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth / train / eval / sweep / inspect. All verbs
// read a config file; individual fields are overridable by flags.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualglance/data.hpp"
#include "dualglance/harness.hpp"
#include "dualglance/model.hpp"
#include "dualglance/version.hpp"

namespace dg = dualglance;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
  double tau_u = 0;
  bool tau_u_set = false;
  int max_regions = 0;
  bool m_set = false;
  double gamma = 0;
  bool gamma_set = false;
  std::string loss;
  std::string aggregation;
  std::string split;
  std::vector<std::string> overrides;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path, "run config JSON");
  if (config_required) opt->required();
  cmd->add_option("--out", flags.out_dir, "output directory override");
  cmd->add_option("--seed", flags.seed, "seed override")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  cmd->add_flag("--deterministic", flags.deterministic,
                "single-threaded bitwise-reproducible mode");
  cmd->add_option("--tau-u", flags.tau_u, "contextual-region IoU upper bound")
      ->each([&flags](const std::string&) { flags.tau_u_set = true; });
  cmd->add_option("--m", flags.max_regions, "max contextual regions")
      ->each([&flags](const std::string&) { flags.m_set = true; });
  cmd->add_option("--gamma", flags.gamma, "loss focusing parameter")
      ->each([&flags](const std::string&) { flags.gamma_set = true; });
  cmd->add_option("--loss", flags.loss, "loss kind: ce|fl|kl|adafl");
  cmd->add_option("--agg", flags.aggregation,
                  "aggregation mode: attention|avg|max");
  cmd->add_option("--split", flags.split, "dataset split name");
  cmd->add_option("--set", flags.overrides,
                  "override any config field: path.to.field=value");
}

dg::RunConfig resolve_config(const CommonFlags& flags) {
  dg::RunConfig config = dg::load_config(flags.config_path, flags.overrides);
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (flags.seed_set) config.seed = flags.seed;
  if (flags.deterministic) config.deterministic = true;
  if (flags.tau_u_set) config.regions.tau_u = flags.tau_u;
  if (flags.m_set) config.regions.max_regions = flags.max_regions;
  if (flags.gamma_set) config.loss.gamma = flags.gamma;
  if (!flags.loss.empty()) {
    config.loss.kind = dg::loss_kind_from_string(flags.loss);
    if (!flags.gamma_set) config.loss.gamma = dg::default_gamma(config.loss.kind);
  }
  if (!flags.aggregation.empty())
    config.aggregation = dg::aggregation_from_string(flags.aggregation);
  return config;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int run_synth(const std::string& out_dir, const dg::SyntheticSpec& spec,
              bool with_no_relation) {
  const dg::RelationshipTaxonomy taxonomy =
      dg::RelationshipTaxonomy::default_taxonomy(with_no_relation);
  dg::SyntheticDataset ds = dg::generate_synthetic(spec, taxonomy);
  dg::write_dataset(ds, out_dir, taxonomy);

  // Ready-to-train config next to the dataset.
  dg::RunConfig config;
  config.taxonomy = taxonomy;
  config.annotations = "annotations.jsonl";
  config.manifest = "manifest.json";
  config.proposals = "proposals.jsonl";
  config.splits = "splits.json";
  config.backbone.patch_size = 16;
  config.seed = spec.seed;
  config.out_dir = "run";
  dg::save_config((fs::path(out_dir) / "config.json").string(), config);

  int consistent = 0;
  for (const auto& rec : ds.records) consistent += rec.is_consistent ? 1 : 0;
  std::cout << "wrote " << ds.records.size() << " records ("
            << consistent << " consistent) across " << ds.images.size()
            << " images to " << out_dir << "\n";
  for (int r = 0; r < taxonomy.num_classes(); ++r) {
    try {
      std::cout << "  agreement[" << taxonomy.relationships[static_cast<size_t>(r)]
                << "] = " << dg::agreement_rate(ds.records, r) << "\n";
    } catch (const dg::NoRecords&) {
      std::cout << "  agreement[" << taxonomy.relationships[static_cast<size_t>(r)]
                << "] = n/a\n";
    }
  }
  return 0;
}

int run_train(const dg::RunConfig& config, const std::string& stage) {
  dg::RuntimeDataset data = dg::load_runtime_dataset(config);
  fs::create_directories(config.out_dir);
  const std::string ck1 =
      (fs::path(config.out_dir) / "checkpoint_stage1.bin").string();
  const std::string ck2 = (fs::path(config.out_dir) / "checkpoint.bin").string();

  if (stage == "1" || stage == "both") {
    dg::TrainResult s1 = dg::train_stage1(config, data, &std::cout);
    dg::save_checkpoint(ck1, s1.model, s1.meta);
    std::cout << "stage-1 checkpoint: " << ck1 << "\n";
  }
  if (stage == "2" || stage == "both") {
    dg::TrainResult s2 =
        dg::train_stage2(config, data, dg::load_checkpoint(ck1), &std::cout);
    dg::save_checkpoint(ck2, s2.model, s2.meta);
    std::cout << "stage-2 checkpoint: " << ck2 << "\n";
  }
  return 0;
}

int run_eval(const dg::RunConfig& config, const std::string& checkpoint,
             const std::string& split) {
  dg::RuntimeDataset data = dg::load_runtime_dataset(config);
  dg::LoadedCheckpoint ckpt = dg::load_checkpoint(checkpoint);
  dg::EvalResult result = dg::evaluate_run(
      config, ckpt, data, dg::split_kind_from_string(split), config.out_dir);
  std::cout << "split " << split << ": mAP " << result.map << ", accuracy "
            << result.accuracy << " over " << result.num_samples
            << " samples\n";
  std::cout << "artifacts in " << config.out_dir << "\n";
  return 0;
}

int run_sweep(const dg::RunConfig& config, const std::string& axis,
              const std::string& values_csv, const std::string& split) {
  dg::RuntimeDataset data = dg::load_runtime_dataset(config);
  const auto rows = dg::sweep(config, data, dg::sweep_axis_from_string(axis),
                              split_csv(values_csv),
                              dg::split_kind_from_string(split), &std::cout);
  std::cout << "sweep table: " << (fs::path(config.out_dir) / "sweep.csv").string()
            << "\n";
  for (const auto& row : rows)
    std::cout << "  " << axis << "=" << row.value << " -> mAP "
              << row.result.map << "\n";
  return 0;
}

int run_inspect(const dg::RunConfig& config, const std::string& checkpoint,
                const std::string& split, int limit) {
  dg::RuntimeDataset data = dg::load_runtime_dataset(config);
  dg::LoadedCheckpoint ckpt = dg::load_checkpoint(checkpoint);
  fs::create_directories(config.out_dir);
  const std::string out_path =
      (fs::path(config.out_dir) / "attention.json").string();
  dg::inspect_attention(config, ckpt, data,
                        dg::split_kind_from_string(split), out_path, limit);
  dg::RunConfig overlay_config = config;
  overlay_config.artifacts.overlays = true;
  overlay_config.artifacts.overlay_limit = limit;
  dg::evaluate_run(overlay_config, ckpt, data,
                   dg::split_kind_from_string(split), config.out_dir);
  std::cout << "attention dump: " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pair-relationship recognition toolkit"};
  app.set_version_flag("--version", dg::kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "synthetic";
  dg::SyntheticSpec spec;
  bool with_nor = false;
  synth->add_option("--out", synth_out, "dataset directory");
  synth->add_option("--num-images", spec.num_images, "image count");
  synth->add_option("--pairs-per-image", spec.pairs_per_image, "pairs per image");
  synth->add_option("--context-regions", spec.num_context_regions,
                    "proposals per image");
  synth->add_option("--context-fraction", spec.context_informative_fraction,
                    "fraction of classes that depend on context");
  synth->add_option("--image-size", spec.image_size, "image side in pixels");
  synth->add_option("--ambiguous-fraction", spec.ambiguous_fraction,
                    "fraction of records with ambiguous votes");
  synth->add_option("--votes", spec.votes_per_record, "annotators per record");
  synth->add_option("--val-per-class", spec.val_per_class, "val records per class");
  synth->add_option("--test-per-class", spec.test_per_class,
                    "test records per class");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_flag("--no-relation", with_nor, "include No-Relation as 6th class");

  // train
  auto* train = app.add_subcommand("train", "two-stage training");
  CommonFlags train_flags;
  add_common_flags(train, train_flags, true);
  std::string train_stage = "both";
  train->add_option("--stage", train_stage, "1 | 2 | both");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  CommonFlags eval_flags;
  add_common_flags(eval, eval_flags, true);
  std::string eval_checkpoint;
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "ablation sweep over one axis");
  CommonFlags sweep_flags;
  add_common_flags(sweep_cmd, sweep_flags, true);
  std::string sweep_axis, sweep_values;
  sweep_cmd->add_option("--axis", sweep_axis,
                        "tau_u | m | gamma | loss_kind | aggregation")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")
      ->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump attention JSON/overlays");
  CommonFlags inspect_flags;
  add_common_flags(inspect, inspect_flags, true);
  std::string inspect_checkpoint;
  int inspect_limit = 16;
  inspect->add_option("--checkpoint", inspect_checkpoint, "checkpoint file")
      ->required();
  inspect->add_option("--limit", inspect_limit, "max samples to dump");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_out, spec, with_nor);
    if (train->parsed())
      return run_train(resolve_config(train_flags), train_stage);
    if (eval->parsed())
      return run_eval(resolve_config(eval_flags), eval_checkpoint,
                      eval_flags.split.empty() ? "test" : eval_flags.split);
    if (sweep_cmd->parsed())
      return run_sweep(resolve_config(sweep_flags), sweep_axis, sweep_values,
                       sweep_flags.split.empty() ? "test" : sweep_flags.split);
    if (inspect->parsed())
      return run_inspect(resolve_config(inspect_flags), inspect_checkpoint,
                         inspect_flags.split.empty() ? "test" : inspect_flags.split,
                         inspect_limit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
