// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dualglance/core.hpp"
#include "dualglance/data.hpp"
#include "dualglance/geometry.hpp"
#include "dualglance/image.hpp"
#include "dualglance/losses.hpp"
#include "dualglance/metrics.hpp"
#include "dualglance/model.hpp"
#include "dualglance/nn.hpp"
#include "dualglance/version.hpp"

namespace dualglance {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 0.01;
  int batch_size = 32;
  double momentum = 0.9;
};

inline void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"momentum", c.momentum}};
}

inline void from_json(const json& j, OptimizerConfig& c) {
  c.learning_rate = j.value("learning_rate", 0.01);
  c.batch_size = j.value("batch_size", 32);
  c.momentum = j.value("momentum", 0.9);
  if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
}

struct RegionConfig {
  double tau_u = 0.7;
  int max_regions = 30;  // m
};

inline void to_json(json& j, const RegionConfig& c) {
  j = json{{"tau_u", c.tau_u}, {"max_regions", c.max_regions}};
}

inline void from_json(const json& j, RegionConfig& c) {
  c.tau_u = j.value("tau_u", 0.7);
  c.max_regions = j.value("max_regions", 30);
  if (c.tau_u <= 0 || c.tau_u > 1)
    throw ConfigError("tau_u must be in (0,1]");
  if (c.max_regions < 1) throw ConfigError("max_regions must be positive");
}

// Convergence: stop when the relative epoch-loss improvement stays below
// min_rel_improvement for `patience` epochs, or at max_epochs.
struct StageConfig {
  int max_epochs = 20;
  double min_rel_improvement = 1e-3;
  int patience = 3;
};

inline void to_json(json& j, const StageConfig& c) {
  j = json{{"max_epochs", c.max_epochs},
           {"min_rel_improvement", c.min_rel_improvement},
           {"patience", c.patience}};
}

inline void from_json(const json& j, StageConfig& c) {
  c.max_epochs = j.value("max_epochs", 20);
  c.min_rel_improvement = j.value("min_rel_improvement", 1e-3);
  c.patience = j.value("patience", 3);
  if (c.max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
}

enum class AlphaMode { automatic, none, fixed };

inline std::string to_string(AlphaMode m) {
  switch (m) {
    case AlphaMode::automatic: return "auto";
    case AlphaMode::none: return "none";
    case AlphaMode::fixed: return "fixed";
  }
  return "?";
}

inline AlphaMode alpha_mode_from_string(const std::string& s) {
  if (s == "auto") return AlphaMode::automatic;
  if (s == "none") return AlphaMode::none;
  if (s == "fixed") return AlphaMode::fixed;
  throw ConfigError("unknown alpha mode: " + s);
}

struct ArtifactConfig {
  bool overlays = true;
  int overlay_limit = -1;  // -1 = all samples
};

inline void to_json(json& j, const ArtifactConfig& c) {
  j = json{{"overlays", c.overlays}, {"overlay_limit", c.overlay_limit}};
}

inline void from_json(const json& j, ArtifactConfig& c) {
  c.overlays = j.value("overlays", true);
  c.overlay_limit = j.value("overlay_limit", -1);
}

struct RunConfig {
  RelationshipTaxonomy taxonomy = RelationshipTaxonomy::default_taxonomy();

  // Dataset paths; proposals empty -> heuristic source, splits empty ->
  // built from the annotations with the balancing utility.
  std::string annotations;
  std::string manifest;
  std::string proposals;
  std::string splits;
  int val_per_class = 5;
  int test_per_class = 10;

  SplitKind train_split = SplitKind::train_consistent;
  bool augment = true;

  BackboneSpec backbone{BackboneKind::toy_cnn, 8, 16, 4};
  int feature_dim = 32;
  int geo_hidden = 16;
  int roi_grid = 2;

  LossConfig loss = LossConfig::make(LossKind::adaptive_focal);
  AlphaMode alpha_mode = AlphaMode::automatic;
  double alpha_beta = 0.5;

  OptimizerConfig optimizer;
  RegionConfig regions;
  AggregationMode aggregation = AggregationMode::attention;
  StageConfig stage1, stage2;

  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool deterministic = false;
  int workers = 1;
  ArtifactConfig artifacts;

  ModelShape model_shape() const {
    if (backbone.kind != BackboneKind::toy_cnn)
      throw ConfigError(
          "only the toy_cnn backbone is trainable in this build; external "
          "weights slot in through the checkpoint interface");
    if (backbone.feature_stride != ModelShape::kFeatureStride)
      throw ConfigError("toy_cnn backbone has a fixed feature stride of 4");
    ModelShape s;
    s.patch_size = backbone.patch_size;
    s.channels = backbone.output_channels;
    s.feature_dim = feature_dim;
    s.geo_hidden = geo_hidden;
    s.roi_grid = roi_grid;
    s.num_classes = taxonomy.num_classes();
    s.validate();
    return s;
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"taxonomy", c.taxonomy},
           {"annotations", c.annotations},
           {"manifest", c.manifest},
           {"proposals", c.proposals},
           {"splits", c.splits},
           {"val_per_class", c.val_per_class},
           {"test_per_class", c.test_per_class},
           {"train_split", to_string(c.train_split)},
           {"augment", c.augment},
           {"backbone", c.backbone},
           {"feature_dim", c.feature_dim},
           {"geo_hidden", c.geo_hidden},
           {"roi_grid", c.roi_grid},
           {"loss", c.loss},
           {"alpha_mode", to_string(c.alpha_mode)},
           {"alpha_beta", c.alpha_beta},
           {"optimizer", c.optimizer},
           {"regions", c.regions},
           {"aggregation", to_string(c.aggregation)},
           {"stage1", c.stage1},
           {"stage2", c.stage2},
           {"seed", c.seed},
           {"out_dir", c.out_dir},
           {"deterministic", c.deterministic},
           {"workers", c.workers},
           {"artifacts", c.artifacts}};
}

inline void from_json(const json& j, RunConfig& c) {
  if (j.contains("taxonomy")) j.at("taxonomy").get_to(c.taxonomy);
  c.annotations = j.value("annotations", std::string());
  c.manifest = j.value("manifest", std::string());
  c.proposals = j.value("proposals", std::string());
  c.splits = j.value("splits", std::string());
  c.val_per_class = j.value("val_per_class", 5);
  c.test_per_class = j.value("test_per_class", 10);
  c.train_split = split_kind_from_string(
      j.value("train_split", std::string("train_consistent")));
  c.augment = j.value("augment", true);
  if (j.contains("backbone")) j.at("backbone").get_to(c.backbone);
  c.feature_dim = j.value("feature_dim", 32);
  c.geo_hidden = j.value("geo_hidden", 16);
  c.roi_grid = j.value("roi_grid", 2);
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
  c.alpha_mode = alpha_mode_from_string(j.value("alpha_mode", std::string("auto")));
  c.alpha_beta = j.value("alpha_beta", 0.5);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  if (j.contains("regions")) j.at("regions").get_to(c.regions);
  c.aggregation =
      aggregation_from_string(j.value("aggregation", std::string("attention")));
  if (j.contains("stage1")) j.at("stage1").get_to(c.stage1);
  if (j.contains("stage2")) j.at("stage2").get_to(c.stage2);
  c.seed = j.value("seed", static_cast<std::uint64_t>(1));
  c.out_dir = j.value("out_dir", std::string("out"));
  c.deterministic = j.value("deterministic", false);
  c.workers = j.value("workers", 1);
  if (j.contains("artifacts")) j.at("artifacts").get_to(c.artifacts);
  if (c.train_split != SplitKind::train_consistent &&
      c.train_split != SplitKind::train_ambiguous)
    throw ConfigError("train_split must be train_consistent or train_ambiguous");
}

// Hash of the semantic configuration (out_dir excluded so runs into
// different directories stay comparable).
inline std::string config_hash(const RunConfig& config) {
  json j = config;
  j.erase("out_dir");
  const std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// "dotted.path=value" assignments applied to the raw config JSON; the value
// parses as JSON when it can, else as a plain string.
inline void apply_config_override(json& config, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like field.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &config;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

// Data paths in a config file resolve relative to the file's directory.
inline RunConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json raw = json::parse(in);
  for (const std::string& assignment : overrides)
    apply_config_override(raw, assignment);
  RunConfig c = raw.get<RunConfig>();
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
  };
  resolve(c.annotations);
  resolve(c.manifest);
  resolve(c.proposals);
  resolve(c.splits);
  return c;
}

inline void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << json(config).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Runtime dataset
// ---------------------------------------------------------------------------

struct RuntimeDataset {
  std::vector<AnnotationRecord> records;
  Manifest manifest;
  std::map<std::string, Tensor> images;
  std::map<std::string, std::vector<RegionProposal>> proposals;
  SplitManifest splits;

  const Tensor& image(const std::string& id) const {
    auto it = images.find(id);
    if (it == images.end()) throw DataError("image " + id + " not loaded");
    return it->second;
  }

  const std::vector<RegionProposal>& proposals_for(const std::string& id) const {
    static const std::vector<RegionProposal> empty;
    auto it = proposals.find(id);
    return it == proposals.end() ? empty : it->second;
  }
};

inline RuntimeDataset load_runtime_dataset(const RunConfig& config) {
  if (config.manifest.empty() || config.annotations.empty())
    throw ConfigError("config needs annotation and manifest paths");
  RuntimeDataset ds;
  ds.manifest = load_manifest(config.manifest);
  ds.records = load_annotations(config.annotations, ds.manifest, config.taxonomy);
  const fs::path manifest_dir = fs::path(config.manifest).parent_path();
  for (const auto& [id, info] : ds.manifest.images) {
    fs::path p = info.path;
    if (p.is_relative()) p = manifest_dir / p;
    ds.images[id] = read_ppm(p.string());
  }
  if (!config.proposals.empty()) {
    ds.proposals = load_proposals(config.proposals);
  } else {
    for (const auto& [id, image] : ds.images)
      ds.proposals[id] = heuristic_proposals(image, config.regions.max_regions * 2);
  }
  if (!config.splits.empty()) {
    ds.splits = load_splits(config.splits);
  } else {
    ds.splits = build_splits(ds.records, config.taxonomy.num_classes(),
                             config.val_per_class, config.test_per_class,
                             config.seed * 0x9e3779b97f4a7c15ULL + 1);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training samples
// ---------------------------------------------------------------------------

struct TrainSample {
  AnnotationRecord record;
  bool hflip = false;
  std::vector<double> geom10;
  std::vector<RegionProposal> regions;  // contextual regions, flip-adjusted
  LossTarget target = 0;
};

namespace detail {

inline std::vector<double> geometry_pair(const AnnotationRecord& rec,
                                         double width, double height,
                                         const GeometryNormStats& stats) {
  const GeometryFeature g1 =
      normalize_geometry(encode_geometry(rec.box_1, width, height), stats);
  const GeometryFeature g2 =
      normalize_geometry(encode_geometry(rec.box_2, width, height), stats);
  std::vector<double> out;
  out.reserve(10);
  out.insert(out.end(), g1.begin(), g1.end());
  out.insert(out.end(), g2.begin(), g2.end());
  return out;
}

inline std::vector<RegionProposal> flipped_proposals(
    const std::vector<RegionProposal>& proposals, double width) {
  std::vector<RegionProposal> out;
  out.reserve(proposals.size());
  for (const RegionProposal& p : proposals)
    out.push_back(RegionProposal{hflip_box(p.box, width), p.objectness});
  return out;
}

}  // namespace detail

// Fit on the raw geometry features of the (un-augmented) training split.
inline GeometryNormStats fit_geometry_stats(const DatasetSplit& train,
                                            const Manifest& manifest) {
  std::vector<GeometryFeature> raw;
  raw.reserve(train.records.size() * 2);
  for (const AnnotationRecord& rec : train.records) {
    const ImageInfo& info = manifest.info(rec.image_id);
    raw.push_back(encode_geometry(rec.box_1, info.width, info.height));
    raw.push_back(encode_geometry(rec.box_2, info.width, info.height));
  }
  return GeometryNormStats::fit(raw);
}

inline std::optional<std::vector<double>> resolve_alpha(
    const RunConfig& config, const DatasetSplit& train) {
  switch (config.alpha_mode) {
    case AlphaMode::none:
      return std::nullopt;
    case AlphaMode::fixed:
      if (!config.loss.alpha)
        throw ConfigError("alpha_mode=fixed needs loss.alpha in the config");
      return config.loss.alpha;
    case AlphaMode::automatic: {
      ClassFrequency freq = annotation_class_counts(
          train.records, config.taxonomy.num_classes(), config.alpha_beta);
      return class_alpha(freq);
    }
  }
  return std::nullopt;
}

// Expand the training split into samples (augmentation triples the count),
// normalize geometry, pick targets, and pre-select contextual regions when
// the second glance will consume them.
inline std::vector<TrainSample> assemble_train_samples(
    const RunConfig& config, const RuntimeDataset& data,
    const DatasetSplit& train, const GeometryNormStats& stats,
    bool with_regions) {
  const bool soft = config.loss.wants_soft_target();
  std::vector<TrainSample> samples;
  for (const AnnotationRecord& rec : train.records) {
    if (!soft && !rec.is_consistent)
      throw ConfigError(
          "hard-label loss '" + to_string(config.loss.kind) +
          "' cannot train on ambiguous records; use train_consistent or a "
          "soft-label loss");
    const ImageInfo& info = data.manifest.info(rec.image_id);
    std::vector<AugmentedRecord> variants =
        config.augment ? augment(rec, info.width)
                       : std::vector<AugmentedRecord>{{rec, false}};
    for (AugmentedRecord& var : variants) {
      TrainSample s;
      s.hflip = var.hflip;
      s.geom10 = detail::geometry_pair(var.record, info.width, info.height, stats);
      if (soft)
        s.target = var.record.soft_label;
      else
        s.target = *var.record.majority_label;
      if (with_regions) {
        const auto& props = data.proposals_for(rec.image_id);
        const std::vector<RegionProposal> source =
            var.hflip ? detail::flipped_proposals(props, info.width) : props;
        s.regions = select_contextual_regions(source, var.record.box_1,
                                              var.record.box_2,
                                              config.regions.tau_u,
                                              config.regions.max_regions);
      }
      s.record = std::move(var.record);
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw EmptySplit("training split is empty");
  return samples;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ConvergenceTracker {
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;

  // Returns true when training should stop.
  bool update(double loss, const StageConfig& cfg) {
    if (!std::isfinite(loss))
      throw DivergenceDetected("training loss is not finite");
    if (std::isinf(best)) {  // first epoch always counts as improvement
      best = loss;
      return false;
    }
    const double rel = (best - loss) / std::max(std::abs(best), 1e-12);
    if (rel < cfg.min_rel_improvement)
      ++stalled;
    else
      stalled = 0;
    best = std::min(best, loss);
    return stalled >= cfg.patience;
  }
};

struct TrainResult {
  DualGlanceModel model;
  CheckpointMeta meta;
  std::vector<double> epoch_losses;
};

namespace detail {

inline const Tensor& sample_image(const RuntimeDataset& data,
                                  std::map<std::string, Tensor>& flip_cache,
                                  const TrainSample& s) {
  if (!s.hflip) return data.image(s.record.image_id);
  auto it = flip_cache.find(s.record.image_id);
  if (it == flip_cache.end())
    it = flip_cache.emplace(s.record.image_id,
                            hflip(data.image(s.record.image_id))).first;
  return it->second;
}

inline CheckpointMeta make_meta(const RunConfig& config,
                                const GeometryNormStats& stats,
                                const std::optional<std::vector<double>>& alpha,
                                const ModelShape& shape,
                                const std::string& stage) {
  CheckpointMeta meta;
  meta.stage = stage;
  meta.taxonomy = config.taxonomy;
  meta.geometry_stats = stats;
  meta.loss = config.loss;
  if (alpha) meta.alpha = *alpha;
  meta.shape = shape;
  meta.aggregation = config.aggregation;
  meta.tau_u = config.regions.tau_u;
  meta.max_regions = config.regions.max_regions;
  meta.config_hash = config_hash(config);
  return meta;
}

}  // namespace detail

// Stage 1: train the first glance alone (loss on softmax(S1)) until the
// loss converges or the epoch budget runs out.
inline TrainResult train_stage1(const RunConfig& config,
                                const RuntimeDataset& data,
                                std::ostream* log = nullptr) {
  const ModelShape shape = config.model_shape();
  DatasetSplit train = data.splits.materialize(config.train_split, data.records);
  GeometryNormStats stats = fit_geometry_stats(train, data.manifest);
  std::optional<std::vector<double>> alpha = resolve_alpha(config, train);
  LossConfig loss = config.loss;
  loss.alpha = alpha;

  TrainResult out{DualGlanceModel(shape),
                  detail::make_meta(config, stats, alpha, shape, "stage1"),
                  {}};
  Rng init_rng(config.seed);
  out.model.init(init_rng);

  std::vector<TrainSample> samples =
      assemble_train_samples(config, data, train, stats, /*with_regions=*/false);
  std::map<std::string, Tensor> flip_cache;

  std::vector<ParamRef> trainable = out.model.first_glance_params();
  SgdMomentum opt{config.optimizer.learning_rate, config.optimizer.momentum, {}};
  Rng shuffle_rng(config.seed ^ 0xa5a5a5a5ULL);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  ConvergenceTracker tracker;

  for (int epoch = 0; epoch < config.stage1.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.optimizer.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config.optimizer.batch_size));
      zero_grads(trainable);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t idx = start; idx < end; ++idx) {
        const TrainSample& s = samples[order[idx]];
        const Tensor& image = detail::sample_image(data, flip_cache, s);
        DualGlanceModel::Cache cache = out.model.forward_cache(
            image, s.record.box_1, s.record.box_2, {}, s.geom10,
            config.aggregation);
        epoch_loss += loss_value(loss, cache.fg.s1, s.target);
        ScoreVector d_s = loss_gradient(loss, cache.fg.s1, s.target);
        for (double& v : d_s) v *= inv_batch;
        out.model.backward(cache, d_s, /*freeze_first_glance=*/false);
      }
      opt.step(trainable);
    }
    epoch_loss /= static_cast<double>(samples.size());
    out.epoch_losses.push_back(epoch_loss);
    if (log)
      *log << "[stage1] epoch " << epoch << " loss " << epoch_loss << "\n";
    if (tracker.update(epoch_loss, config.stage1)) break;
  }
  return out;
}

// Stage 2: freeze the first glance (its per-sample outputs are cached once)
// and train the second glance plus the fusion weights on the fused score.
inline TrainResult train_stage2(const RunConfig& config,
                                const RuntimeDataset& data,
                                LoadedCheckpoint stage1,
                                std::ostream* log = nullptr) {
  if (!(stage1.meta.taxonomy == config.taxonomy))
    throw IncompatibleCheckpoint("stage-1 checkpoint taxonomy differs from config");
  const ModelShape shape = config.model_shape();
  json a = shape, b = stage1.meta.shape;
  if (a != b)
    throw IncompatibleCheckpoint("stage-1 checkpoint model shape differs from config");

  DatasetSplit train = data.splits.materialize(config.train_split, data.records);
  const GeometryNormStats stats = stage1.meta.geometry_stats;
  std::optional<std::vector<double>> alpha = resolve_alpha(config, train);
  LossConfig loss = config.loss;
  loss.alpha = alpha;

  TrainResult out{std::move(stage1.model),
                  detail::make_meta(config, stats, alpha, shape, "stage2"),
                  {}};

  std::vector<TrainSample> samples =
      assemble_train_samples(config, data, train, stats, /*with_regions=*/true);
  std::map<std::string, Tensor> flip_cache;

  const std::uint64_t fg_hash_before = param_hash(out.model.first_glance_params());

  // Frozen first-glance outputs per sample.
  std::vector<ScoreVector> s1_cache(samples.size());
  std::vector<std::vector<double>> v_top_cache(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const TrainSample& s = samples[i];
    const Tensor& image = detail::sample_image(data, flip_cache, s);
    PatchTriple patches =
        crop_patches(image, s.record.box_1, s.record.box_2, shape.patch_size);
    FirstGlance::Cache fg = out.model.first_glance.forward(patches, s.geom10);
    s1_cache[i] = fg.s1;
    v_top_cache[i] = fg.v_top;
  }

  std::vector<ParamRef> trainable = out.model.second_glance_params();
  SgdMomentum opt{config.optimizer.learning_rate, config.optimizer.momentum, {}};
  Rng shuffle_rng(config.seed ^ 0x5a5a5a5aULL);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  ConvergenceTracker tracker;

  for (int epoch = 0; epoch < config.stage2.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.optimizer.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config.optimizer.batch_size));
      zero_grads(trainable);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t idx = start; idx < end; ++idx) {
        const size_t si = order[idx];
        const TrainSample& s = samples[si];
        if (s.regions.empty()) {
          // Fallback: S = S1, nothing trainable contributes.
          epoch_loss += loss_value(loss, s1_cache[si], s.target);
          continue;
        }
        const Tensor& image = detail::sample_image(data, flip_cache, s);
        SecondGlance::Cache sg = out.model.second_glance.forward(
            image, s.regions, v_top_cache[si], config.aggregation);
        Prediction pred = fuse_and_predict(s1_cache[si], sg.chain.s2,
                                           out.model.fusion_w);
        epoch_loss += loss_value(loss, pred.scores, s.target);
        ScoreVector d_s = loss_gradient(loss, pred.scores, s.target);
        ScoreVector d_s2(d_s.size());
        for (size_t r = 0; r < d_s.size(); ++r) {
          const int ri = static_cast<int>(r);
          d_s2[r] = out.model.fusion_w.at(ri) * d_s[r] * inv_batch;
          out.model.fusion_w_grad.at(ri) += sg.chain.s2[r] * d_s[r] * inv_batch;
        }
        out.model.second_glance.backward(sg, v_top_cache[si], d_s2);
      }
      opt.step(trainable);
    }
    epoch_loss /= static_cast<double>(samples.size());
    out.epoch_losses.push_back(epoch_loss);
    if (log)
      *log << "[stage2] epoch " << epoch << " loss " << epoch_loss << "\n";
    if (tracker.update(epoch_loss, config.stage2)) break;
  }

  if (param_hash(out.model.first_glance_params()) != fg_hash_before)
    throw Error("first-glance parameters changed during stage 2");
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation + artifacts
// ---------------------------------------------------------------------------

struct SampleEvaluation {
  std::string record_id;
  std::string image_id;
  std::vector<double> probabilities;
  int truth = 0;
  std::vector<RegionProposal> regions;
  std::vector<double> attention;
};

// Region selection and aggregation are evaluation-time choices; the
// geometry stats always come from the checkpoint that fitted them.
struct EvalOptions {
  double tau_u = 0.7;
  int max_regions = 30;
  AggregationMode aggregation = AggregationMode::attention;

  static EvalOptions from_config(const RunConfig& config) {
    return EvalOptions{config.regions.tau_u, config.regions.max_regions,
                       config.aggregation};
  }

  static EvalOptions from_meta(const CheckpointMeta& meta) {
    return EvalOptions{meta.tau_u, meta.max_regions, meta.aggregation};
  }
};

inline std::vector<SampleEvaluation> predict_split(
    const CheckpointMeta& meta, DualGlanceModel& model,
    const RuntimeDataset& data, const DatasetSplit& split,
    const EvalOptions& opts) {
  const bool use_second_glance = meta.stage == "stage2";
  std::vector<SampleEvaluation> out;
  out.reserve(split.records.size());
  for (const AnnotationRecord& rec : split.records) {
    if (!rec.majority_label)
      throw DataError("evaluation record " + rec.id + " has no majority label");
    const ImageInfo& info = data.manifest.info(rec.image_id);
    SampleEvaluation se;
    se.record_id = rec.id;
    se.image_id = rec.image_id;
    se.truth = *rec.majority_label;
    std::vector<double> geom = detail::geometry_pair(
        rec, info.width, info.height, meta.geometry_stats);
    if (use_second_glance)
      se.regions = select_contextual_regions(data.proposals_for(rec.image_id),
                                             rec.box_1, rec.box_2, opts.tau_u,
                                             opts.max_regions);
    DualGlanceForward fwd =
        model.forward(data.image(rec.image_id), rec.box_1, rec.box_2,
                      se.regions, geom, opts.aggregation);
    se.probabilities = fwd.probabilities;
    se.attention = fwd.attention;
    out.push_back(std::move(se));
  }
  return out;
}

namespace detail {

inline void draw_confusion_heatmap(const std::string& path,
                                   const EvalResult& result,
                                   const std::vector<std::pair<std::string, std::string>>& meta) {
  const int num_classes = static_cast<int>(result.confusion.size());
  const int cell = 48, border = 2;
  const int side = num_classes * cell + (num_classes + 1) * border;
  Canvas canvas(side, side);
  canvas.fill_rect(0, 0, side, side, 255, 255, 255);
  for (int t = 0; t < num_classes; ++t) {
    double row_total = 0;
    for (std::int64_t v : result.confusion[static_cast<size_t>(t)])
      row_total += static_cast<double>(v);
    for (int pdx = 0; pdx < num_classes; ++pdx) {
      const double frac =
          row_total > 0
              ? static_cast<double>(
                    result.confusion[static_cast<size_t>(t)][static_cast<size_t>(pdx)]) /
                    row_total
              : 0.0;
      const auto color = heat_color(frac);
      const int x0 = border + pdx * (cell + border);
      const int y0 = border + t * (cell + border);
      canvas.fill_rect(x0, y0, x0 + cell, y0 + cell, color[0], color[1],
                       color[2]);
    }
  }
  write_png(path, canvas, meta);
}

inline std::vector<size_t> top_attention_regions(
    const std::vector<double>& attention, size_t count) {
  std::vector<size_t> order(attention.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&attention](size_t a, size_t b) {
    return attention[a] > attention[b];
  });
  order.resize(std::min(count, order.size()));
  return order;
}

inline void draw_attention_overlay(const std::string& path, const Tensor& image,
                                   const AnnotationRecord& rec,
                                   const SampleEvaluation& se,
                                   const std::vector<size_t>& top,
                                   const std::vector<std::pair<std::string, std::string>>& meta) {
  const int scale = std::max(1, 256 / image.dim(2));
  Canvas canvas = canvas_from_image(image, scale);
  auto draw_box = [&](const BoundingBox& b, unsigned char r, unsigned char g,
                      unsigned char bl) {
    canvas.stroke_rect(static_cast<int>(b.x_min * scale),
                       static_cast<int>(b.y_min * scale),
                       static_cast<int>(b.x_max * scale) - 1,
                       static_cast<int>(b.y_max * scale) - 1, r, g, bl, 2);
  };
  draw_box(rec.box_1, 0, 220, 0);
  draw_box(rec.box_2, 0, 220, 0);
  for (size_t idx : top) draw_box(se.regions[idx].box, 230, 20, 20);
  write_png(path, canvas, meta);
}

}  // namespace detail

// Runs a checkpoint over a split; writes metrics.json, confusion.png and the
// per-sample attention overlays (pair boxes plus the top min(2,N) regions).
inline EvalResult evaluate_run(const RunConfig& config, LoadedCheckpoint& ckpt,
                               const RuntimeDataset& data, SplitKind split_kind,
                               const std::string& out_dir) {
  DatasetSplit split = data.splits.materialize(split_kind, data.records);
  if (split.records.empty())
    throw MissingSplit("split " + to_string(split_kind) + " is empty");
  std::vector<SampleEvaluation> evals = predict_split(
      ckpt.meta, ckpt.model, data, split, EvalOptions::from_config(config));

  std::vector<std::vector<double>> predictions;
  std::vector<int> truths;
  predictions.reserve(evals.size());
  for (const SampleEvaluation& se : evals) {
    predictions.push_back(se.probabilities);
    truths.push_back(se.truth);
  }
  EvalResult result =
      evaluate(predictions, truths, config.taxonomy.num_classes());

  fs::create_directories(out_dir);
  const std::string hash = config_hash(config);
  const std::vector<std::pair<std::string, std::string>> png_meta = {
      {"config_hash", hash}, {"version", kVersion}};

  json metrics{{"version", kVersion},
               {"config_hash", hash},
               {"checkpoint_stage", ckpt.meta.stage},
               {"split", to_string(split_kind)},
               {"class_names", config.taxonomy.relationships},
               {"result", result}};
  {
    std::ofstream out(fs::path(out_dir) / "metrics.json");
    out << metrics.dump(2) << "\n";
  }

  detail::draw_confusion_heatmap((fs::path(out_dir) / "confusion.png").string(),
                                 result, png_meta);

  if (config.artifacts.overlays) {
    fs::create_directories(fs::path(out_dir) / "attention");
    json overlay_index = json::array();
    int written = 0;
    std::map<std::string, const AnnotationRecord*> by_id;
    for (const AnnotationRecord& r : split.records) by_id[r.id] = &r;
    for (const SampleEvaluation& se : evals) {
      if (config.artifacts.overlay_limit >= 0 &&
          written >= config.artifacts.overlay_limit)
        break;
      if (se.regions.empty()) continue;
      const std::vector<size_t> top =
          detail::top_attention_regions(se.attention, 2);
      std::string pair_id = se.record_id;
      std::replace(pair_id.begin(), pair_id.end(), '#', '_');
      const std::string file = "attention/" + pair_id + ".png";
      detail::draw_attention_overlay((fs::path(out_dir) / file).string(),
                                     data.image(se.image_id), *by_id[se.record_id],
                                     se, top, png_meta);
      json regions = json::array();
      for (size_t idx : top)
        regions.push_back(json{{"box", se.regions[idx].box},
                               {"attention", se.attention[idx]}});
      overlay_index.push_back(json{{"record_id", se.record_id},
                                   {"file", file},
                                   {"top_regions", regions}});
      ++written;
    }
    std::ofstream out(fs::path(out_dir) / "attention" / "overlays.json");
    out << json{{"version", kVersion},
                {"config_hash", hash},
                {"overlays", overlay_index}}
               .dump(2)
        << "\n";
  }
  return result;
}

// Per-(pair, region) attention weights as a JSON artifact, for inspection
// and visualization.
inline void inspect_attention(const RunConfig& config, LoadedCheckpoint& ckpt,
                              const RuntimeDataset& data, SplitKind split_kind,
                              const std::string& out_path, int limit = -1) {
  if (ckpt.meta.stage != "stage2")
    throw ConfigError("attention inspection needs a stage-2 checkpoint");
  DatasetSplit split = data.splits.materialize(split_kind, data.records);
  std::vector<SampleEvaluation> evals = predict_split(
      ckpt.meta, ckpt.model, data, split, EvalOptions::from_config(config));
  json items = json::array();
  int count = 0;
  for (const SampleEvaluation& se : evals) {
    if (limit >= 0 && count >= limit) break;
    json regions = json::array();
    for (size_t i = 0; i < se.regions.size(); ++i)
      regions.push_back(json{{"box", se.regions[i].box},
                             {"objectness", se.regions[i].objectness},
                             {"attention", se.attention[i]}});
    items.push_back(json{{"record_id", se.record_id},
                         {"image_id", se.image_id},
                         {"regions", regions},
                         {"probabilities", se.probabilities}});
    ++count;
  }
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot open " + out_path + " for writing");
  out << json{{"version", kVersion},
              {"config_hash", config_hash(config)},
              {"samples", items}}
             .dump(2)
      << "\n";
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { tau_u, m, gamma, loss_kind, aggregation };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::tau_u: return "tau_u";
    case SweepAxis::m: return "m";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::loss_kind: return "loss_kind";
    case SweepAxis::aggregation: return "aggregation";
  }
  return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "tau_u") return SweepAxis::tau_u;
  if (s == "m") return SweepAxis::m;
  if (s == "gamma") return SweepAxis::gamma;
  if (s == "loss_kind" || s == "loss") return SweepAxis::loss_kind;
  if (s == "aggregation" || s == "agg") return SweepAxis::aggregation;
  throw ConfigError("unknown sweep axis: " + s);
}

inline RunConfig apply_sweep_value(RunConfig config, SweepAxis axis,
                                   const std::string& value) {
  switch (axis) {
    case SweepAxis::tau_u:
      config.regions.tau_u = std::stod(value);
      break;
    case SweepAxis::m:
      config.regions.max_regions = std::stoi(value);
      break;
    case SweepAxis::gamma:
      config.loss.gamma = std::stod(value);
      break;
    case SweepAxis::loss_kind:
      config.loss.kind = loss_kind_from_string(value);
      config.loss.gamma = default_gamma(config.loss.kind);
      break;
    case SweepAxis::aggregation:
      config.aggregation = aggregation_from_string(value);
      break;
  }
  return config;
}

struct SweepRow {
  std::string value;
  EvalResult result;
};

// One full two-stage sub-run per value, shared seed and dataset; results
// land in <out_dir>/sweep_<axis>_<value>/ plus a combined table.
inline std::vector<SweepRow> sweep(const RunConfig& base,
                                   const RuntimeDataset& data, SweepAxis axis,
                                   const std::vector<std::string>& values,
                                   SplitKind eval_split = SplitKind::test,
                                   std::ostream* log = nullptr) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    RunConfig config = apply_sweep_value(base, axis, value);
    const std::string sub_dir =
        (fs::path(base.out_dir) / ("sweep_" + to_string(axis) + "_" + value))
            .string();
    config.out_dir = sub_dir;
    TrainResult s1 = train_stage1(config, data, log);
    fs::create_directories(sub_dir);
    const std::string ck1 = (fs::path(sub_dir) / "checkpoint_stage1.bin").string();
    save_checkpoint(ck1, s1.model, s1.meta);
    TrainResult s2 = train_stage2(config, data, load_checkpoint(ck1), log);
    const std::string ck2 = (fs::path(sub_dir) / "checkpoint.bin").string();
    save_checkpoint(ck2, s2.model, s2.meta);
    LoadedCheckpoint loaded = load_checkpoint(ck2);
    EvalResult result = evaluate_run(config, loaded, data, eval_split, sub_dir);
    rows.push_back(SweepRow{value, result});
    if (log)
      *log << "[sweep] " << to_string(axis) << "=" << value << " map "
           << result.map << "\n";
  }

  fs::create_directories(base.out_dir);
  const std::string hash = config_hash(base);
  {
    std::ofstream csv(fs::path(base.out_dir) / "sweep.csv");
    csv << "# version=" << kVersion << " config_hash=" << hash << "\n";
    csv << "axis,value,map,accuracy";
    for (const std::string& name : base.taxonomy.relationships)
      csv << ",ap_" << name;
    csv << "\n";
    for (const SweepRow& row : rows) {
      csv << to_string(axis) << "," << row.value << "," << row.result.map
          << "," << row.result.accuracy;
      for (double ap : row.result.per_class_ap) csv << "," << ap;
      csv << "\n";
    }
  }
  {
    json rows_json = json::array();
    for (const SweepRow& row : rows)
      rows_json.push_back(json{{"value", row.value}, {"result", row.result}});
    std::ofstream out(fs::path(base.out_dir) / "sweep.json");
    out << json{{"version", kVersion},
                {"config_hash", hash},
                {"axis", to_string(axis)},
                {"rows", rows_json}}
               .dump(2)
        << "\n";
  }
  return rows;
}

}  // namespace dualglance
