// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dualglance/core.hpp"
#include "dualglance/geometry.hpp"
#include "dualglance/image.hpp"
#include "dualglance/losses.hpp"
#include "dualglance/tensor.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Manifest + file ingestion
// ---------------------------------------------------------------------------

struct ImageInfo {
  int width = 0;
  int height = 0;
  std::string path;  // relative to the manifest location
};

inline void to_json(json& j, const ImageInfo& i) {
  j = json{{"width", i.width}, {"height", i.height}, {"path", i.path}};
}

inline void from_json(const json& j, ImageInfo& i) {
  j.at("width").get_to(i.width);
  j.at("height").get_to(i.height);
  j.at("path").get_to(i.path);
}

struct Manifest {
  std::map<std::string, ImageInfo> images;

  const ImageInfo& info(const std::string& image_id) const {
    auto it = images.find(image_id);
    if (it == images.end())
      throw DataError("image " + image_id + " missing from manifest");
    return it->second;
  }
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  Manifest m;
  json j = json::parse(in);
  for (auto& [id, info] : j.items()) m.images[id] = info.get<ImageInfo>();
  return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  json j = json::object();
  for (const auto& [id, info] : m.images) j[id] = info;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

// JSON Lines, one pair per line: image_id, box_1, box_2, votes (class
// name -> count), unsure (default 0). Records are validated against the
// manifest dimensions and get stable ids "<image_id>#<ordinal>".
inline std::vector<AnnotationRecord> load_annotations(
    const std::string& path, const Manifest& manifest,
    const RelationshipTaxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotations " + path);
  std::vector<AnnotationRecord> records;
  std::map<std::string, int> per_image_ordinal;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    AnnotationRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    rec.id = rec.image_id + "#" +
             std::to_string(per_image_ordinal[rec.image_id]++);
    j.at("box_1").get_to(rec.box_1);
    j.at("box_2").get_to(rec.box_2);
    rec.votes.assign(static_cast<size_t>(taxonomy.num_classes()), 0);
    for (auto& [name, count] : j.at("votes").items()) {
      const int idx = taxonomy.index_of(name);
      if (idx < 0)
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": unknown class " + name);
      rec.votes[static_cast<size_t>(idx)] = count.get<std::int64_t>();
    }
    rec.unsure_count = j.value("unsure", 0);
    const ImageInfo& info = manifest.info(rec.image_id);
    records.push_back(validate_record(std::move(rec), info.width, info.height));
  }
  return records;
}

inline void save_annotations(const std::string& path,
                             const std::vector<AnnotationRecord>& records,
                             const RelationshipTaxonomy& taxonomy) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const AnnotationRecord& rec : records) {
    json votes = json::object();
    for (size_t r = 0; r < rec.votes.size(); ++r)
      if (rec.votes[r] > 0) votes[taxonomy.relationships[r]] = rec.votes[r];
    json j{{"image_id", rec.image_id},
           {"box_1", rec.box_1},
           {"box_2", rec.box_2},
           {"votes", votes}};
    if (rec.unsure_count > 0) j["unsure"] = rec.unsure_count;
    out << j.dump() << "\n";
  }
}

// Proposal file: JSON Lines keyed by image_id with an array of
// {box, objectness}.
inline std::map<std::string, std::vector<RegionProposal>> load_proposals(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open proposals " + path);
  std::map<std::string, std::vector<RegionProposal>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out[j.at("image_id").get<std::string>()] =
        j.at("proposals").get<std::vector<RegionProposal>>();
  }
  return out;
}

inline void save_proposals(
    const std::string& path,
    const std::map<std::string, std::vector<RegionProposal>>& proposals) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& [id, list] : proposals) {
    json j{{"image_id", id}, {"proposals", list}};
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitKind { train_consistent, train_ambiguous, val, test };

inline std::string to_string(SplitKind k) {
  switch (k) {
    case SplitKind::train_consistent: return "train_consistent";
    case SplitKind::train_ambiguous: return "train_ambiguous";
    case SplitKind::val: return "val";
    case SplitKind::test: return "test";
  }
  return "?";
}

inline SplitKind split_kind_from_string(const std::string& s) {
  if (s == "train_consistent") return SplitKind::train_consistent;
  if (s == "train_ambiguous") return SplitKind::train_ambiguous;
  if (s == "val") return SplitKind::val;
  if (s == "test") return SplitKind::test;
  throw ConfigError("unknown split: " + s);
}

struct DatasetSplit {
  SplitKind kind = SplitKind::train_consistent;
  std::vector<AnnotationRecord> records;
};

// Record-id lists per split kind, the on-disk split format.
struct SplitManifest {
  std::map<std::string, std::vector<std::string>> ids;

  DatasetSplit materialize(SplitKind kind,
                           const std::vector<AnnotationRecord>& records) const {
    auto it = ids.find(to_string(kind));
    if (it == ids.end())
      throw MissingSplit("split " + to_string(kind) + " not in manifest");
    std::map<std::string, const AnnotationRecord*> by_id;
    for (const AnnotationRecord& r : records) by_id[r.id] = &r;
    DatasetSplit split;
    split.kind = kind;
    split.records.reserve(it->second.size());
    for (const std::string& id : it->second) {
      auto rit = by_id.find(id);
      if (rit == by_id.end())
        throw DataError("split references unknown record " + id);
      split.records.push_back(*rit->second);
    }
    return split;
  }
};

inline void to_json(json& j, const SplitManifest& m) { j = m.ids; }
inline void from_json(const json& j, SplitManifest& m) { j.get_to(m.ids); }

inline SplitManifest load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open splits " + path);
  return json::parse(in).get<SplitManifest>();
}

inline void save_splits(const std::string& path, const SplitManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << json(m).dump(2) << "\n";
}

// Assign whole images to val/test until each class holds the requested
// number of consistent records (balanced eval splits); everything else
// trains. Ambiguous records never enter val/test; the ambiguous training
// split is the consistent one enriched with them.
inline SplitManifest build_splits(const std::vector<AnnotationRecord>& records,
                                  int num_classes, int val_per_class,
                                  int test_per_class, std::uint64_t seed) {
  std::map<std::string, std::vector<const AnnotationRecord*>> by_image;
  for (const AnnotationRecord& r : records) by_image[r.image_id].push_back(&r);
  std::vector<std::string> image_ids;
  image_ids.reserve(by_image.size());
  for (const auto& [id, _] : by_image) image_ids.push_back(id);
  Rng rng(seed);
  std::shuffle(image_ids.begin(), image_ids.end(), rng);

  SplitManifest out;
  std::vector<int> val_count(static_cast<size_t>(num_classes), 0);
  std::vector<int> test_count(static_cast<size_t>(num_classes), 0);
  auto needs = [](const std::vector<int>& counts, int target) {
    for (int c : counts)
      if (c < target) return true;
    return false;
  };

  for (const std::string& image_id : image_ids) {
    const auto& recs = by_image[image_id];
    auto helps = [&recs](const std::vector<int>& counts, int target) {
      for (const AnnotationRecord* r : recs)
        if (r->is_consistent &&
            counts[static_cast<size_t>(*r->majority_label)] < target)
          return true;
      return false;
    };
    std::string dest = "train";
    if (needs(test_count, test_per_class) && helps(test_count, test_per_class))
      dest = "test";
    else if (needs(val_count, val_per_class) && helps(val_count, val_per_class))
      dest = "val";
    for (const AnnotationRecord* r : recs) {
      if (dest == "test") {
        if (r->is_consistent) {
          out.ids["test"].push_back(r->id);
          ++test_count[static_cast<size_t>(*r->majority_label)];
        }
      } else if (dest == "val") {
        if (r->is_consistent) {
          out.ids["val"].push_back(r->id);
          ++val_count[static_cast<size_t>(*r->majority_label)];
        }
      } else {
        if (r->is_consistent) out.ids["train_consistent"].push_back(r->id);
        out.ids["train_ambiguous"].push_back(r->id);
      }
    }
  }
  if (needs(test_count, test_per_class) || needs(val_count, val_per_class))
    throw DataError("not enough consistent records to balance val/test splits");
  // Keep the superset relation explicit even when empty.
  out.ids.try_emplace("train_consistent");
  out.ids.try_emplace("train_ambiguous");
  out.ids.try_emplace("val");
  out.ids.try_emplace("test");
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentedRecord {
  AnnotationRecord record;
  bool hflip = false;  // loader mirrors the image and its proposals
};

// Original, horizontal flip (boxes mirrored), and pair-order reversal.
// Labels are unchanged by all three.
inline std::vector<AugmentedRecord> augment(const AnnotationRecord& rec,
                                            double image_width) {
  std::vector<AugmentedRecord> out;
  out.push_back({rec, false});

  AnnotationRecord flipped = rec;
  flipped.box_1 = hflip_box(rec.box_1, image_width);
  flipped.box_2 = hflip_box(rec.box_2, image_width);
  out.push_back({std::move(flipped), true});

  AnnotationRecord reversed = rec;
  std::swap(reversed.box_1, reversed.box_2);
  out.push_back({std::move(reversed), false});
  return out;
}

// ---------------------------------------------------------------------------
// Class frequencies
// ---------------------------------------------------------------------------

// L_r sums raw annotation votes (not majority labels) over the split.
inline ClassFrequency annotation_class_counts(
    const std::vector<AnnotationRecord>& records, int num_classes,
    double beta = 0.5) {
  if (records.empty())
    throw EmptySplit("class counts over an empty split");
  ClassFrequency freq;
  freq.beta = beta;
  freq.counts.assign(static_cast<size_t>(num_classes), 0);
  for (const AnnotationRecord& rec : records) {
    if (static_cast<int>(rec.votes.size()) != num_classes)
      throw DimensionMismatch("record vote vector does not match taxonomy");
    for (size_t r = 0; r < rec.votes.size(); ++r)
      freq.counts[r] += rec.votes[r];
  }
  return freq;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

// Procedurally drawn desk-scale dataset. The ground-truth relationship of a
// pair is a deterministic function of pair-local appearance for the
// first classes and of a contextual object elsewhere in the image for the
// last round(context_informative_fraction * R) classes. Context-dependent
// classes share one neutral person appearance, so a pair-only model cannot
// separate them.
struct SyntheticSpec {
  int num_images = 200;
  int pairs_per_image = 1;
  int num_context_regions = 6;  // informative box + distractors
  double context_informative_fraction = 0.5;
  int image_size = 32;
  double ambiguous_fraction = 0.0;
  int votes_per_record = 5;
  int val_per_class = 5;
  int test_per_class = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_images < 1 || pairs_per_image < 1 || num_context_regions < 1)
      throw InvalidSpec("synthetic spec: counts must be positive");
    if (image_size < 16 || image_size % 4 != 0)
      throw InvalidSpec("synthetic spec: image_size must be >=16, multiple of 4");
    if (context_informative_fraction < 0 || context_informative_fraction > 1)
      throw InvalidSpec("synthetic spec: fraction must be in [0,1]");
    if (ambiguous_fraction < 0 || ambiguous_fraction > 1)
      throw InvalidSpec("synthetic spec: ambiguous_fraction must be in [0,1]");
    if (votes_per_record < 1)
      throw InvalidSpec("synthetic spec: votes_per_record must be positive");
    if (ambiguous_fraction > 0 && votes_per_record < 5)
      throw InvalidSpec(
          "synthetic spec: ambiguous votes need at least 5 annotators");
  }
};

inline void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"num_images", s.num_images},
           {"pairs_per_image", s.pairs_per_image},
           {"num_context_regions", s.num_context_regions},
           {"context_informative_fraction", s.context_informative_fraction},
           {"image_size", s.image_size},
           {"ambiguous_fraction", s.ambiguous_fraction},
           {"votes_per_record", s.votes_per_record},
           {"val_per_class", s.val_per_class},
           {"test_per_class", s.test_per_class},
           {"seed", s.seed}};
}

inline void from_json(const json& j, SyntheticSpec& s) {
  s.num_images = j.value("num_images", 200);
  s.pairs_per_image = j.value("pairs_per_image", 1);
  s.num_context_regions = j.value("num_context_regions", 6);
  s.context_informative_fraction =
      j.value("context_informative_fraction", 0.5);
  s.image_size = j.value("image_size", 32);
  s.ambiguous_fraction = j.value("ambiguous_fraction", 0.0);
  s.votes_per_record = j.value("votes_per_record", 5);
  s.val_per_class = j.value("val_per_class", 5);
  s.test_per_class = j.value("test_per_class", 10);
  s.seed = j.value("seed", static_cast<std::uint64_t>(1));
  s.validate();
}

struct SyntheticDataset {
  Manifest manifest;
  std::map<std::string, Tensor> images;
  std::vector<AnnotationRecord> records;
  std::map<std::string, std::vector<RegionProposal>> proposals;
  SplitManifest splits;
};

namespace detail {

inline std::array<double, 3> class_color(int r, int num_classes) {
  const double angle = 2.0 * 3.14159265358979323846 * r / num_classes;
  return {0.5 + 0.5 * std::sin(angle),
          0.5 + 0.5 * std::sin(angle + 2.0943951023931953),
          0.5 + 0.5 * std::sin(angle + 4.1887902047863905)};
}

inline void paint_box(Tensor& image, const BoundingBox& box,
                      const std::array<double, 3>& color, Rng& rng,
                      double noise) {
  std::uniform_real_distribution<double> jitter(-noise, noise);
  for (int y = static_cast<int>(box.y_min); y < static_cast<int>(box.y_max); ++y)
    for (int x = static_cast<int>(box.x_min); x < static_cast<int>(box.x_max); ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) =
            std::clamp(color[static_cast<size_t>(c)] + jitter(rng), 0.0, 1.0);
}

}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec,
                                           const RelationshipTaxonomy& taxonomy) {
  spec.validate();
  const int num_classes = taxonomy.num_classes();
  const int num_context_classes = static_cast<int>(
      std::lround(spec.context_informative_fraction * num_classes));
  const int first_context_class = num_classes - num_context_classes;
  if (spec.ambiguous_fraction > 0 && num_classes < 3)
    throw InvalidSpec("ambiguous votes need at least 3 classes");

  Rng rng(spec.seed);
  const int size = spec.image_size;
  const double s = static_cast<double>(size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticDataset ds;
  const std::array<double, 3> neutral{0.92, 0.92, 0.92};
  const std::array<double, 3> distractor_color{0.18, 0.18, 0.18};

  for (int img = 0; img < spec.num_images; ++img) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d", img);
    const std::string image_id = name;

    Tensor image({3, size, size});
    for (double& v : image.data) v = 0.45 + 0.1 * unit(rng);

    std::vector<RegionProposal> proposals;
    std::vector<BoundingBox> person_boxes;

    for (int pair = 0; pair < spec.pairs_per_image; ++pair) {
      // Persons live in the middle vertical band, one on each side.
      const double band_top = s / 3.0, band_bottom = 2.0 * s / 3.0;
      auto person_box = [&](double x_lo, double x_hi) {
        const double w = s / 6.0 + unit(rng) * s / 8.0;
        const double h = (band_bottom - band_top) * (0.6 + 0.4 * unit(rng));
        const double x = x_lo + unit(rng) * std::max(x_hi - x_lo - w, 1.0);
        const double y = band_top + unit(rng) * std::max(band_bottom - band_top - h, 0.0);
        return BoundingBox{std::floor(x), std::floor(y),
                           std::floor(x) + std::max(std::floor(w), 3.0),
                           std::floor(y) + std::max(std::floor(h), 3.0)};
      };
      BoundingBox b1 = person_box(1.0, s / 2.0 - 1.0);
      BoundingBox b2 = person_box(s / 2.0 + 1.0, s - 1.0);

      const int label = static_cast<int>(unit(rng) * num_classes) % num_classes;
      const bool context_class = label >= first_context_class;

      const auto person_color =
          context_class ? neutral : detail::class_color(label, num_classes);
      detail::paint_box(image, b1, person_color, rng, 0.05);
      detail::paint_box(image, b2, person_color, rng, 0.05);

      // Informative contextual object in the top band, never overlapping
      // the union of the person boxes.
      const double cw = std::max(std::floor(s / 6.0 + unit(rng) * s / 8.0), 3.0);
      const double cx = std::floor(unit(rng) * (s - cw - 2.0)) + 1.0;
      BoundingBox context{cx, 1.0, cx + cw,
                          std::min(1.0 + cw, std::floor(s / 4.0))};
      if (context.y_max <= context.y_min)
        context.y_max = context.y_min + 3.0;
      const auto context_color = context_class
                                     ? detail::class_color(label, num_classes)
                                     : distractor_color;
      detail::paint_box(image, context, context_color, rng, 0.03);
      proposals.push_back(RegionProposal{context, 0.85 + 0.1 * unit(rng)});

      person_boxes.push_back(b1);
      person_boxes.push_back(b2);

      // Votes: consistent records are 5-0 or 4-1; ambiguous ones follow a
      // 2-2-1 pattern whose plurality stays on the true class.
      AnnotationRecord rec;
      rec.image_id = image_id;
      rec.id = image_id + "#" + std::to_string(pair);
      rec.box_1 = b1;
      rec.box_2 = b2;
      rec.votes.assign(static_cast<size_t>(num_classes), 0);
      const int total = spec.votes_per_record;
      if (unit(rng) < spec.ambiguous_fraction && total >= 5) {
        // label + offset with offset in [1, R-1] never lands on label.
        const int o1 =
            (label + 1 + static_cast<int>(unit(rng) * (num_classes - 1))) %
            num_classes;
        int o2 = (o1 + 1) % num_classes;
        if (o2 == label) o2 = (o2 + 1) % num_classes;
        const std::int64_t a = (total - 1) / 2;  // max fraction stays < 0.6
        rec.votes[static_cast<size_t>(label)] = a;
        rec.votes[static_cast<size_t>(o1)] = a;
        rec.votes[static_cast<size_t>(o2)] = total - 2 * a;
      } else if (unit(rng) < 0.3 && total >= 3) {
        const int other =
            (label + 1 + static_cast<int>(unit(rng) * (num_classes - 1))) %
            num_classes;
        rec.votes[static_cast<size_t>(label)] = total - 1;
        rec.votes[static_cast<size_t>(other)] = 1;
      } else {
        rec.votes[static_cast<size_t>(label)] = total;
      }
      if (unit(rng) < 0.1) rec.unsure_count = 1;
      ds.records.push_back(validate_record(std::move(rec), s, s));
    }

    // Distractor proposals: dark boxes anywhere in the bottom band.
    const int distractors = std::max(spec.num_context_regions - 1, 0);
    for (int d = 0; d < distractors; ++d) {
      const double dw = std::max(std::floor(s / 8.0 + unit(rng) * s / 6.0), 3.0);
      const double dx = std::floor(unit(rng) * (s - dw - 2.0)) + 1.0;
      const double dy = std::floor(2.0 * s / 3.0 + unit(rng) * (s / 4.0 - 3.0));
      BoundingBox box{dx, dy, dx + dw, std::min(dy + dw, s - 1.0)};
      if (box.y_max <= box.y_min) box.y_max = box.y_min + 2.0;
      detail::paint_box(image, box, distractor_color, rng, 0.03);
      proposals.push_back(RegionProposal{box, 0.2 + 0.6 * unit(rng)});
    }

    ds.images[image_id] = std::move(image);
    ds.proposals[image_id] = std::move(proposals);
    ds.manifest.images[image_id] =
        ImageInfo{size, size, "images/" + image_id + ".ppm"};
  }

  ds.splits = build_splits(ds.records, num_classes, spec.val_per_class,
                           spec.test_per_class,
                           spec.seed * 0x9e3779b97f4a7c15ULL + 1);
  return ds;
}

inline void write_dataset(const SyntheticDataset& ds, const std::string& dir,
                          const RelationshipTaxonomy& taxonomy) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (const auto& [id, image] : ds.images)
    write_ppm((fs::path(dir) / ds.manifest.info(id).path).string(), image);
  save_manifest((fs::path(dir) / "manifest.json").string(), ds.manifest);
  save_annotations((fs::path(dir) / "annotations.jsonl").string(), ds.records,
                   taxonomy);
  save_proposals((fs::path(dir) / "proposals.jsonl").string(), ds.proposals);
  save_splits((fs::path(dir) / "splits.json").string(), ds.splits);
}

}  // namespace dualglance
