// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace dualglance {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateBox : Error { using Error::Error; };
struct EmptyVotes : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct EmptyBag : Error { using Error::Error; };
struct ZeroCount : Error { using Error::Error; };
struct MismatchedTarget : Error { using Error::Error; };
struct RegionOutsideMap : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };
struct NoPositives : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct NoRecords : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct DivergenceDetected : Error { using Error::Error; };
struct IncompatibleCheckpoint : Error { using Error::Error; };
struct MissingSplit : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Score vectors
// ---------------------------------------------------------------------------

// Unnormalized class scores. Length R, finite after any forward pass.
using ScoreVector = std::vector<double>;

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Relationship taxonomy
// ---------------------------------------------------------------------------

// Ordered class list shared by every artifact of a run. Class indices are
// dense 0..R-1 and follow the declaration order of `relationships`.
struct RelationshipTaxonomy {
  std::vector<std::string> domains;
  std::vector<std::string> relationships;
  std::vector<int> domain_index;  // one domain per relationship

  int num_classes() const { return static_cast<int>(relationships.size()); }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < relationships.size(); ++i)
      if (relationships[i] == name) return static_cast<int>(i);
    return -1;
  }

  const std::string& domain_of(int relationship) const {
    return domains.at(static_cast<size_t>(domain_index.at(
        static_cast<size_t>(relationship))));
  }

  void validate() const {
    if (relationships.empty()) throw ConfigError("taxonomy has no classes");
    if (domain_index.size() != relationships.size())
      throw ConfigError("taxonomy: every relationship needs exactly one domain");
    for (int d : domain_index)
      if (d < 0 || d >= static_cast<int>(domains.size()))
        throw ConfigError("taxonomy: domain index out of range");
    for (size_t i = 0; i < relationships.size(); ++i)
      for (size_t j = i + 1; j < relationships.size(); ++j)
        if (relationships[i] == relationships[j])
          throw ConfigError("taxonomy: duplicate class name " + relationships[i]);
  }

  // Intimate/Non-Intimate over {Friends, Family, Couple, Professional,
  // Commercial}, optionally extended with No-Relation as a 6th class.
  static RelationshipTaxonomy default_taxonomy(bool include_no_relation = false) {
    RelationshipTaxonomy t;
    t.domains = {"Intimate", "Non-Intimate"};
    t.relationships = {"Friends", "Family", "Couple", "Professional",
                       "Commercial"};
    t.domain_index = {0, 0, 0, 1, 1};
    if (include_no_relation) {
      t.domains.push_back("No-Relation");
      t.relationships.push_back("No-Relation");
      t.domain_index.push_back(2);
    }
    return t;
  }

  bool operator==(const RelationshipTaxonomy& o) const {
    return domains == o.domains && relationships == o.relationships &&
           domain_index == o.domain_index;
  }
};

inline void to_json(json& j, const RelationshipTaxonomy& t) {
  j = json{{"domains", t.domains},
           {"relationships", t.relationships},
           {"domain_index", t.domain_index}};
}

inline void from_json(const json& j, RelationshipTaxonomy& t) {
  j.at("domains").get_to(t.domains);
  j.at("relationships").get_to(t.relationships);
  j.at("domain_index").get_to(t.domain_index);
  t.validate();
}

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

// Axis-aligned rectangle in image pixel coordinates, x_min < x_max and
// y_min < y_max once validated.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  BoundingBox clamped(double image_width, double image_height) const {
    return BoundingBox{std::clamp(x_min, 0.0, image_width),
                       std::clamp(y_min, 0.0, image_height),
                       std::clamp(x_max, 0.0, image_width),
                       std::clamp(y_max, 0.0, image_height)};
  }

  bool operator==(const BoundingBox& o) const {
    return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max &&
           y_max == o.y_max;
  }
};

inline void to_json(json& j, const BoundingBox& b) {
  j = json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline void from_json(const json& j, BoundingBox& b) {
  if (!j.is_array() || j.size() != 4)
    throw DataError("box must be an array [x_min,y_min,x_max,y_max]");
  b = BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                  j[3].get<double>()};
}

// ---------------------------------------------------------------------------
// Soft labels
// ---------------------------------------------------------------------------

// Probability distribution over the R relationship classes, derived from
// annotator vote counts (each entry is k/n).
struct SoftLabel {
  std::vector<double> probs;

  int num_classes() const { return static_cast<int>(probs.size()); }

  double max_prob() const {
    return probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end());
  }

  int argmax() const {
    return static_cast<int>(std::distance(
        probs.begin(), std::max_element(probs.begin(), probs.end())));
  }
};

inline void to_json(json& j, const SoftLabel& s) { j = s.probs; }
inline void from_json(const json& j, SoftLabel& s) { j.get_to(s.probs); }

// Normalize vote counts into a soft label. Unsure votes are excluded from
// the denominator upstream; a record with no relationship votes is
// untrainable.
inline SoftLabel build_soft_label(const std::vector<std::int64_t>& votes) {
  std::int64_t total = 0;
  for (std::int64_t v : votes) {
    if (v < 0) throw DataError("negative vote count");
    total += v;
  }
  if (total == 0) throw EmptyVotes("record has no non-unsure votes");
  SoftLabel label;
  label.probs.resize(votes.size());
  for (size_t i = 0; i < votes.size(); ++i)
    label.probs[i] = static_cast<double>(votes[i]) / static_cast<double>(total);
  return label;
}

// The 60% majority rule: consistent iff the top vote fraction is >= 0.6
// (ties at exactly 60% count as consistent). The majority class is the
// argmax, unique whenever the threshold is met.
inline std::pair<bool, std::optional<int>> classify_consistency(
    const SoftLabel& label) {
  if (label.probs.empty()) return {false, std::nullopt};
  int top = label.argmax();
  bool consistent = label.probs[static_cast<size_t>(top)] >= 0.6;
  if (consistent) return {true, top};
  return {false, std::nullopt};
}

// ---------------------------------------------------------------------------
// Annotation records
// ---------------------------------------------------------------------------

// One person pair: two boxes plus raw vote counts per relationship class.
// soft_label / majority_label / is_consistent are derived from the votes and
// never serialized as ground truth of their own.
struct AnnotationRecord {
  std::string id;        // "<image_id>#<pair ordinal>"
  std::string image_id;
  BoundingBox box_1, box_2;
  std::vector<std::int64_t> votes;  // dense, taxonomy order
  std::int64_t unsure_count = 0;

  SoftLabel soft_label;
  std::optional<int> majority_label;
  bool is_consistent = false;

  std::int64_t total_votes() const {
    std::int64_t t = 0;
    for (std::int64_t v : votes) t += v;
    return t;
  }

  void recompute_derived() {
    soft_label = build_soft_label(votes);
    auto [consistent, majority] = classify_consistency(soft_label);
    is_consistent = consistent;
    majority_label = majority;
  }
};

// Clamp boxes to the image, reject degenerate ones, and recompute the
// derived label fields.
inline AnnotationRecord validate_record(AnnotationRecord record,
                                        double image_width,
                                        double image_height) {
  if (image_width <= 0 || image_height <= 0)
    throw DataError("non-positive image dimensions for " + record.image_id);
  record.box_1 = record.box_1.clamped(image_width, image_height);
  record.box_2 = record.box_2.clamped(image_width, image_height);
  if (!record.box_1.valid() || !record.box_2.valid())
    throw DegenerateBox("record " + record.id +
                        ": box has zero or negative extent after clamping");
  record.recompute_derived();
  return record;
}

}  // namespace dualglance
