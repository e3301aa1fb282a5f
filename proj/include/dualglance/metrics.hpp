// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dualglance/core.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

// Non-interpolated AP: rank by descending score (ties keep the original
// order), sum precision at each positive hit, divide by the positive count.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<bool>& positives) {
  if (scores.size() != positives.size())
    throw LengthMismatch("scores/positives length mismatch");
  const std::int64_t total_positives =
      std::count(positives.begin(), positives.end(), true);
  if (total_positives == 0)
    throw NoPositives("average precision needs at least one positive");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](size_t a, size_t b) {
    return scores[a] > scores[b];
  });

  double ap = 0;
  std::int64_t hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (!positives[order[rank]]) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(total_positives);
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<double> per_class_ap;      // -1 marks classes absent from GT
  double map = 0;
  double accuracy = 0;
  std::vector<double> per_class_recall;  // -1 marks absent classes
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][prediction]
  std::int64_t num_samples = 0;
};

inline void to_json(json& j, const EvalResult& r) {
  j = json{{"per_class_ap", r.per_class_ap},
           {"map", r.map},
           {"accuracy", r.accuracy},
           {"per_class_recall", r.per_class_recall},
           {"confusion", r.confusion},
           {"num_samples", r.num_samples}};
}

inline void from_json(const json& j, EvalResult& r) {
  j.at("per_class_ap").get_to(r.per_class_ap);
  j.at("map").get_to(r.map);
  j.at("accuracy").get_to(r.accuracy);
  j.at("per_class_recall").get_to(r.per_class_recall);
  j.at("confusion").get_to(r.confusion);
  j.at("num_samples").get_to(r.num_samples);
}

// One-vs-rest AP per class (score = predicted probability of that class),
// argmax recall and confusion counts. Truths are consistent-majority hard
// labels; classes absent from the ground truth are skipped from the mAP
// mean and marked -1.
inline EvalResult evaluate(const std::vector<std::vector<double>>& predictions,
                           const std::vector<int>& truths, int num_classes) {
  if (predictions.size() != truths.size())
    throw LengthMismatch("predictions/truths length mismatch");
  EvalResult out;
  out.num_samples = static_cast<std::int64_t>(predictions.size());
  out.per_class_ap.assign(static_cast<size_t>(num_classes), -1.0);
  out.per_class_recall.assign(static_cast<size_t>(num_classes), -1.0);
  out.confusion.assign(static_cast<size_t>(num_classes),
                       std::vector<std::int64_t>(static_cast<size_t>(num_classes), 0));

  std::vector<std::int64_t> truth_count(static_cast<size_t>(num_classes), 0);
  std::vector<std::int64_t> correct(static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (static_cast<int>(p.size()) != num_classes)
      throw LengthMismatch("prediction vector has wrong class count");
    const int truth = truths[i];
    if (truth < 0 || truth >= num_classes)
      throw LengthMismatch("truth label out of range");
    const int pred = static_cast<int>(
        std::distance(p.begin(), std::max_element(p.begin(), p.end())));
    ++truth_count[static_cast<size_t>(truth)];
    if (pred == truth) ++correct[static_cast<size_t>(truth)];
    ++out.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)];
  }

  double ap_sum = 0;
  int ap_classes = 0;
  std::int64_t total_correct = 0;
  for (int r = 0; r < num_classes; ++r) {
    if (truth_count[static_cast<size_t>(r)] == 0) continue;
    std::vector<double> scores(predictions.size());
    std::vector<bool> positives(predictions.size());
    for (size_t i = 0; i < predictions.size(); ++i) {
      scores[i] = predictions[i][static_cast<size_t>(r)];
      positives[i] = truths[i] == r;
    }
    out.per_class_ap[static_cast<size_t>(r)] = average_precision(scores, positives);
    ap_sum += out.per_class_ap[static_cast<size_t>(r)];
    ++ap_classes;
    out.per_class_recall[static_cast<size_t>(r)] =
        static_cast<double>(correct[static_cast<size_t>(r)]) /
        static_cast<double>(truth_count[static_cast<size_t>(r)]);
    total_correct += correct[static_cast<size_t>(r)];
  }
  out.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  out.accuracy = out.num_samples > 0
                     ? static_cast<double>(total_correct) /
                           static_cast<double>(out.num_samples)
                     : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Annotation agreement
// ---------------------------------------------------------------------------

// Over consistent records whose majority equals the class: agreed votes
// divided by all votes.
inline double agreement_rate(const std::vector<AnnotationRecord>& records,
                             int class_index) {
  std::int64_t agreed = 0, total = 0;
  for (const AnnotationRecord& rec : records) {
    if (!rec.is_consistent || !rec.majority_label ||
        *rec.majority_label != class_index)
      continue;
    agreed += rec.votes[static_cast<size_t>(class_index)];
    total += rec.total_votes();
  }
  if (total == 0)
    throw NoRecords("no consistent records with majority class " +
                    std::to_string(class_index));
  return static_cast<double>(agreed) / static_cast<double>(total);
}

}  // namespace dualglance
