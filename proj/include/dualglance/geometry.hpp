// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dualglance/core.hpp"
#include "dualglance/tensor.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Region proposals
// ---------------------------------------------------------------------------

// Candidate contextual box with an objectness score in [0,1].
struct RegionProposal {
  BoundingBox box;
  double objectness = 0.0;
};

inline void to_json(json& j, const RegionProposal& p) {
  j = json{{"box", p.box}, {"objectness", p.objectness}};
}

inline void from_json(const json& j, RegionProposal& p) {
  j.at("box").get_to(p.box);
  j.at("objectness").get_to(p.objectness);
}

// ---------------------------------------------------------------------------
// Box arithmetic
// ---------------------------------------------------------------------------

// Intersection-over-Union on continuous box areas. Symmetric, in [0,1],
// 1 iff identical, 0 iff the interiors are disjoint.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// Tight box covering both inputs.
inline BoundingBox union_box(const BoundingBox& a, const BoundingBox& b) {
  return BoundingBox{std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min),
                     std::max(a.x_max, b.x_max), std::max(a.y_max, b.y_max)};
}

// Contextual-region selection: keep proposals whose IoU with both person
// boxes stays below tau_u, then the top m by descending objectness. Ties
// keep the input order. May return an empty list; the model falls back to
// the first-glance score in that case.
inline std::vector<RegionProposal> select_contextual_regions(
    const std::vector<RegionProposal>& proposals, const BoundingBox& b1,
    const BoundingBox& b2, double tau_u, int m) {
  std::vector<RegionProposal> kept;
  kept.reserve(proposals.size());
  for (const RegionProposal& c : proposals) {
    if (std::max(iou(c.box, b1), iou(c.box, b2)) < tau_u) kept.push_back(c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const RegionProposal& a, const RegionProposal& b) {
                     return a.objectness > b.objectness;
                   });
  if (static_cast<int>(kept.size()) > m) kept.resize(static_cast<size_t>(m));
  return kept;
}

// ---------------------------------------------------------------------------
// Geometry features
// ---------------------------------------------------------------------------

using GeometryFeature = std::array<double, 5>;

// Raw relative geometry feature: corner coordinates divided by image width
// and height, plus relative area.
inline GeometryFeature encode_geometry(const BoundingBox& box,
                                       double image_width,
                                       double image_height) {
  return GeometryFeature{box.x_min / image_width, box.y_min / image_height,
                         box.x_max / image_width, box.y_max / image_height,
                         box.area() / (image_width * image_height)};
}

// Per-dimension mean/std of the raw geometry features, fitted on the
// training split only and persisted with the model. Relative coordinates
// are applied first, standardization second.
struct GeometryNormStats {
  std::array<double, 5> mean{};
  std::array<double, 5> std{};

  static GeometryNormStats fit(const std::vector<GeometryFeature>& raw) {
    if (raw.empty()) throw EmptySplit("cannot fit geometry stats on no boxes");
    GeometryNormStats s;
    s.mean.fill(0.0);
    for (const auto& f : raw)
      for (size_t d = 0; d < 5; ++d) s.mean[d] += f[d];
    for (size_t d = 0; d < 5; ++d)
      s.mean[d] /= static_cast<double>(raw.size());
    std::array<double, 5> var{};
    for (const auto& f : raw)
      for (size_t d = 0; d < 5; ++d) {
        const double c = f[d] - s.mean[d];
        var[d] += c * c;
      }
    for (size_t d = 0; d < 5; ++d) {
      var[d] /= static_cast<double>(raw.size());
      // A constant dimension (e.g. all boxes span the full width) would be
      // zero; floor it so standardization stays defined.
      s.std[d] = std::max(std::sqrt(var[d]), 1e-9);
    }
    return s;
  }
};

inline void to_json(json& j, const GeometryNormStats& s) {
  j = json{{"mean", s.mean},
           {"std", s.std},
           {"order", "relative-coords-then-standardize"}};
}

inline void from_json(const json& j, GeometryNormStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.std);
}

inline GeometryFeature normalize_geometry(const GeometryFeature& raw,
                                          const GeometryNormStats& stats) {
  GeometryFeature out;
  for (size_t d = 0; d < 5; ++d) out[d] = (raw[d] - stats.mean[d]) / stats.std[d];
  return out;
}

inline GeometryFeature denormalize_geometry(const GeometryFeature& norm,
                                            const GeometryNormStats& stats) {
  GeometryFeature out;
  for (size_t d = 0; d < 5; ++d) out[d] = norm[d] * stats.std[d] + stats.mean[d];
  return out;
}

// ---------------------------------------------------------------------------
// Heuristic proposal source
// ---------------------------------------------------------------------------

// Sliding-window boxes scored by activation energy (mean absolute deviation
// from the image mean inside the window). Serves as the proposal source
// when no proposal file is given. Scores are normalized to [0,1].
inline std::vector<RegionProposal> heuristic_proposals(const Tensor& image,
                                                       int max_count) {
  if (image.shape.size() != 3)
    throw DimensionMismatch("heuristic_proposals expects a CxHxW image");
  const int channels = image.dim(0), height = image.dim(1),
            width = image.dim(2);
  double mean = 0;
  for (double v : image.data) mean += v;
  mean /= static_cast<double>(image.numel());

  std::vector<RegionProposal> out;
  const int base = std::min(height, width);
  for (int denom : {4, 3, 2}) {
    const int side = std::max(base / denom, 2);
    const int step = std::max(side / 2, 1);
    for (int y = 0; y + side <= height; y += step) {
      for (int x = 0; x + side <= width; x += step) {
        double energy = 0;
        for (int c = 0; c < channels; ++c)
          for (int yy = y; yy < y + side; ++yy)
            for (int xx = x; xx < x + side; ++xx)
              energy += std::abs(image.at(c, yy, xx) - mean);
        energy /= static_cast<double>(channels * side * side);
        out.push_back(RegionProposal{
            BoundingBox{static_cast<double>(x), static_cast<double>(y),
                        static_cast<double>(x + side),
                        static_cast<double>(y + side)},
            energy});
      }
    }
  }
  double peak = 0;
  for (const auto& p : out) peak = std::max(peak, p.objectness);
  if (peak > 0)
    for (auto& p : out) p.objectness /= peak;
  std::stable_sort(out.begin(), out.end(),
                   [](const RegionProposal& a, const RegionProposal& b) {
                     return a.objectness > b.objectness;
                   });
  if (static_cast<int>(out.size()) > max_count)
    out.resize(static_cast<size_t>(max_count));
  return out;
}

}  // namespace dualglance
