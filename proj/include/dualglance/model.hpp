// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dualglance/attention.hpp"
#include "dualglance/core.hpp"
#include "dualglance/geometry.hpp"
#include "dualglance/image.hpp"
#include "dualglance/losses.hpp"
#include "dualglance/nn.hpp"
#include "dualglance/tensor.hpp"
#include "dualglance/version.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Backbone configuration
// ---------------------------------------------------------------------------

enum class BackboneKind { toy_cnn, external };

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::toy_cnn ? "toy_cnn" : "external";
}

inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "toy_cnn") return BackboneKind::toy_cnn;
  if (s == "external") return BackboneKind::external;
  throw ConfigError("unknown backbone kind: " + s);
}

// The patch->vector and image->feature-map contracts. toy_cnn is a small
// trainable CNN fully specified here; `external` reserves the slot for
// full-scale weights loaded through the same interface.
struct BackboneSpec {
  BackboneKind kind = BackboneKind::toy_cnn;
  int output_channels = 8;
  int patch_size = 224;
  int feature_stride = 4;
};

inline void to_json(json& j, const BackboneSpec& b) {
  j = json{{"kind", to_string(b.kind)},
           {"output_channels", b.output_channels},
           {"patch_size", b.patch_size},
           {"feature_stride", b.feature_stride}};
}

inline void from_json(const json& j, BackboneSpec& b) {
  b.kind = backbone_kind_from_string(j.value("kind", std::string("toy_cnn")));
  b.output_channels = j.value("output_channels", 8);
  b.patch_size = j.value("patch_size", 224);
  b.feature_stride = j.value("feature_stride", 4);
}

// Resolved model dimensions. The toy backbones downsample by 4 (two pooled
// conv stages), so feature_stride is fixed.
struct ModelShape {
  int image_channels = 3;
  int patch_size = 16;
  int channels = 8;
  int feature_dim = 32;  // k: v_top and regional feature dimension
  int geo_hidden = 16;
  int roi_grid = 2;
  int num_classes = 5;

  static constexpr int kFeatureStride = 4;

  void validate() const {
    if (patch_size < 8 || patch_size % 4 != 0)
      throw ConfigError("patch_size must be a multiple of 4 and >= 8");
    if (channels < 1 || feature_dim < 1 || geo_hidden < 1 || roi_grid < 1)
      throw ConfigError("model dims must be positive");
    if (num_classes < 2) throw ConfigError("need at least two classes");
  }

  int patch_feature_dim() const {
    const int side = patch_size / kFeatureStride;
    return channels * side * side;
  }

  int region_pool_dim() const { return channels * roi_grid * roi_grid; }
};

inline void to_json(json& j, const ModelShape& s) {
  j = json{{"image_channels", s.image_channels},
           {"patch_size", s.patch_size},
           {"channels", s.channels},
           {"feature_dim", s.feature_dim},
           {"geo_hidden", s.geo_hidden},
           {"roi_grid", s.roi_grid},
           {"num_classes", s.num_classes}};
}

inline void from_json(const json& j, ModelShape& s) {
  s.image_channels = j.value("image_channels", 3);
  s.patch_size = j.value("patch_size", 16);
  s.channels = j.value("channels", 8);
  s.feature_dim = j.value("feature_dim", 32);
  s.geo_hidden = j.value("geo_hidden", 16);
  s.roi_grid = j.value("roi_grid", 2);
  s.num_classes = j.value("num_classes", 5);
  s.validate();
}

// ---------------------------------------------------------------------------
// Patch cropping
// ---------------------------------------------------------------------------

struct PatchTriple {
  Tensor p1, p2, p_union;
};

// Crop the two person patches and the tight union region, all resized to
// patch_size x patch_size.
inline PatchTriple crop_patches(const Tensor& image, const BoundingBox& b1,
                                const BoundingBox& b2, int patch_size) {
  PatchTriple out;
  out.p1 = crop_resize(image, b1, patch_size, patch_size);
  out.p2 = crop_resize(image, b2, patch_size, patch_size);
  out.p_union = crop_resize(image, union_box(b1, b2), patch_size, patch_size);
  return out;
}

// ---------------------------------------------------------------------------
// ROI pooling
// ---------------------------------------------------------------------------

struct RoiPoolResult {
  Tensor pooled;             // C x grid_h x grid_w
  std::vector<int> argmax;   // flat (y * mapW + x) per output cell
};

// Max pooling over quantized sub-windows of the feature map. The region is
// mapped into feature coordinates with floor/ceil quantization; empty bins
// take the nearest valid cell.
inline RoiPoolResult roi_pool_argmax(const Tensor& feature_map,
                                     const BoundingBox& region, int grid_h,
                                     int grid_w, int feature_stride) {
  const int channels = feature_map.dim(0);
  const int map_h = feature_map.dim(1), map_w = feature_map.dim(2);
  int x0 = static_cast<int>(std::floor(region.x_min / feature_stride));
  int x1 = static_cast<int>(std::ceil(region.x_max / feature_stride));
  int y0 = static_cast<int>(std::floor(region.y_min / feature_stride));
  int y1 = static_cast<int>(std::ceil(region.y_max / feature_stride));
  if (x1 <= 0 || y1 <= 0 || x0 >= map_w || y0 >= map_h)
    throw RegionOutsideMap("region maps outside the feature map");
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, map_w);
  y1 = std::min(y1, map_h);
  const int w = x1 - x0, h = y1 - y0;

  RoiPoolResult out;
  out.pooled = Tensor({channels, grid_h, grid_w});
  out.argmax.assign(static_cast<size_t>(channels) * grid_h * grid_w, 0);
  for (int gy = 0; gy < grid_h; ++gy) {
    int wy0 = y0 + static_cast<int>(std::floor(static_cast<double>(h) * gy / grid_h));
    int wy1 = y0 + static_cast<int>(std::ceil(static_cast<double>(h) * (gy + 1) / grid_h));
    if (wy0 >= wy1) {  // empty bin: nearest valid cell
      wy0 = std::clamp(wy0, y0, y1 - 1);
      wy1 = wy0 + 1;
    }
    for (int gx = 0; gx < grid_w; ++gx) {
      int wx0 = x0 + static_cast<int>(std::floor(static_cast<double>(w) * gx / grid_w));
      int wx1 = x0 + static_cast<int>(std::ceil(static_cast<double>(w) * (gx + 1) / grid_w));
      if (wx0 >= wx1) {
        wx0 = std::clamp(wx0, x0, x1 - 1);
        wx1 = wx0 + 1;
      }
      for (int c = 0; c < channels; ++c) {
        double best = feature_map.at(c, wy0, wx0);
        int best_y = wy0, best_x = wx0;
        for (int y = wy0; y < wy1; ++y)
          for (int x = wx0; x < wx1; ++x)
            if (feature_map.at(c, y, x) > best) {
              best = feature_map.at(c, y, x);
              best_y = y;
              best_x = x;
            }
        out.pooled.at(c, gy, gx) = best;
        out.argmax[(static_cast<size_t>(c) * grid_h + gy) * grid_w + gx] =
            best_y * map_w + best_x;
      }
    }
  }
  return out;
}

inline Tensor roi_pool(const Tensor& feature_map, const BoundingBox& region,
                       int grid_h, int grid_w, int feature_stride) {
  return roi_pool_argmax(feature_map, region, grid_h, grid_w, feature_stride)
      .pooled;
}

inline void roi_pool_backward(const RoiPoolResult& result, const Tensor& d_pooled,
                              Tensor& d_map) {
  const int map_w = d_map.dim(2);
  for (size_t i = 0; i < result.argmax.size(); ++i) {
    const int flat = result.argmax[i];
    const int y = flat / map_w, x = flat % map_w;
    const int c = static_cast<int>(i / (static_cast<size_t>(d_pooled.dim(1)) *
                                        d_pooled.dim(2)));
    d_map.at(c, y, x) += d_pooled.data[i];
  }
}

// ---------------------------------------------------------------------------
// Toy CNN backbones
// ---------------------------------------------------------------------------

// Two pooled 3x3 conv stages: spatial downsampling by 4.
struct ToyConvStack {
  Conv2d conv1, conv2;
  MaxPool2 pool;

  ToyConvStack() = default;
  ToyConvStack(int in_channels, int channels)
      : conv1(in_channels, channels, 3, 1), conv2(channels, channels, 3, 1) {}

  void init(Rng& rng) {
    conv1.init_he(rng);
    conv2.init_he(rng);
  }

  struct Cache {
    Tensor input, r1, q1, r2, q2;
  };

  Cache forward(const Tensor& x) const {
    Cache c;
    c.input = x;
    c.r1 = relu(conv1.forward(x));
    c.q1 = pool.forward(c.r1);
    c.r2 = relu(conv2.forward(c.q1));
    c.q2 = pool.forward(c.r2);
    return c;
  }

  void backward(const Cache& c, const Tensor& d_q2) {
    Tensor d_r2 = pool.backward(c.r2, d_q2);
    Tensor d_z2 = relu_backward(c.r2, d_r2);
    Tensor d_q1 = conv2.backward(c.q1, d_z2);
    Tensor d_r1 = pool.backward(c.r1, d_q1);
    Tensor d_z1 = relu_backward(c.r1, d_r1);
    conv1.backward(c.input, d_z1);  // input gradient unused
  }

  void zero_grad() {
    conv1.zero_grad();
    conv2.zero_grad();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    conv1.collect(out, prefix + ".conv1");
    conv2.collect(out, prefix + ".conv2");
  }
};

// ---------------------------------------------------------------------------
// First glance
// ---------------------------------------------------------------------------

struct FirstGlanceResult {
  ScoreVector s1;
  std::vector<double> v_top;
};

// Person/union patch towers plus box geometry: the p1 and p2 patches run
// through the same tower (identical parameter storage), the union patch has
// its own. Concat feeds two fc layers; the penultimate activation is the
// top-down signal v_top.
struct FirstGlance {
  ModelShape shape;
  ToyConvStack pair_tower, union_tower;
  Linear geo_fc, fc_top, fc_score;

  explicit FirstGlance(const ModelShape& s)
      : shape(s),
        pair_tower(s.image_channels, s.channels),
        union_tower(s.image_channels, s.channels),
        geo_fc(10, s.geo_hidden),
        fc_top(3 * s.patch_feature_dim() + s.geo_hidden, s.feature_dim),
        fc_score(s.feature_dim, s.num_classes) {}

  void init(Rng& rng) {
    pair_tower.init(rng);
    union_tower.init(rng);
    geo_fc.init_he(rng);
    fc_top.init_he(rng);
    fc_score.init_he(rng);
  }

  struct Cache {
    ToyConvStack::Cache p1, p2, pu;
    std::vector<double> geom, geo_out, concat, v_top, s1;
  };

  Cache forward(const PatchTriple& patches,
                const std::vector<double>& geom_pair) const {
    if (geom_pair.size() != 10)
      throw DimensionMismatch("geometry pair feature must have length 10");
    Cache c;
    c.geom = geom_pair;
    c.p1 = pair_tower.forward(patches.p1);
    c.p2 = pair_tower.forward(patches.p2);
    c.pu = union_tower.forward(patches.p_union);
    c.geo_out = relu(geo_fc.forward(geom_pair));
    c.concat.reserve(static_cast<size_t>(fc_top.in_dim()));
    c.concat.insert(c.concat.end(), c.p1.q2.data.begin(), c.p1.q2.data.end());
    c.concat.insert(c.concat.end(), c.p2.q2.data.begin(), c.p2.q2.data.end());
    c.concat.insert(c.concat.end(), c.pu.q2.data.begin(), c.pu.q2.data.end());
    c.concat.insert(c.concat.end(), c.geo_out.begin(), c.geo_out.end());
    c.v_top = relu(fc_top.forward(c.concat));
    c.s1 = fc_score.forward(c.v_top);
    return c;
  }

  FirstGlanceResult result(const Cache& c) const { return {c.s1, c.v_top}; }

  void backward(const Cache& c, const std::vector<double>& d_s1,
                const std::vector<double>* d_v_top_extra) {
    std::vector<double> d_v_top;
    fc_score.backward(c.v_top, d_s1, &d_v_top);
    if (d_v_top_extra) {
      for (size_t i = 0; i < d_v_top.size(); ++i)
        d_v_top[i] += (*d_v_top_extra)[i];
    }
    std::vector<double> d_pre = relu_backward(c.v_top, d_v_top);
    std::vector<double> d_concat;
    fc_top.backward(c.concat, d_pre, &d_concat);

    const size_t flat = static_cast<size_t>(shape.patch_feature_dim());
    auto slice_tensor = [&d_concat](size_t offset, const Tensor& like) {
      Tensor t(like.shape);
      std::copy(d_concat.begin() + static_cast<std::ptrdiff_t>(offset),
                d_concat.begin() + static_cast<std::ptrdiff_t>(offset + t.data.size()),
                t.data.begin());
      return t;
    };
    pair_tower.backward(c.p1, slice_tensor(0, c.p1.q2));
    pair_tower.backward(c.p2, slice_tensor(flat, c.p2.q2));
    union_tower.backward(c.pu, slice_tensor(2 * flat, c.pu.q2));

    std::vector<double> d_geo_out(d_concat.begin() + static_cast<std::ptrdiff_t>(3 * flat),
                                  d_concat.end());
    std::vector<double> d_geo_pre = relu_backward(c.geo_out, d_geo_out);
    geo_fc.backward(c.geom, d_geo_pre, nullptr);
  }

  void zero_grad() {
    pair_tower.zero_grad();
    union_tower.zero_grad();
    geo_fc.zero_grad();
    fc_top.zero_grad();
    fc_score.zero_grad();
  }

  void collect(std::vector<ParamRef>& out) {
    pair_tower.collect(out, "first_glance.pair_tower");
    union_tower.collect(out, "first_glance.union_tower");
    geo_fc.collect(out, "first_glance.geo_fc");
    fc_top.collect(out, "first_glance.fc_top");
    fc_score.collect(out, "first_glance.fc_score");
  }
};

// ---------------------------------------------------------------------------
// Second glance
// ---------------------------------------------------------------------------

struct SecondGlanceResult {
  ScoreVector s2;
  std::vector<double> attention;  // empty unless mode == attention
};

// Conv feature map + ROI pooling + fc projection into the regional bag,
// then the gated attention chain.
struct SecondGlance {
  ModelShape shape;
  ToyConvStack map_cnn;
  Linear fc_region;
  AttentionParams att, att_grads;

  explicit SecondGlance(const ModelShape& s)
      : shape(s),
        map_cnn(s.image_channels, s.channels),
        fc_region(s.region_pool_dim(), s.feature_dim),
        att(AttentionParams::zeros(s.num_classes, s.feature_dim)),
        att_grads(AttentionParams::zeros(s.num_classes, s.feature_dim)) {}

  void init(Rng& rng) {
    map_cnn.init(rng);
    fc_region.init_he(rng);
    fill_normal(att.W_s, rng, std::sqrt(2.0 / shape.feature_dim));
    fill_normal(att.w_top, rng, std::sqrt(1.0 / shape.feature_dim));
    fill_normal(att.W_ha, rng, std::sqrt(1.0 / shape.feature_dim));
    att.b_s.zero();
    att.b_a = 0.0;
  }

  struct Cache {
    ToyConvStack::Cache map;
    std::vector<RoiPoolResult> rois;
    std::vector<std::vector<double>> flats;   // pooled, flattened
    RegionBag bag;                            // v_i rows (post ReLU)
    AttentionChainState chain;
    AggregationMode mode = AggregationMode::attention;
  };

  Cache forward(const Tensor& image, const std::vector<RegionProposal>& regions,
                const std::vector<double>& v_top, AggregationMode mode) const {
    if (regions.empty())
      throw EmptyBag("second glance needs at least one contextual region");
    Cache c;
    c.mode = mode;
    c.map = map_cnn.forward(image);
    const int n = static_cast<int>(regions.size());
    Tensor features({n, shape.feature_dim});
    c.rois.reserve(regions.size());
    c.flats.reserve(regions.size());
    for (int i = 0; i < n; ++i) {
      RoiPoolResult roi =
          roi_pool_argmax(c.map.q2, regions[static_cast<size_t>(i)].box,
                          shape.roi_grid, shape.roi_grid, ModelShape::kFeatureStride);
      std::vector<double> flat = roi.pooled.data;
      std::vector<double> v = relu(fc_region.forward(flat));
      for (int j = 0; j < shape.feature_dim; ++j)
        features.at(i, j) = v[static_cast<size_t>(j)];
      c.rois.push_back(std::move(roi));
      c.flats.push_back(std::move(flat));
    }
    c.bag = RegionBag(std::move(features));
    c.chain = attention_chain_forward(c.bag, v_top, att, mode);
    return c;
  }

  SecondGlanceResult result(const Cache& c) const {
    return {c.chain.s2, c.chain.attention};
  }

  // Returns dL/dv_top for the caller (zeros unless mode == attention).
  std::vector<double> backward(const Cache& c, const std::vector<double>& v_top,
                               const ScoreVector& d_s2) {
    AttentionChainGrads g = attention_chain_backward(
        c.bag, v_top, att, c.mode, c.chain, d_s2, att_grads);
    Tensor d_map = zeros_like(c.map.q2);
    for (int i = 0; i < c.bag.size(); ++i) {
      std::vector<double> d_v(static_cast<size_t>(shape.feature_dim));
      std::vector<double> v(static_cast<size_t>(shape.feature_dim));
      for (int j = 0; j < shape.feature_dim; ++j) {
        d_v[static_cast<size_t>(j)] = g.d_features.at(i, j);
        v[static_cast<size_t>(j)] = c.bag.features.at(i, j);
      }
      std::vector<double> d_pre = relu_backward(v, d_v);
      std::vector<double> d_flat;
      fc_region.backward(c.flats[static_cast<size_t>(i)], d_pre, &d_flat);
      Tensor d_pooled({shape.channels, shape.roi_grid, shape.roi_grid});
      d_pooled.data = d_flat;
      roi_pool_backward(c.rois[static_cast<size_t>(i)], d_pooled, d_map);
    }
    map_cnn.backward(c.map, d_map);
    return g.d_v_top;
  }

  void zero_grad() {
    map_cnn.zero_grad();
    fc_region.zero_grad();
    att_grads.zero();
  }

  void collect(std::vector<ParamRef>& out) {
    map_cnn.collect(out, "second_glance.map_cnn");
    fc_region.collect(out, "second_glance.fc_region");
    append_param(out, "second_glance.attention.W_s", att.W_s, att_grads.W_s);
    append_param(out, "second_glance.attention.b_s", att.b_s, att_grads.b_s);
    append_param(out, "second_glance.attention.w_top", att.w_top,
                 att_grads.w_top);
    append_param(out, "second_glance.attention.W_ha", att.W_ha,
                 att_grads.W_ha);
    out.push_back(ParamRef{"second_glance.attention.b_a", &att.b_a,
                           &att_grads.b_a, 1});
  }
};

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

struct Prediction {
  ScoreVector scores;
  std::vector<double> probabilities;
};

// S = S1 + w * S2 elementwise; the score degrades to S1 when the region bag
// was empty. Probabilities via softmax.
inline Prediction fuse_and_predict(const ScoreVector& s1,
                                   const std::optional<ScoreVector>& s2,
                                   const Tensor& fusion_w) {
  Prediction out;
  out.scores = s1;
  if (s2) {
    if (s2->size() != s1.size() ||
        fusion_w.numel() != static_cast<std::int64_t>(s1.size()))
      throw DimensionMismatch("fusion score length mismatch");
    for (size_t r = 0; r < s1.size(); ++r)
      out.scores[r] += fusion_w.at(static_cast<int>(r)) * (*s2)[r];
  }
  if (!all_finite(out.scores))
    throw DivergenceDetected("non-finite scores out of the forward pass");
  out.probabilities = softmax(out.scores);
  return out;
}

// ---------------------------------------------------------------------------
// Dual-glance assembly
// ---------------------------------------------------------------------------

struct DualGlanceForward {
  ScoreVector s1;
  std::optional<ScoreVector> s2;
  ScoreVector fused;
  std::vector<double> probabilities;
  std::vector<double> attention;
  std::vector<double> v_top;
};

struct DualGlanceModel {
  ModelShape shape;
  FirstGlance first_glance;
  SecondGlance second_glance;
  Tensor fusion_w, fusion_w_grad;

  explicit DualGlanceModel(const ModelShape& s)
      : shape(s), first_glance(s), second_glance(s), fusion_w({s.num_classes}),
        fusion_w_grad({s.num_classes}) {
    s.validate();
    fusion_w.fill(1.0);
  }

  void init(Rng& rng) {
    first_glance.init(rng);
    second_glance.init(rng);
    fusion_w.fill(1.0);
  }

  struct Cache {
    FirstGlance::Cache fg;
    std::optional<SecondGlance::Cache> sg;
    AggregationMode mode = AggregationMode::attention;
  };

  // `regions` must already be filtered by the contextual-region rule.
  Cache forward_cache(const Tensor& image, const BoundingBox& b1,
                      const BoundingBox& b2,
                      const std::vector<RegionProposal>& regions,
                      const std::vector<double>& geom_pair,
                      AggregationMode mode) const {
    Cache c;
    c.mode = mode;
    PatchTriple patches = crop_patches(image, b1, b2, shape.patch_size);
    c.fg = first_glance.forward(patches, geom_pair);
    if (!regions.empty())
      c.sg = second_glance.forward(image, regions, c.fg.v_top, mode);
    return c;
  }

  DualGlanceForward result(const Cache& c) const {
    DualGlanceForward out;
    out.s1 = c.fg.s1;
    out.v_top = c.fg.v_top;
    if (c.sg) {
      SecondGlanceResult sg = second_glance.result(*c.sg);
      out.s2 = sg.s2;
      out.attention = sg.attention;
    }
    Prediction pred = fuse_and_predict(out.s1, out.s2, fusion_w);
    out.fused = pred.scores;
    out.probabilities = pred.probabilities;
    return out;
  }

  DualGlanceForward forward(const Tensor& image, const BoundingBox& b1,
                            const BoundingBox& b2,
                            const std::vector<RegionProposal>& regions,
                            const std::vector<double>& geom_pair,
                            AggregationMode mode) const {
    return result(forward_cache(image, b1, b2, regions, geom_pair, mode));
  }

  // d_fused is dL/dS. Stage-2 freezing skips the first-glance pass entirely
  // (and with it the v_top path, matching the frozen-stage-1 protocol).
  void backward(const Cache& c, const ScoreVector& d_fused,
                bool freeze_first_glance) {
    std::vector<double> d_v_top;
    std::vector<double> d_s1 = d_fused;
    if (c.sg) {
      const ScoreVector& s2 = c.sg->chain.s2;
      ScoreVector d_s2(d_fused.size());
      for (size_t r = 0; r < d_fused.size(); ++r) {
        const int ri = static_cast<int>(r);
        d_s2[r] = fusion_w.at(ri) * d_fused[r];
        fusion_w_grad.at(ri) += s2[r] * d_fused[r];
      }
      d_v_top = second_glance.backward(*c.sg, c.fg.v_top, d_s2);
    }
    if (freeze_first_glance) return;
    first_glance.backward(c.fg, d_s1, d_v_top.empty() ? nullptr : &d_v_top);
  }

  void zero_grad() {
    first_glance.zero_grad();
    second_glance.zero_grad();
    fusion_w_grad.zero();
  }

  std::vector<ParamRef> first_glance_params() {
    std::vector<ParamRef> out;
    first_glance.collect(out);
    return out;
  }

  std::vector<ParamRef> second_glance_params() {
    std::vector<ParamRef> out;
    second_glance.collect(out);
    append_param(out, "fusion.w", fusion_w, fusion_w_grad);
    return out;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out = first_glance_params();
    std::vector<ParamRef> sg = second_glance_params();
    out.insert(out.end(), sg.begin(), sg.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointSchema = 1;
inline constexpr char kCheckpointMagic[6] = {'D', 'G', 'C', 'K', 'P', 'T'};

// Everything needed to evaluate a checkpoint without the original config.
struct CheckpointMeta {
  std::string stage;  // "init" | "stage1" | "stage2"
  RelationshipTaxonomy taxonomy;
  GeometryNormStats geometry_stats;
  LossConfig loss;
  std::vector<double> alpha;
  ModelShape shape;
  AggregationMode aggregation = AggregationMode::attention;
  double tau_u = 0.7;
  int max_regions = 30;
  std::string config_hash;
};

inline void to_json(json& j, const CheckpointMeta& m) {
  j = json{{"stage", m.stage},
           {"taxonomy", m.taxonomy},
           {"geometry_stats", m.geometry_stats},
           {"loss", m.loss},
           {"alpha", m.alpha},
           {"shape", m.shape},
           {"aggregation", to_string(m.aggregation)},
           {"tau_u", m.tau_u},
           {"max_regions", m.max_regions},
           {"config_hash", m.config_hash}};
}

inline void from_json(const json& j, CheckpointMeta& m) {
  j.at("stage").get_to(m.stage);
  j.at("taxonomy").get_to(m.taxonomy);
  j.at("geometry_stats").get_to(m.geometry_stats);
  j.at("loss").get_to(m.loss);
  j.at("alpha").get_to(m.alpha);
  j.at("shape").get_to(m.shape);
  m.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  j.at("tau_u").get_to(m.tau_u);
  j.at("max_regions").get_to(m.max_regions);
  j.at("config_hash").get_to(m.config_hash);
}

inline void save_checkpoint(const std::string& path, DualGlanceModel& model,
                            const CheckpointMeta& meta) {
  std::vector<ParamRef> params = model.params();
  json header;
  header["schema"] = kCheckpointSchema;
  header["version"] = kVersion;
  header["meta"] = meta;
  json tensors = json::array();
  for (const ParamRef& p : params)
    tensors.push_back(json{{"name", p.name}, {"count", p.count}});
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t schema = kCheckpointSchema;
  out.write(reinterpret_cast<const char*>(&schema), sizeof(schema));
  const std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(len));
  for (const ParamRef& p : params)
    out.write(reinterpret_cast<const char*>(p.value),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.count)));
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  DualGlanceModel model;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IncompatibleCheckpoint(path + ": bad magic");
  std::uint32_t schema = 0;
  in.read(reinterpret_cast<char*>(&schema), sizeof(schema));
  if (schema != kCheckpointSchema)
    throw IncompatibleCheckpoint(path + ": unsupported schema " +
                                 std::to_string(schema));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw IncompatibleCheckpoint(path + ": truncated header");
  json header = json::parse(header_str);

  LoadedCheckpoint out{header.at("meta").get<CheckpointMeta>(),
                       DualGlanceModel(header.at("meta")
                                           .at("shape")
                                           .get<ModelShape>())};
  std::vector<ParamRef> params = out.model.params();
  size_t next = 0;
  for (const json& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::int64_t count = t.at("count").get<std::int64_t>();
    if (next >= params.size() || params[next].name != name ||
        params[next].count != count)
      throw IncompatibleCheckpoint(path + ": tensor layout mismatch at " + name);
    in.read(reinterpret_cast<char*>(params[next].value),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(count)));
    if (!in) throw IncompatibleCheckpoint(path + ": truncated tensor " + name);
    ++next;
  }
  if (next != params.size())
    throw IncompatibleCheckpoint(path + ": missing tensors");
  return out;
}

}  // namespace dualglance
