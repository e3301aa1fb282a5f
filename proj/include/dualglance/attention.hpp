// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualglance/core.hpp"
#include "dualglance/tensor.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

enum class AggregationMode { attention, avg, max };

inline std::string to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::attention: return "attention";
    case AggregationMode::avg: return "avg";
    case AggregationMode::max: return "max";
  }
  return "?";
}

inline AggregationMode aggregation_from_string(const std::string& s) {
  if (s == "attention") return AggregationMode::attention;
  if (s == "avg") return AggregationMode::avg;
  if (s == "max") return AggregationMode::max;
  throw ConfigError("unknown aggregation mode: " + s);
}

// Regional score head, top-down gate and attention head parameters. The
// same struct doubles as gradient storage.
struct AttentionParams {
  Tensor W_s;    // R x k
  Tensor b_s;    // R
  Tensor w_top;  // k
  Tensor W_ha;   // k
  double b_a = 0.0;

  static AttentionParams zeros(int num_classes, int feature_dim) {
    AttentionParams p;
    p.W_s = Tensor({num_classes, feature_dim});
    p.b_s = Tensor({num_classes});
    p.w_top = Tensor({feature_dim});
    p.W_ha = Tensor({feature_dim});
    return p;
  }

  int num_classes() const { return W_s.dim(0); }
  int feature_dim() const { return W_s.dim(1); }

  void zero() {
    W_s.zero();
    b_s.zero();
    w_top.zero();
    W_ha.zero();
    b_a = 0.0;
  }
};

// Bag of N regional feature vectors (N x k).
struct RegionBag {
  Tensor features;

  RegionBag() : features({0, 0}) {}
  explicit RegionBag(Tensor f) : features(std::move(f)) {
    if (features.shape.size() != 2)
      throw DimensionMismatch("region bag expects an N x k feature matrix");
  }

  int size() const { return features.dim(0); }
  int feature_dim() const { return features.dim(1); }
};

// ---------------------------------------------------------------------------
// Chain operations
// ---------------------------------------------------------------------------

// s_i = W_s v_i + b_s, one row per region.
inline Tensor regional_scores(const RegionBag& bag,
                              const AttentionParams& params) {
  const int n = bag.size();
  if (n == 0) throw EmptyBag("regional_scores on an empty bag");
  const int k = bag.feature_dim();
  if (k != params.feature_dim())
    throw DimensionMismatch("bag feature dim does not match score head");
  const int num_classes = params.num_classes();
  Tensor scores({n, num_classes});
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < num_classes; ++r) {
      double s = params.b_s.at(r);
      for (int j = 0; j < k; ++j)
        s += params.W_s.at(r, j) * bag.features.at(i, j);
      scores.at(i, r) = s;
    }
  return scores;
}

// h_i = ReLU(v_i + w_top * v_top), elementwise.
inline Tensor gated_features(const RegionBag& bag,
                             const std::vector<double>& v_top,
                             const Tensor& w_top) {
  const int n = bag.size();
  const int k = bag.feature_dim();
  if (static_cast<int>(v_top.size()) != k || w_top.numel() != k)
    throw DimensionMismatch("top-down signal dim does not match bag features");
  Tensor gated({n, k});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const double pre = bag.features.at(i, j) + w_top.at(j) * v_top[static_cast<size_t>(j)];
      gated.at(i, j) = pre > 0 ? pre : 0.0;
    }
  return gated;
}

// a_i = sigmoid(W_ha . h_i + b_a), strictly inside (0,1).
inline std::vector<double> attention_weights(const Tensor& gated,
                                             const Tensor& W_ha, double b_a) {
  if (gated.shape.size() != 2)
    throw DimensionMismatch("gated features must be N x k");
  const int n = gated.dim(0), k = gated.dim(1);
  if (n == 0) throw EmptyBag("attention_weights on an empty bag");
  if (W_ha.numel() != k)
    throw DimensionMismatch("attention head dim mismatch");
  std::vector<double> a(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double z = b_a;
    for (int j = 0; j < k; ++j) z += W_ha.at(j) * gated.at(i, j);
    a[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-z));
  }
  return a;
}

// Aggregate per-region scores into one score vector. attention and avg run
// through the same weighted accumulation (avg uses unit weights), so the
// unit-weight identity holds bitwise; both divide by N, not by the weight
// sum. max takes the per-class column maximum.
inline ScoreVector aggregate(const Tensor& scores,
                             const std::vector<double>& weights,
                             AggregationMode mode) {
  if (scores.shape.size() != 2)
    throw DimensionMismatch("scores must be N x R");
  const int n = scores.dim(0), num_classes = scores.dim(1);
  if (n == 0) throw EmptyBag("aggregate on an empty bag");
  ScoreVector out(static_cast<size_t>(num_classes), 0.0);
  if (mode == AggregationMode::max) {
    for (int r = 0; r < num_classes; ++r) {
      double best = scores.at(0, r);
      for (int i = 1; i < n; ++i) best = std::max(best, scores.at(i, r));
      out[static_cast<size_t>(r)] = best;
    }
    return out;
  }
  if (mode == AggregationMode::attention &&
      static_cast<int>(weights.size()) != n)
    throw DimensionMismatch("one attention weight per region required");
  for (int i = 0; i < n; ++i) {
    const double w =
        mode == AggregationMode::attention ? weights[static_cast<size_t>(i)] : 1.0;
    for (int r = 0; r < num_classes; ++r)
      out[static_cast<size_t>(r)] += w * scores.at(i, r);
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Full chain with backward
// ---------------------------------------------------------------------------

// Forward state of the regional scoring + gated attention chain, kept so the
// backward pass can reuse intermediates.
struct AttentionChainState {
  Tensor scores;                  // N x R
  Tensor gated;                   // N x k
  std::vector<double> attention;  // N, empty unless mode == attention
  ScoreVector s2;                 // R
  std::vector<int> max_row;       // per class argmax, mode == max only
};

inline AttentionChainState attention_chain_forward(
    const RegionBag& bag, const std::vector<double>& v_top,
    const AttentionParams& params, AggregationMode mode) {
  AttentionChainState st;
  st.scores = regional_scores(bag, params);
  if (mode == AggregationMode::attention) {
    st.gated = gated_features(bag, v_top, params.w_top);
    st.attention = attention_weights(st.gated, params.W_ha, params.b_a);
  }
  st.s2 = aggregate(st.scores, st.attention, mode);
  if (mode == AggregationMode::max) {
    const int n = st.scores.dim(0), num_classes = st.scores.dim(1);
    st.max_row.assign(static_cast<size_t>(num_classes), 0);
    for (int r = 0; r < num_classes; ++r)
      for (int i = 1; i < n; ++i)
        if (st.scores.at(i, r) > st.scores.at(st.max_row[static_cast<size_t>(r)], r))
          st.max_row[static_cast<size_t>(r)] = i;
  }
  return st;
}

struct AttentionChainGrads {
  Tensor d_features;           // N x k
  std::vector<double> d_v_top; // k
};

// Backprop d_s2 through the score/gate/attention/aggregation chain.
// Parameter gradients accumulate into `param_grads` (same layout as
// AttentionParams); returns gradients for the bag features and the
// top-down signal.
inline AttentionChainGrads attention_chain_backward(
    const RegionBag& bag, const std::vector<double>& v_top,
    const AttentionParams& params, AggregationMode mode,
    const AttentionChainState& st, const ScoreVector& d_s2,
    AttentionParams& param_grads) {
  const int n = bag.size();
  const int k = bag.feature_dim();
  const int num_classes = params.num_classes();
  const double inv_n = 1.0 / static_cast<double>(n);

  AttentionChainGrads grads;
  grads.d_features = Tensor({n, k});
  grads.d_v_top.assign(static_cast<size_t>(k), 0.0);

  // dL/ds_i rows from the aggregation.
  Tensor d_scores({n, num_classes});
  if (mode == AggregationMode::max) {
    for (int r = 0; r < num_classes; ++r)
      d_scores.at(st.max_row[static_cast<size_t>(r)], r) +=
          d_s2[static_cast<size_t>(r)];
  } else {
    for (int i = 0; i < n; ++i) {
      const double w = mode == AggregationMode::attention
                           ? st.attention[static_cast<size_t>(i)]
                           : 1.0;
      for (int r = 0; r < num_classes; ++r)
        d_scores.at(i, r) = inv_n * w * d_s2[static_cast<size_t>(r)];
    }
  }

  // Score head: s_i = W_s v_i + b_s.
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < num_classes; ++r) {
      const double g = d_scores.at(i, r);
      if (g == 0) continue;
      param_grads.b_s.at(r) += g;
      for (int j = 0; j < k; ++j) {
        param_grads.W_s.at(r, j) += g * bag.features.at(i, j);
        grads.d_features.at(i, j) += g * params.W_s.at(r, j);
      }
    }

  if (mode != AggregationMode::attention) return grads;

  // Attention path: a_i = sigmoid(W_ha . h_i + b_a), h_i = ReLU(pre_i).
  for (int i = 0; i < n; ++i) {
    double d_a = 0;
    for (int r = 0; r < num_classes; ++r)
      d_a += inv_n * st.scores.at(i, r) * d_s2[static_cast<size_t>(r)];
    const double a = st.attention[static_cast<size_t>(i)];
    const double d_z = d_a * a * (1.0 - a);
    param_grads.b_a += d_z;
    for (int j = 0; j < k; ++j) {
      const double h = st.gated.at(i, j);
      param_grads.W_ha.at(j) += d_z * h;
      if (h > 0) {  // ReLU mask
        const double d_pre = d_z * params.W_ha.at(j);
        grads.d_features.at(i, j) += d_pre;
        param_grads.w_top.at(j) += d_pre * v_top[static_cast<size_t>(j)];
        grads.d_v_top[static_cast<size_t>(j)] += d_pre * params.w_top.at(j);
      }
    }
  }
  return grads;
}

}  // namespace dualglance
