// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dualglance/core.hpp"

namespace dualglance {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class LossKind { cross_entropy, focal, kl_divergence, adaptive_focal };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "ce";
    case LossKind::focal: return "fl";
    case LossKind::kl_divergence: return "kl";
    case LossKind::adaptive_focal: return "adafl";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "ce" || s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "fl" || s == "focal") return LossKind::focal;
  if (s == "kl" || s == "kl_divergence") return LossKind::kl_divergence;
  if (s == "adafl" || s == "adaptive_focal") return LossKind::adaptive_focal;
  throw ConfigError("unknown loss kind: " + s);
}

inline double default_gamma(LossKind k) {
  switch (k) {
    case LossKind::focal: return 2.0;
    case LossKind::adaptive_focal: return 1.0;
    default: return 0.0;
  }
}

struct LossConfig {
  LossKind kind = LossKind::adaptive_focal;
  double gamma = 1.0;
  std::optional<std::vector<double>> alpha;  // per-class, absent = unweighted
  double epsilon = 1e-12;                    // log clamp

  static LossConfig make(LossKind k) {
    LossConfig c;
    c.kind = k;
    c.gamma = default_gamma(k);
    return c;
  }

  bool wants_soft_target() const {
    return kind == LossKind::kl_divergence || kind == LossKind::adaptive_focal;
  }
};

inline void to_json(json& j, const LossConfig& c) {
  j = json{{"kind", to_string(c.kind)},
           {"gamma", c.gamma},
           {"epsilon", c.epsilon}};
  if (c.alpha) j["alpha"] = *c.alpha;
}

inline void from_json(const json& j, LossConfig& c) {
  c.kind = loss_kind_from_string(j.at("kind").get<std::string>());
  c.gamma = j.value("gamma", default_gamma(c.kind));
  c.epsilon = j.value("epsilon", 1e-12);
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::vector<double>>();
  if (c.epsilon <= 0) throw ConfigError("loss epsilon must be positive");
  if (c.gamma < 0) throw ConfigError("loss gamma must be nonnegative");
}

// Total annotation count per class over a training split, used for the
// inverse-frequency class weights.
struct ClassFrequency {
  std::vector<std::int64_t> counts;
  double beta = 0.5;
};

// alpha_r = (min_r L_r / L_r)^beta; the rarest class gets weight 1.
inline std::vector<double> class_alpha(const ClassFrequency& freq) {
  if (freq.counts.empty()) throw ZeroCount("class frequencies are empty");
  std::int64_t lo = freq.counts[0];
  for (std::int64_t c : freq.counts) {
    if (c <= 0) throw ZeroCount("class with zero annotations cannot be weighted");
    lo = std::min(lo, c);
  }
  std::vector<double> alpha(freq.counts.size());
  for (size_t r = 0; r < freq.counts.size(); ++r)
    alpha[r] = std::pow(static_cast<double>(lo) /
                            static_cast<double>(freq.counts[r]),
                        freq.beta);
  return alpha;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const ScoreVector& scores) {
  if (scores.empty()) throw DimensionMismatch("softmax of empty score vector");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// ---------------------------------------------------------------------------
// Loss values
// ---------------------------------------------------------------------------

namespace detail {

inline double clamped_log(double p, double epsilon) {
  return std::log(std::max(p, epsilon));
}

inline double alpha_at(const std::optional<std::vector<double>>& alpha,
                       size_t r, size_t num_classes) {
  if (!alpha) return 1.0;
  if (alpha->size() != num_classes)
    throw DimensionMismatch("alpha length does not match class count");
  return (*alpha)[r];
}

inline void check_target_index(const std::vector<double>& p, int t) {
  if (t < 0 || static_cast<size_t>(t) >= p.size())
    throw MismatchedTarget("target class index out of range");
}

}  // namespace detail

inline double cross_entropy(const std::vector<double>& p, int t,
                            const std::optional<std::vector<double>>& alpha =
                                std::nullopt,
                            double epsilon = 1e-12) {
  detail::check_target_index(p, t);
  const double a = detail::alpha_at(alpha, static_cast<size_t>(t), p.size());
  return -a * detail::clamped_log(p[static_cast<size_t>(t)], epsilon);
}

inline double focal_loss(const std::vector<double>& p, int t, double gamma,
                         const std::optional<std::vector<double>>& alpha =
                             std::nullopt,
                         double epsilon = 1e-12) {
  detail::check_target_index(p, t);
  const double a = detail::alpha_at(alpha, static_cast<size_t>(t), p.size());
  const double pt = p[static_cast<size_t>(t)];
  return -a * std::pow(1.0 - pt, gamma) * detail::clamped_log(pt, epsilon);
}

// Per-class modulating factor max(p^y_r - p_r, 0)^gamma: a class already
// predicted at or above its annotation share contributes zero. At gamma = 0
// the factor degrades to the indicator [p^y_r > p_r], which keeps the
// "zero iff p_r >= p^y_r for all r" property.
inline double adaptive_focal_loss(const std::vector<double>& p,
                                  const SoftLabel& p_y, double gamma,
                                  const std::optional<std::vector<double>>&
                                      alpha = std::nullopt,
                                  double epsilon = 1e-12) {
  if (p.size() != p_y.probs.size())
    throw DimensionMismatch("prediction/label length mismatch");
  double loss = 0;
  for (size_t r = 0; r < p.size(); ++r) {
    const double margin = p_y.probs[r] - p[r];
    if (margin <= 0) continue;
    const double a = detail::alpha_at(alpha, r, p.size());
    loss -= a * std::pow(margin, gamma) * detail::clamped_log(p[r], epsilon);
  }
  return loss;
}

// KL(label || prediction) with the 0*log(0/.) = 0 convention. The optional
// alpha scales the per-class terms inside the sum.
inline double kl_divergence_loss(const std::vector<double>& p,
                                 const SoftLabel& p_y,
                                 const std::optional<std::vector<double>>&
                                     alpha = std::nullopt,
                                 double epsilon = 1e-12) {
  if (p.size() != p_y.probs.size())
    throw DimensionMismatch("prediction/label length mismatch");
  double loss = 0;
  for (size_t r = 0; r < p.size(); ++r) {
    const double py = p_y.probs[r];
    if (py <= 0) continue;
    const double a = detail::alpha_at(alpha, r, p.size());
    loss += a * py * (std::log(py) - detail::clamped_log(p[r], epsilon));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Unified value + analytical gradient w.r.t. pre-softmax scores
// ---------------------------------------------------------------------------

using LossTarget = std::variant<int, SoftLabel>;

namespace detail {

inline void check_target_kind(const LossConfig& config,
                              const LossTarget& target) {
  const bool soft = std::holds_alternative<SoftLabel>(target);
  if (config.wants_soft_target() && !soft)
    throw MismatchedTarget("loss " + to_string(config.kind) +
                           " needs a soft label target");
  if (!config.wants_soft_target() && soft)
    throw MismatchedTarget("loss " + to_string(config.kind) +
                           " needs a hard class index target");
}

// dL/dp for each loss. The clamp is differentiated consistently: where
// log(max(p,eps)) is flat, the corresponding term is zero.
inline std::vector<double> loss_grad_wrt_probs(const LossConfig& config,
                                               const std::vector<double>& p,
                                               const LossTarget& target) {
  const size_t R = p.size();
  std::vector<double> g(R, 0.0);
  const double eps = config.epsilon;
  switch (config.kind) {
    case LossKind::cross_entropy: {
      const int t = std::get<int>(target);
      check_target_index(p, t);
      const size_t ti = static_cast<size_t>(t);
      const double a = alpha_at(config.alpha, ti, R);
      if (p[ti] > eps) g[ti] = -a / p[ti];
      break;
    }
    case LossKind::focal: {
      const int t = std::get<int>(target);
      check_target_index(p, t);
      const size_t ti = static_cast<size_t>(t);
      const double a = alpha_at(config.alpha, ti, R);
      const double pt = p[ti];
      const double one_m = 1.0 - pt;
      const double lg = clamped_log(pt, eps);
      double grad = 0;
      if (config.gamma > 0)
        grad += config.gamma * std::pow(one_m, config.gamma - 1.0) * lg;
      if (pt > eps) grad -= std::pow(one_m, config.gamma) / pt;
      g[ti] = a * grad;
      break;
    }
    case LossKind::adaptive_focal: {
      const SoftLabel& p_y = std::get<SoftLabel>(target);
      if (p_y.probs.size() != R)
        throw DimensionMismatch("prediction/label length mismatch");
      for (size_t r = 0; r < R; ++r) {
        const double margin = p_y.probs[r] - p[r];
        if (margin <= 0) continue;  // subgradient 0 at the kink
        const double a = alpha_at(config.alpha, r, R);
        const double lg = clamped_log(p[r], eps);
        double grad = 0;
        if (config.gamma > 0)
          grad += config.gamma * std::pow(margin, config.gamma - 1.0) * lg;
        if (p[r] > eps) grad -= std::pow(margin, config.gamma) / p[r];
        g[r] = a * grad;
      }
      break;
    }
    case LossKind::kl_divergence: {
      const SoftLabel& p_y = std::get<SoftLabel>(target);
      if (p_y.probs.size() != R)
        throw DimensionMismatch("prediction/label length mismatch");
      for (size_t r = 0; r < R; ++r) {
        if (p_y.probs[r] <= 0 || p[r] <= eps) continue;
        const double a = alpha_at(config.alpha, r, R);
        g[r] = -a * p_y.probs[r] / p[r];
      }
      break;
    }
  }
  return g;
}

}  // namespace detail

inline double loss_value(const LossConfig& config, const ScoreVector& scores,
                         const LossTarget& target) {
  detail::check_target_kind(config, target);
  const std::vector<double> p = softmax(scores);
  switch (config.kind) {
    case LossKind::cross_entropy:
      return cross_entropy(p, std::get<int>(target), config.alpha,
                           config.epsilon);
    case LossKind::focal:
      return focal_loss(p, std::get<int>(target), config.gamma, config.alpha,
                        config.epsilon);
    case LossKind::adaptive_focal:
      return adaptive_focal_loss(p, std::get<SoftLabel>(target), config.gamma,
                                 config.alpha, config.epsilon);
    case LossKind::kl_divergence:
      return kl_divergence_loss(p, std::get<SoftLabel>(target), config.alpha,
                                config.epsilon);
  }
  throw ConfigError("unreachable loss kind");
}

// Exact gradient of the configured loss with respect to the pre-softmax
// scores, via dL/ds_j = p_j * (g_j - sum_i g_i p_i) with g = dL/dp.
inline std::vector<double> loss_gradient(const LossConfig& config,
                                         const ScoreVector& scores,
                                         const LossTarget& target) {
  detail::check_target_kind(config, target);
  const std::vector<double> p = softmax(scores);
  const std::vector<double> g = detail::loss_grad_wrt_probs(config, p, target);
  double inner = 0;
  for (size_t i = 0; i < p.size(); ++i) inner += g[i] * p[i];
  std::vector<double> ds(p.size());
  for (size_t j = 0; j < p.size(); ++j) ds[j] = p[j] * (g[j] - inner);
  return ds;
}

}  // namespace dualglance
