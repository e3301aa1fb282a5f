// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dualglance/core.hpp"

namespace dualglance {

using Rng = std::mt19937_64;

// Dense row-major tensor of doubles. Small and owning; desk scale does not
// need views or strides.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  double at(int i) const { return data[static_cast<size_t>(i)]; }

  double& at(int i, int j) {
    return data[static_cast<size_t>(i) * shape[1] + j];
  }
  double at(int i, int j) const {
    return data[static_cast<size_t>(i) * shape[1] + j];
  }

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  double& at(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }
  double at(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const { return all_finite(data); }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline void fill_normal(Tensor& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
}

inline void axpy(double a, const Tensor& x, Tensor& y) {
  assert(x.data.size() == y.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] += a * x.data[i];
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace dualglance
