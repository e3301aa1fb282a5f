// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dualglance/tensor.hpp"

namespace dualglance {

// View over one trainable scalar block; the optimizer and checkpoint code
// consume a flat list of these.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  std::int64_t count = 0;
};

inline void append_param(std::vector<ParamRef>& out, const std::string& name,
                         Tensor& value, Tensor& grad) {
  out.push_back(ParamRef{name, value.data.data(), grad.data.data(),
                         value.numel()});
}

// ---------------------------------------------------------------------------
// Layers (explicit forward/backward, caller keeps the forward inputs)
// ---------------------------------------------------------------------------

struct Linear {
  Tensor W, b;    // out x in, out
  Tensor gW, gb;

  Linear() = default;
  Linear(int in_dim, int out_dim)
      : W({out_dim, in_dim}), b({out_dim}), gW({out_dim, in_dim}),
        gb({out_dim}) {}

  int in_dim() const { return W.dim(1); }
  int out_dim() const { return W.dim(0); }

  void init_he(Rng& rng) {
    fill_normal(W, rng, std::sqrt(2.0 / in_dim()));
    b.zero();
  }

  std::vector<double> forward(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != in_dim())
      throw DimensionMismatch("linear input dim mismatch");
    std::vector<double> y(static_cast<size_t>(out_dim()));
    for (int o = 0; o < out_dim(); ++o) {
      double s = b.at(o);
      for (int i = 0; i < in_dim(); ++i) s += W.at(o, i) * x[static_cast<size_t>(i)];
      y[static_cast<size_t>(o)] = s;
    }
    return y;
  }

  // Accumulates gW/gb; writes input gradient into dx when non-null.
  void backward(const std::vector<double>& x, const std::vector<double>& dy,
                std::vector<double>* dx) {
    if (dx) dx->assign(x.size(), 0.0);
    for (int o = 0; o < out_dim(); ++o) {
      const double g = dy[static_cast<size_t>(o)];
      if (g == 0) continue;
      gb.at(o) += g;
      for (int i = 0; i < in_dim(); ++i) {
        gW.at(o, i) += g * x[static_cast<size_t>(i)];
        if (dx) (*dx)[static_cast<size_t>(i)] += g * W.at(o, i);
      }
    }
  }

  void zero_grad() {
    gW.zero();
    gb.zero();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    append_param(out, prefix + ".weight", W, gW);
    append_param(out, prefix + ".bias", b, gb);
  }
};

// 3x3 convolution, stride 1, configurable zero padding.
struct Conv2d {
  Tensor W, b;    // outC x inC x k x k, outC
  Tensor gW, gb;
  int pad = 1;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int padding)
      : W({out_channels, in_channels, kernel, kernel}), b({out_channels}),
        gW({out_channels, in_channels, kernel, kernel}), gb({out_channels}),
        pad(padding) {}

  int in_channels() const { return W.dim(1); }
  int out_channels() const { return W.dim(0); }
  int kernel() const { return W.dim(2); }

  void init_he(Rng& rng) {
    fill_normal(W, rng, std::sqrt(2.0 / (in_channels() * kernel() * kernel())));
    b.zero();
  }

  Tensor forward(const Tensor& x) const {
    const int h = x.dim(1), w = x.dim(2);
    const int oh = h + 2 * pad - kernel() + 1;
    const int ow = w + 2 * pad - kernel() + 1;
    Tensor y({out_channels(), oh, ow});
    for (int oc = 0; oc < out_channels(); ++oc) {
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = b.at(oc);
          for (int ic = 0; ic < in_channels(); ++ic)
            for (int ky = 0; ky < kernel(); ++ky) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kernel(); ++kx) {
                const int ix = ox + kx - pad;
                if (ix < 0 || ix >= w) continue;
                s += W.at(oc, ic, ky, kx) * x.at(ic, iy, ix);
              }
            }
          y.at(oc, oy, ox) = s;
        }
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy) {
    const int h = x.dim(1), w = x.dim(2);
    Tensor dx(x.shape);
    for (int oc = 0; oc < out_channels(); ++oc) {
      for (int oy = 0; oy < dy.dim(1); ++oy)
        for (int ox = 0; ox < dy.dim(2); ++ox) {
          const double g = dy.at(oc, oy, ox);
          if (g == 0) continue;
          gb.at(oc) += g;
          for (int ic = 0; ic < in_channels(); ++ic)
            for (int ky = 0; ky < kernel(); ++ky) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kernel(); ++kx) {
                const int ix = ox + kx - pad;
                if (ix < 0 || ix >= w) continue;
                gW.at(oc, ic, ky, kx) += g * x.at(ic, iy, ix);
                dx.at(ic, iy, ix) += g * W.at(oc, ic, ky, kx);
              }
            }
        }
    }
    return dx;
  }

  void zero_grad() {
    gW.zero();
    gb.zero();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    append_param(out, prefix + ".weight", W, gW);
    append_param(out, prefix + ".bias", b, gb);
  }
};

// 2x2 max pooling with stride 2. Input dims must be even; argmax is
// recomputed in backward.
struct MaxPool2 {
  Tensor forward(const Tensor& x) const {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
      throw DimensionMismatch("max pool expects even spatial dims");
    Tensor y({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h / 2; ++oy)
        for (int ox = 0; ox < w / 2; ++ox) {
          double best = x.at(ch, 2 * oy, 2 * ox);
          best = std::max(best, x.at(ch, 2 * oy, 2 * ox + 1));
          best = std::max(best, x.at(ch, 2 * oy + 1, 2 * ox));
          best = std::max(best, x.at(ch, 2 * oy + 1, 2 * ox + 1));
          y.at(ch, oy, ox) = best;
        }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy) const {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor dx(x.shape);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h / 2; ++oy)
        for (int ox = 0; ox < w / 2; ++ox) {
          int by = 2 * oy, bx = 2 * ox;
          for (int yy = 2 * oy; yy < 2 * oy + 2; ++yy)
            for (int xx = 2 * ox; xx < 2 * ox + 2; ++xx)
              if (x.at(ch, yy, xx) > x.at(ch, by, bx)) {
                by = yy;
                bx = xx;
              }
          dx.at(ch, by, bx) += dy.at(ch, oy, ox);
        }
    return dx;
  }
};

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0 ? v : 0.0;
  return y;
}

// Mask from the forward output (y > 0 iff pre-activation > 0).
inline Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (y.data[i] <= 0) dx.data[i] = 0.0;
  return dx;
}

inline std::vector<double> relu(const std::vector<double>& x) {
  std::vector<double> y = x;
  for (double& v : y) v = v > 0 ? v : 0.0;
  return y;
}

inline std::vector<double> relu_backward(const std::vector<double>& y,
                                         const std::vector<double>& dy) {
  std::vector<double> dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (y[i] <= 0) dx[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Plain SGD with momentum: v <- mu v - lr g; x <- x + v. Velocity buffers
// are keyed by parameter name so freezing or re-collecting params is safe.
struct SgdMomentum {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::map<std::string, std::vector<double>> velocity;

  void step(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) {
      auto& v = velocity[p.name];
      if (v.size() != static_cast<size_t>(p.count)) v.assign(static_cast<size_t>(p.count), 0.0);
      for (std::int64_t i = 0; i < p.count; ++i) {
        v[static_cast<size_t>(i)] =
            momentum * v[static_cast<size_t>(i)] - learning_rate * p.grad[i];
        p.value[i] += v[static_cast<size_t>(i)];
      }
    }
  }
};

inline void zero_grads(const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params)
    std::fill(p.grad, p.grad + p.count, 0.0);
}

// FNV-1a over the raw parameter bytes; used to verify stage-2 freezing.
inline std::uint64_t param_hash(const std::vector<ParamRef>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const unsigned char* bytes, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const ParamRef& p : params) {
    mix(reinterpret_cast<const unsigned char*>(p.name.data()), p.name.size());
    mix(reinterpret_cast<const unsigned char*>(p.value),
        sizeof(double) * static_cast<size_t>(p.count));
  }
  return h;
}

}  // namespace dualglance
