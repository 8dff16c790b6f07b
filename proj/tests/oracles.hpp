#pragma once

// Test-only reference implementations, kept independent of the library's
// compute paths: plain nested loops, no im2col, no GEMM, no bit tricks.

#include <cmath>
#include <functional>
#include <vector>

#include "labnn/common.hpp"
#include "labnn/tensor.hpp"

namespace labnn::oracle {

template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                       const Padding& pad, int64_t groups = 1) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  const int64_t k = ws.h;
  const ConvGeom g = conv_geometry(xs.h, xs.w, k, stride, pad);
  const int64_t cg = xs.c / groups;
  const int64_t mg = ws.n / groups;
  Tensor<T> out({xs.n, ws.n, g.out_h, g.out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    for (int64_t co = 0; co < ws.n; ++co) {
      const int64_t grp = co / mg;
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (int64_t ci = grp * cg; ci < (grp + 1) * cg; ++ci) {
            for (int64_t ky = 0; ky < k; ++ky) {
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride - g.pad_top + ky;
                const int64_t ix = ox * stride - g.pad_left + kx;
                const double v = (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w)
                                     ? static_cast<double>(x.at(n, ci, iy, ix))
                                     : pad.value;
                acc += v * static_cast<double>(w.at(co, ci - grp * cg, ky, kx));
              }
            }
          }
          out.at(n, co, oy, ox) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_naive(const Tensor<T>& x, const Tensor<T>& w, int64_t mult,
                          const Padding& pad, const std::vector<T>* bias = nullptr) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  const int64_t k = ws.h;
  const ConvGeom g = conv_geometry(xs.h, xs.w, k, 1, pad);
  Tensor<T> out({xs.n, ws.n, g.out_h, g.out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    for (int64_t co = 0; co < ws.n; ++co) {
      const int64_t ci = co / mult;
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[static_cast<size_t>(co)]) : 0.0;
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t iy = oy - g.pad_top + ky;
              const int64_t ix = ox - g.pad_left + kx;
              const double v = (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w)
                                   ? static_cast<double>(x.at(n, ci, iy, ix))
                                   : pad.value;
              acc += v * static_cast<double>(w.at(co, 0, ky, kx));
            }
          }
          out.at(n, co, oy, ox) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
void fill_random(Tensor<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (int64_t i = 0; i < t.count(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_pm1(Tensor<T>& t, Rng& rng) {
  for (int64_t i = 0; i < t.count(); ++i) t.data()[i] = rng.uniform() < 0.5 ? T(-1) : T(1);
}

// Central finite differences of a scalar function against an analytic
// gradient; relative error checked where |analytic| exceeds the floor.
struct FdReport {
  double max_rel = 0.0;
  int64_t checked = 0;
  int64_t skipped = 0;
};

inline FdReport fd_compare(double* params, const double* analytic, int64_t count,
                           const std::function<double()>& eval, double eps = 1e-3,
                           double floor = 1e-4) {
  FdReport rep;
  for (int64_t i = 0; i < count; ++i) {
    const double keep = params[i];
    params[i] = keep + eps;
    const double up = eval();
    params[i] = keep - eps;
    const double down = eval();
    params[i] = keep;
    const double fd = (up - down) / (2.0 * eps);
    if (std::abs(analytic[i]) <= floor && std::abs(fd) <= floor) {
      ++rep.skipped;
      continue;
    }
    const double denom = std::max(std::abs(analytic[i]), std::abs(fd));
    rep.max_rel = std::max(rep.max_rel, std::abs(analytic[i] - fd) / denom);
    ++rep.checked;
  }
  return rep;
}

}  // namespace labnn::oracle
