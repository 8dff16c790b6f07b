#include "labnn/conv_kernels.hpp"

#include <cblas.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace labnn {

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

namespace {

struct ConvDims {
  int64_t cin, cout, k, oh, ow, patch;  // patch = cin*k*k rows of the col matrix
  ConvGeom geom;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, const Padding& pad,
                   int64_t groups) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  LABNN_CHECK(ws.h == ws.w, "conv kernel must be square, got " + ws.str());
  LABNN_CHECK(groups >= 1 && xs.c % groups == 0 && ws.n % groups == 0,
              "conv groups must divide channel counts");
  LABNN_CHECK(ws.c == xs.c / groups,
              "conv channel mismatch: input " + xs.str() + " vs kernel " + ws.str());
  ConvDims d;
  d.cin = xs.c;
  d.cout = ws.n;
  d.k = ws.h;
  d.geom = conv_geometry(xs.h, xs.w, d.k, stride, pad);
  d.oh = d.geom.out_h;
  d.ow = d.geom.out_w;
  d.patch = (xs.c / groups) * d.k * d.k;
  return d;
}

// col has (cin/groups * k * k) rows by (oh * ow) columns, channels of one
// group contiguous in rows.
template <typename T>
void im2col(const T* x, const Shape4& xs, int64_t c0, int64_t c1, const ConvDims& d, int64_t stride,
            T pad_value, T* col) {
  const int64_t p = d.oh * d.ow;
  int64_t row = 0;
  for (int64_t c = c0; c < c1; ++c) {
    const T* xc = x + c * xs.h * xs.w;
    for (int64_t ky = 0; ky < d.k; ++ky) {
      for (int64_t kx = 0; kx < d.k; ++kx, ++row) {
        T* out = col + row * p;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * stride - d.geom.pad_top + ky;
          T* o = out + oy * d.ow;
          if (iy < 0 || iy >= xs.h) {
            for (int64_t ox = 0; ox < d.ow; ++ox) o[ox] = pad_value;
            continue;
          }
          const T* xr = xc + iy * xs.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * stride - d.geom.pad_left + kx;
            o[ox] = (ix >= 0 && ix < xs.w) ? xr[ix] : pad_value;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Shape4& xs, int64_t c0, int64_t c1, const ConvDims& d,
                int64_t stride, T* dx) {
  const int64_t p = d.oh * d.ow;
  int64_t row = 0;
  for (int64_t c = c0; c < c1; ++c) {
    T* xc = dx + c * xs.h * xs.w;
    for (int64_t ky = 0; ky < d.k; ++ky) {
      for (int64_t kx = 0; kx < d.k; ++kx, ++row) {
        const T* in = col + row * p;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * stride - d.geom.pad_top + ky;
          if (iy < 0 || iy >= xs.h) continue;
          T* xr = xc + iy * xs.w;
          const T* i = in + oy * d.ow;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * stride - d.geom.pad_left + kx;
            if (ix >= 0 && ix < xs.w) xr[ix] += i[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, const Padding& pad,
                     int64_t groups) {
  const ConvDims d = conv_dims(x, w, stride, pad, groups);
  const Shape4& xs = x.shape();
  Tensor<T> out({xs.n, d.cout, d.oh, d.ow});
  const int64_t p = d.oh * d.ow;
  const int64_t cg = d.cin / groups;   // input channels per group
  const int64_t mg = d.cout / groups;  // output channels per group
  const T pad_value = static_cast<T>(pad.value);

#pragma omp parallel
  {
    std::vector<T> col(static_cast<size_t>(d.patch * p));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* xn = x.data() + n * d.cin * xs.h * xs.w;
      T* on = out.data() + n * d.cout * p;
      for (int64_t g = 0; g < groups; ++g) {
        im2col(xn, xs, g * cg, (g + 1) * cg, d, stride, pad_value, col.data());
        gemm(false, false, mg, p, d.patch, T(1), w.data() + g * mg * d.patch, d.patch, col.data(),
             p, T(0), on + g * mg * p, p);
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout, int64_t stride,
                const Padding& pad, Tensor<T>* dx, Tensor<T>* dw, int64_t groups) {
  const ConvDims d = conv_dims(x, w, stride, pad, groups);
  const Shape4& xs = x.shape();
  LABNN_CHECK((dout.shape() == Shape4{xs.n, d.cout, d.oh, d.ow}), "conv2d_bwd: dout shape mismatch");
  const int64_t p = d.oh * d.ow;
  const int64_t cg = d.cin / groups;
  const int64_t mg = d.cout / groups;
  const T pad_value = static_cast<T>(pad.value);

  const int nthreads =
#ifdef _OPENMP
      threads();
#else
      1;
#endif
  // Per-thread weight-gradient buffers, reduced in thread order afterwards so
  // results are reproducible for a fixed thread count.
  std::vector<std::vector<T>> dw_acc;
  if (dw) dw_acc.assign(static_cast<size_t>(nthreads), std::vector<T>(static_cast<size_t>(w.count()), T(0)));

#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    std::vector<T> col(static_cast<size_t>(d.patch * p));
    std::vector<T> dcol(dx ? static_cast<size_t>(d.patch * p) : 0);
#pragma omp for schedule(static)
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* xn = x.data() + n * d.cin * xs.h * xs.w;
      const T* dn = dout.data() + n * d.cout * p;
      for (int64_t g = 0; g < groups; ++g) {
        if (dw) {
          im2col(xn, xs, g * cg, (g + 1) * cg, d, stride, pad_value, col.data());
          gemm(false, true, mg, d.patch, p, T(1), dn + g * mg * p, p, col.data(), p, T(1),
               dw_acc[static_cast<size_t>(tid)].data() + g * mg * d.patch, d.patch);
        }
        if (dx) {
          gemm(true, false, d.patch, p, mg, T(1), w.data() + g * mg * d.patch, d.patch,
               dn + g * mg * p, p, T(0), dcol.data(), p);
          col2im_add(dcol.data(), xs, g * cg, (g + 1) * cg, d, stride,
                     dx->data() + n * d.cin * xs.h * xs.w);
        }
      }
    }
  }
  if (dw) {
    for (int t = 0; t < nthreads; ++t) {
      const std::vector<T>& acc = dw_acc[static_cast<size_t>(t)];
      for (int64_t i = 0; i < w.count(); ++i) dw->data()[i] += acc[static_cast<size_t>(i)];
    }
  }
}

template <typename T>
Tensor<T> depthwise_fwd(const Tensor<T>& x, const Tensor<T>& w, int64_t mult, int64_t stride,
                        const Padding& pad, const Tensor<T>* bias) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  LABNN_CHECK(mult >= 1, "depthwise multiplier must be >= 1");
  LABNN_CHECK(ws.c == 1 && ws.h == ws.w, "depthwise kernel shape must be (mult*C, 1, k, k)");
  LABNN_CHECK(ws.n == mult * xs.c, "depthwise kernel count must be mult * C_in");
  if (bias) LABNN_CHECK(bias->count() == ws.n, "depthwise bias must have mult * C_in entries");
  const int64_t k = ws.h;
  const ConvGeom g = conv_geometry(xs.h, xs.w, k, stride, pad);
  Tensor<T> out({xs.n, ws.n, g.out_h, g.out_w});
  const T pad_value = static_cast<T>(pad.value);

#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < xs.n; ++n) {
    for (int64_t co = 0; co < ws.n; ++co) {
      const int64_t ci = co / mult;
      const T* xc = x.data() + (n * xs.c + ci) * xs.h * xs.w;
      const T* wc = w.data() + co * k * k;
      T* oc = out.data() + (n * ws.n + co) * g.out_h * g.out_w;
      const T b = bias ? bias->data()[co] : T(0);
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          T acc = b;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * stride - g.pad_top + ky;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * stride - g.pad_left + kx;
              const T v = (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w) ? xc[iy * xs.w + ix]
                                                                         : pad_value;
              acc += v * wc[ky * k + kx];
            }
          }
          oc[oy * g.out_w + ox] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
void depthwise_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout, int64_t mult,
                   int64_t stride, const Padding& pad, Tensor<T>* dx, Tensor<T>* dw,
                   Tensor<T>* dbias) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  const int64_t k = ws.h;
  const ConvGeom g = conv_geometry(xs.h, xs.w, k, stride, pad);
  LABNN_CHECK((dout.shape() == Shape4{xs.n, ws.n, g.out_h, g.out_w}),
              "depthwise_bwd: dout shape mismatch");

  if (dx) {
#pragma omp parallel for schedule(static) collapse(2)
    for (int64_t n = 0; n < xs.n; ++n) {
      for (int64_t ci = 0; ci < xs.c; ++ci) {
        T* dxc = dx->data() + (n * xs.c + ci) * xs.h * xs.w;
        for (int64_t m = 0; m < mult; ++m) {
          const int64_t co = ci * mult + m;
          const T* wc = w.data() + co * k * k;
          const T* dc = dout.data() + (n * ws.n + co) * g.out_h * g.out_w;
          for (int64_t oy = 0; oy < g.out_h; ++oy) {
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
              const T go = dc[oy * g.out_w + ox];
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * stride - g.pad_top + ky;
                if (iy < 0 || iy >= xs.h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t ix = ox * stride - g.pad_left + kx;
                  if (ix >= 0 && ix < xs.w) dxc[iy * xs.w + ix] += go * wc[ky * k + kx];
                }
              }
            }
          }
        }
      }
    }
  }

  if (dw || dbias) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < ws.n; ++co) {
      const int64_t ci = co / mult;
      T* dwc = dw ? dw->data() + co * k * k : nullptr;
      double bias_acc = 0.0;
      for (int64_t n = 0; n < xs.n; ++n) {
        const T* xc = x.data() + (n * xs.c + ci) * xs.h * xs.w;
        const T* dc = dout.data() + (n * ws.n + co) * g.out_h * g.out_w;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const T go = dc[oy * g.out_w + ox];
            bias_acc += static_cast<double>(go);
            if (!dwc) continue;
            for (int64_t ky = 0; ky < k; ++ky) {
              const int64_t iy = oy * stride - g.pad_top + ky;
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t ix = ox * stride - g.pad_left + kx;
                const T v = (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w)
                                ? xc[iy * xs.w + ix]
                                : static_cast<T>(pad.value);
                dwc[ky * k + kx] += go * v;
              }
            }
          }
        }
      }
      if (dbias) dbias->data()[co] += static_cast<T>(bias_acc);
    }
  }
}

#define LABNN_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d_fwd<T>(const Tensor<T>&, const Tensor<T>&, int64_t, const Padding&,  \
                                   int64_t);                                                      \
  template void conv2d_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t,     \
                              const Padding&, Tensor<T>*, Tensor<T>*, int64_t);                   \
  template Tensor<T> depthwise_fwd<T>(const Tensor<T>&, const Tensor<T>&, int64_t, int64_t,      \
                                      const Padding&, const Tensor<T>*);                          \
  template void depthwise_bwd<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t,  \
                                 int64_t, const Padding&, Tensor<T>*, Tensor<T>*, Tensor<T>*);

LABNN_INSTANTIATE(float)
LABNN_INSTANTIATE(double)
#undef LABNN_INSTANTIATE

}  // namespace labnn
