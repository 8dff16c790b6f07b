#include "labnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace labnn {

namespace {

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
int conv2d(Tape<T>& t, int x, int w, int64_t stride, Padding pad, int64_t groups,
           std::string tag) {
  Tensor<T> out = conv2d_fwd(t.val(x), t.val(w), stride, pad, groups);
  return t.make(std::move(out), {x, w},
                [x, w, stride, pad, groups](Tape<T>& tp, int id) {
                  Tensor<T>& g = tp.val(id);
                  // conv2d_bwd wants the upstream gradient as tensor data.
                  Tensor<T> dout(g.shape());
                  std::copy(g.grad(), g.grad() + g.count(), dout.data());
                  Tensor<T> dx(tp.val(x).shape());
                  Tensor<T> dw(tp.val(w).shape());
                  conv2d_bwd(tp.val(x), tp.val(w), dout, stride, pad, &dx, &dw, groups);
                  T* gx = tp.grad(x);
                  for (int64_t i = 0; i < dx.count(); ++i) gx[i] += dx.data()[i];
                  T* gw = tp.grad(w);
                  for (int64_t i = 0; i < dw.count(); ++i) gw[i] += dw.data()[i];
                },
                std::move(tag));
}

template <typename T>
int depthwise_conv2d(Tape<T>& t, int x, int w, int bias, int64_t mult, Padding pad,
                     std::string tag) {
  const Tensor<T>* b = bias >= 0 ? &t.val(bias) : nullptr;
  Tensor<T> out = depthwise_fwd(t.val(x), t.val(w), mult, 1, pad, b);
  std::vector<int> parents = {x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.make(std::move(out), std::move(parents),
                [x, w, bias, mult, pad](Tape<T>& tp, int id) {
                  Tensor<T>& g = tp.val(id);
                  Tensor<T> dout(g.shape());
                  std::copy(g.grad(), g.grad() + g.count(), dout.data());
                  Tensor<T> dx(tp.val(x).shape());
                  Tensor<T> dw(tp.val(w).shape());
                  Tensor<T> db(bias >= 0 ? tp.val(bias).shape() : Shape4{1, 1, 1, 1});
                  depthwise_bwd(tp.val(x), tp.val(w), dout, mult, 1, pad, &dx, &dw,
                                bias >= 0 ? &db : nullptr);
                  T* gx = tp.grad(x);
                  for (int64_t i = 0; i < dx.count(); ++i) gx[i] += dx.data()[i];
                  T* gw = tp.grad(w);
                  for (int64_t i = 0; i < dw.count(); ++i) gw[i] += dw.data()[i];
                  if (bias >= 0) {
                    T* gb = tp.grad(bias);
                    for (int64_t i = 0; i < db.count(); ++i) gb[i] += db.data()[i];
                  }
                },
                std::move(tag));
}

template <typename T>
int batchnorm_train(Tape<T>& t, int x, int gamma, int beta, std::type_identity_t<BnState<T>*> state, bool update_running,
                    std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  LABNN_CHECK(s.n >= 2, "training-mode batchnorm needs batch size >= 2");
  LABNN_CHECK(t.val(gamma).count() == s.c && t.val(beta).count() == s.c,
              "batchnorm affine params must have C entries");
  const int64_t plane = s.h * s.w;
  const int64_t m = s.n * plane;
  const double eps = state ? state->eps : 1e-5;

  auto xhat = std::make_shared<Tensor<T>>(s);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(s.c));
  Tensor<T> out(s);

  const T* gam = t.val(gamma).data();
  const T* bet = t.val(beta).data();
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(m);
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(c)] = static_cast<T>(istd);
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      T* ph = xhat->data() + (n * s.c + c) * plane;
      T* po = out.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        ph[i] = static_cast<T>((p[i] - mean) * istd);
        po[i] = gam[c] * ph[i] + bet[c];
      }
    }
    if (state && update_running) {
      const double mom = state->momentum;
      T& rm = state->running_mean.data()[c];
      T& rv = state->running_var.data()[c];
      rm = static_cast<T>((1.0 - mom) * rm + mom * mean);
      rv = static_cast<T>((1.0 - mom) * rv + mom * var);
    }
  }

  return t.make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, plane, m](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  const T* gam = tp.val(gamma).data();
                  T* gx = tp.grad(x);
                  T* ggam = tp.grad(gamma);
                  T* gbet = tp.grad(beta);
#pragma omp parallel for schedule(static)
                  for (int64_t c = 0; c < s.c; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int64_t n = 0; n < s.n; ++n) {
                      const int64_t off = (n * s.c + c) * plane;
                      for (int64_t i = 0; i < plane; ++i) {
                        sum_g += g[off + i];
                        sum_gx += static_cast<double>(g[off + i]) * xhat->data()[off + i];
                      }
                    }
                    ggam[c] += static_cast<T>(sum_gx);
                    gbet[c] += static_cast<T>(sum_g);
                    const double mg = sum_g / static_cast<double>(m);
                    const double mgx = sum_gx / static_cast<double>(m);
                    const double k = gam[c] * (*inv_std)[static_cast<size_t>(c)];
                    for (int64_t n = 0; n < s.n; ++n) {
                      const int64_t off = (n * s.c + c) * plane;
                      for (int64_t i = 0; i < plane; ++i) {
                        gx[off + i] += static_cast<T>(
                            k * (g[off + i] - mg - xhat->data()[off + i] * mgx));
                      }
                    }
                  }
                },
                std::move(tag));
}

template <typename T>
int prelu(Tape<T>& t, int x, int slope, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  LABNN_CHECK(t.val(slope).count() == s.c, "prelu slope must have C entries");
  Tensor<T> out(s);
  const T* a = t.val(slope).data();
  const int64_t plane = s.h * s.w;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      T* o = out.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) o[i] = p[i] > T(0) ? p[i] : a[c] * p[i];
    }
  }
  return t.make(std::move(out), {x, slope},
                [x, slope, plane](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  const T* xd = tp.val(x).data();
                  const T* a = tp.val(slope).data();
                  T* gx = tp.grad(x);
                  T* ga = tp.grad(slope);
#pragma omp parallel for schedule(static)
                  for (int64_t c = 0; c < s.c; ++c) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < s.n; ++n) {
                      const int64_t off = (n * s.c + c) * plane;
                      for (int64_t i = 0; i < plane; ++i) {
                        const T xi = xd[off + i];
                        if (xi > T(0)) {
                          gx[off + i] += g[off + i];
                        } else {
                          gx[off + i] += a[c] * g[off + i];
                          acc += static_cast<double>(g[off + i]) * xi;
                        }
                      }
                    }
                    ga[c] += static_cast<T>(acc);
                  }
                },
                std::move(tag));
}

template <typename T>
int maxpool2x2(Tape<T>& t, int x, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  LABNN_CHECK(s.h >= 2 && s.w >= 2, "maxpool2x2 needs H, W >= 2");
  const Shape4 os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  auto arg = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(os.count()));
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.data() + (n * s.c + c) * s.h * s.w;
      T* o = out.data() + (n * os.c + c) * os.h * os.w;
      uint8_t* am = arg->data() + (n * os.c + c) * os.h * os.w;
      for (int64_t oy = 0; oy < os.h; ++oy) {
        for (int64_t ox = 0; ox < os.w; ++ox) {
          T best = p[(2 * oy) * s.w + 2 * ox];
          uint8_t bi = 0;
          for (uint8_t j = 1; j < 4; ++j) {
            const T v = p[(2 * oy + j / 2) * s.w + 2 * ox + j % 2];
            if (v > best) {
              best = v;
              bi = j;
            }
          }
          o[oy * os.w + ox] = best;
          am[oy * os.w + ox] = bi;
        }
      }
    }
  }
  return t.make(std::move(out), {x},
                [x, arg, os](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  T* gx = tp.grad(x);
#pragma omp parallel for schedule(static) collapse(2)
                  for (int64_t n = 0; n < s.n; ++n) {
                    for (int64_t c = 0; c < s.c; ++c) {
                      const int64_t xoff = (n * s.c + c) * s.h * s.w;
                      const int64_t ooff = (n * os.c + c) * os.h * os.w;
                      for (int64_t oy = 0; oy < os.h; ++oy) {
                        for (int64_t ox = 0; ox < os.w; ++ox) {
                          const uint8_t j = (*arg)[static_cast<size_t>(ooff + oy * os.w + ox)];
                          gx[xoff + (2 * oy + j / 2) * s.w + 2 * ox + j % 2] +=
                              g[ooff + oy * os.w + ox];
                        }
                      }
                    }
                  }
                },
                std::move(tag));
}

// Ceil semantics: odd trailing rows/cols average over the partial window, so
// the output size matches a stride-2 SAME convolution.
template <typename T>
int avgpool2x2(Tape<T>& t, int x, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  LABNN_CHECK(s.h >= 2 && s.w >= 2, "avgpool2x2 needs H, W >= 2");
  const Shape4 os{s.n, s.c, (s.h + 1) / 2, (s.w + 1) / 2};
  Tensor<T> out(os);
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.data() + (n * s.c + c) * s.h * s.w;
      T* o = out.data() + (n * os.c + c) * os.h * os.w;
      for (int64_t oy = 0; oy < os.h; ++oy) {
        for (int64_t ox = 0; ox < os.w; ++ox) {
          const int64_t hh = std::min<int64_t>(2, s.h - 2 * oy);
          const int64_t ww = std::min<int64_t>(2, s.w - 2 * ox);
          T acc = T(0);
          for (int64_t dy = 0; dy < hh; ++dy)
            for (int64_t dx = 0; dx < ww; ++dx) acc += p[(2 * oy + dy) * s.w + 2 * ox + dx];
          o[oy * os.w + ox] = acc / static_cast<T>(hh * ww);
        }
      }
    }
  }
  return t.make(std::move(out), {x},
                [x, os](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  T* gx = tp.grad(x);
#pragma omp parallel for schedule(static) collapse(2)
                  for (int64_t n = 0; n < s.n; ++n) {
                    for (int64_t c = 0; c < s.c; ++c) {
                      const int64_t xoff = (n * s.c + c) * s.h * s.w;
                      const int64_t ooff = (n * os.c + c) * os.h * os.w;
                      for (int64_t oy = 0; oy < os.h; ++oy) {
                        for (int64_t ox = 0; ox < os.w; ++ox) {
                          const int64_t hh = std::min<int64_t>(2, s.h - 2 * oy);
                          const int64_t ww = std::min<int64_t>(2, s.w - 2 * ox);
                          const T gq = g[ooff + oy * os.w + ox] / static_cast<T>(hh * ww);
                          for (int64_t dy = 0; dy < hh; ++dy)
                            for (int64_t dx = 0; dx < ww; ++dx)
                              gx[xoff + (2 * oy + dy) * s.w + 2 * ox + dx] += gq;
                        }
                      }
                    }
                  }
                },
                std::move(tag));
}

template <typename T>
int global_avg_pool(Tape<T>& t, int x, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  const int64_t plane = s.h * s.w;
  Tensor<T> out({s.n, s.c, 1, 1});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.data() + (n * s.c + c) * plane;
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      out.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
    }
  }
  return t.make(std::move(out), {x},
                [x, plane](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  T* gx = tp.grad(x);
                  for (int64_t n = 0; n < s.n; ++n) {
                    for (int64_t c = 0; c < s.c; ++c) {
                      const T gv = g[n * s.c + c] / static_cast<T>(plane);
                      T* gp = gx + (n * s.c + c) * plane;
                      for (int64_t i = 0; i < plane; ++i) gp[i] += gv;
                    }
                  }
                },
                std::move(tag));
}

template <typename T>
int dense(Tape<T>& t, int x, int w, int bias, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  const Shape4& s = xv.shape();
  const int64_t f = s.c * s.h * s.w;
  const int64_t k = wv.shape().n;
  LABNN_CHECK(wv.shape().c == f && wv.shape().h == 1 && wv.shape().w == 1,
              "dense weight must be (K, F, 1, 1) with F = C*H*W of input");
  if (bias >= 0) LABNN_CHECK(t.val(bias).count() == k, "dense bias must have K entries");

  Tensor<T> out({s.n, k, 1, 1});
  gemm(false, true, s.n, k, f, T(1), xv.data(), f, wv.data(), f, T(0), out.data(), k);
  if (bias >= 0) {
    const T* b = t.val(bias).data();
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t j = 0; j < k; ++j) out.data()[n * k + j] += b[j];
  }
  std::vector<int> parents = {x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.make(std::move(out), std::move(parents),
                [x, w, bias, f, k](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(x).shape();
                  const T* g = tp.val(id).grad();
                  gemm(false, false, s.n, f, k, T(1), g, k, tp.val(w).data(), f, T(1), tp.grad(x),
                       f);
                  gemm(true, false, k, f, s.n, T(1), g, k, tp.val(x).data(), f, T(1), tp.grad(w),
                       f);
                  if (bias >= 0) {
                    T* gb = tp.grad(bias);
                    for (int64_t n = 0; n < s.n; ++n)
                      for (int64_t j = 0; j < k; ++j) gb[j] += g[n * k + j];
                  }
                },
                std::move(tag));
}

template <typename T>
int softmax_cross_entropy(Tape<T>& t, int logits, const std::vector<int>& labels,
                          std::string tag) {
  const Tensor<T>& lv = t.val(logits);
  const Shape4& s = lv.shape();
  LABNN_CHECK(s.h == 1 && s.w == 1, "softmax_cross_entropy expects (N, K, 1, 1) logits");
  LABNN_CHECK(static_cast<int64_t>(labels.size()) == s.n, "labels must match batch size");
  const int64_t k = s.c;
  auto probs = std::make_shared<Tensor<T>>(Shape4{s.n, k, 1, 1});
  double loss = 0.0;
  for (int64_t n = 0; n < s.n; ++n) {
    LABNN_CHECK(labels[static_cast<size_t>(n)] >= 0 && labels[static_cast<size_t>(n)] < k,
                "label out of range");
    const T* z = lv.data() + n * k;
    T* p = probs->data() + n * k;
    T zmax = z[0];
    for (int64_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    const double log_denom = std::log(denom);
    for (int64_t j = 0; j < k; ++j) {
      p[j] = static_cast<T>(std::exp(static_cast<double>(z[j] - zmax)) / denom);
    }
    loss += log_denom - static_cast<double>(z[labels[static_cast<size_t>(n)]] - zmax);
  }
  Tensor<T> out({1, 1, 1, 1});
  out.data()[0] = static_cast<T>(loss / static_cast<double>(s.n));
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return t.make(std::move(out), {logits},
                [logits, probs, labels_copy, k](Tape<T>& tp, int id) {
                  const T g = tp.val(id).grad()[0];
                  const int64_t n_batch = tp.val(logits).shape().n;
                  T* gz = tp.grad(logits);
                  const T invn = T(1) / static_cast<T>(n_batch);
                  for (int64_t n = 0; n < n_batch; ++n) {
                    const T* p = probs->data() + n * k;
                    const int y = (*labels_copy)[static_cast<size_t>(n)];
                    for (int64_t j = 0; j < k; ++j) {
                      gz[n * k + j] += g * invn * (p[j] - (j == y ? T(1) : T(0)));
                    }
                  }
                },
                std::move(tag));
}

template <typename T>
int add(Tape<T>& t, int a, int b, std::string tag) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  LABNN_CHECK(av.shape() == bv.shape(), "add: shape mismatch " + av.shape().str() + " vs " +
                                            bv.shape().str());
  Tensor<T> out(av.shape());
  const int64_t cnt = av.count();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < cnt; ++i) out.data()[i] = av.data()[i] + bv.data()[i];
  return t.make(std::move(out), {a, b},
                [a, b](Tape<T>& tp, int id) {
                  const T* g = tp.val(id).grad();
                  const int64_t cnt = tp.val(id).count();
                  T* ga = tp.grad(a);
                  T* gb = tp.grad(b);
                  for (int64_t i = 0; i < cnt; ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                  }
                },
                std::move(tag));
}

template <typename T>
int concat_duplicate(Tape<T>& t, int x, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  const Shape4& s = xv.shape();
  Tensor<T> out({s.n, 2 * s.c, s.h, s.w});
  const int64_t plane = s.c * s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    const T* p = xv.data() + n * plane;
    T* o = out.data() + n * 2 * plane;
    std::copy(p, p + plane, o);
    std::copy(p, p + plane, o + plane);
  }
  return t.make(std::move(out), {x},
                [x, plane](Tape<T>& tp, int id) {
                  const int64_t n_batch = tp.val(x).shape().n;
                  const T* g = tp.val(id).grad();
                  T* gx = tp.grad(x);
                  for (int64_t n = 0; n < n_batch; ++n) {
                    const T* g0 = g + n * 2 * plane;
                    T* gp = gx + n * plane;
                    for (int64_t i = 0; i < plane; ++i) gp[i] += g0[i] + g0[plane + i];
                  }
                },
                std::move(tag));
}

template <typename T>
int reduce_sum(Tape<T>& t, int x, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  double acc = 0.0;
  for (int64_t i = 0; i < xv.count(); ++i) acc += xv.data()[i];
  Tensor<T> out({1, 1, 1, 1});
  out.data()[0] = static_cast<T>(acc);
  return t.make(std::move(out), {x},
                [x](Tape<T>& tp, int id) {
                  const T g = tp.val(id).grad()[0];
                  T* gx = tp.grad(x);
                  const int64_t cnt = tp.val(x).count();
                  for (int64_t i = 0; i < cnt; ++i) gx[i] += g;
                },
                std::move(tag));
}

template <typename T>
int mul(Tape<T>& t, int a, int b, std::string tag) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  LABNN_CHECK(av.shape() == bv.shape(), "mul: shape mismatch");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.count(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  return t.make(std::move(out), {a, b},
                [a, b](Tape<T>& tp, int id) {
                  const T* g = tp.val(id).grad();
                  const int64_t cnt = tp.val(id).count();
                  const T* avd = tp.val(a).data();
                  const T* bvd = tp.val(b).data();
                  T* ga = tp.grad(a);
                  T* gb = tp.grad(b);
                  for (int64_t i = 0; i < cnt; ++i) {
                    ga[i] += g[i] * bvd[i];
                    gb[i] += g[i] * avd[i];
                  }
                },
                std::move(tag));
}

template <typename T>
int scale(Tape<T>& t, int x, double s, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> out(xv.shape());
  for (int64_t i = 0; i < xv.count(); ++i) out.data()[i] = static_cast<T>(s) * xv.data()[i];
  return t.make(std::move(out), {x},
                [x, s](Tape<T>& tp, int id) {
                  const T* g = tp.val(id).grad();
                  T* gx = tp.grad(x);
                  const int64_t cnt = tp.val(x).count();
                  for (int64_t i = 0; i < cnt; ++i) gx[i] += static_cast<T>(s) * g[i];
                },
                std::move(tag));
}

template <typename T>
int sign_ste(Tape<T>& t, int x, BinMode mode, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> out(xv.shape());
  const int64_t cnt = xv.count();
  if (mode == BinMode::kHard) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < cnt; ++i) out.data()[i] = xv.data()[i] > T(0) ? T(1) : T(-1);
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < cnt; ++i) out.data()[i] = std::clamp(xv.data()[i], T(-1), T(1));
  }
  return t.make(std::move(out), {x},
                [x](Tape<T>& tp, int id) {
                  const T* g = tp.val(id).grad();
                  const T* xd = tp.val(x).data();
                  T* gx = tp.grad(x);
                  const int64_t cnt = tp.val(x).count();
#pragma omp parallel for schedule(static)
                  for (int64_t i = 0; i < cnt; ++i) {
                    if (xd[i] >= T(-1) && xd[i] <= T(1)) gx[i] += g[i];
                  }
                },
                std::move(tag));
}

template <typename T>
int lab_argmax(Tape<T>& t, int z, int beta, BinMode mode, std::string tag) {
  const Tensor<T>& zv = t.val(z);
  const Shape4& s = zv.shape();
  LABNN_CHECK(s.c % 2 == 0, "lab_argmax expects an even channel count (pairs)");
  LABNN_CHECK(t.val(beta).count() == 1, "lab_argmax beta must be scalar");
  const int64_t c_out = s.c / 2;
  const int64_t plane = s.h * s.w;
  Tensor<T> out({s.n, c_out, s.h, s.w});
  const T b = t.val(beta).data()[0];
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < c_out; ++c) {
      const T* z0 = zv.data() + (n * s.c + 2 * c) * plane;
      const T* z1 = zv.data() + (n * s.c + 2 * c + 1) * plane;
      T* o = out.data() + (n * c_out + c) * plane;
      if (mode == BinMode::kHard) {
        for (int64_t i = 0; i < plane; ++i) o[i] = z1[i] > z0[i] ? T(1) : T(-1);
      } else {
        for (int64_t i = 0; i < plane; ++i) {
          o[i] = T(2) * sigmoid(b * (z1[i] - z0[i])) - T(1);
        }
      }
    }
  }
  return t.make(std::move(out), {z, beta},
                [z, beta, c_out, plane](Tape<T>& tp, int id) {
                  const Shape4& s = tp.val(z).shape();
                  const T* g = tp.val(id).grad();
                  const T* zd = tp.val(z).data();
                  const T b = tp.val(beta).data()[0];
                  T* gz = tp.grad(z);
                  double gbeta = 0.0;
#pragma omp parallel for schedule(static) collapse(2) reduction(+ : gbeta)
                  for (int64_t n = 0; n < s.n; ++n) {
                    for (int64_t c = 0; c < c_out; ++c) {
                      const int64_t off0 = (n * s.c + 2 * c) * plane;
                      const int64_t off1 = off0 + plane;
                      const int64_t offo = (n * c_out + c) * plane;
                      for (int64_t i = 0; i < plane; ++i) {
                        const T d = zd[off1 + i] - zd[off0 + i];
                        const T p = sigmoid(b * d);
                        const T common = g[offo + i] * T(2) * p * (T(1) - p);
                        gz[off1 + i] += common * b;
                        gz[off0 + i] -= common * b;
                        gbeta += static_cast<double>(common) * d;
                      }
                    }
                  }
                  tp.grad(beta)[0] += static_cast<T>(gbeta);
                },
                std::move(tag));
}

template <typename T>
int local_threshold_ste(Tape<T>& t, int x, Tensor<T> thresholds, BinMode mode, std::string tag) {
  const Tensor<T>& xv = t.val(x);
  LABNN_CHECK(thresholds.shape() == xv.shape(), "threshold map must match input shape");
  auto th = std::make_shared<Tensor<T>>(std::move(thresholds));
  Tensor<T> out(xv.shape());
  const int64_t cnt = xv.count();
  if (mode == BinMode::kHard) {
    for (int64_t i = 0; i < cnt; ++i) {
      out.data()[i] = xv.data()[i] > th->data()[i] ? T(1) : T(-1);
    }
  } else {
    for (int64_t i = 0; i < cnt; ++i) {
      out.data()[i] = std::clamp(xv.data()[i] - th->data()[i], T(-1), T(1));
    }
  }
  return t.make(std::move(out), {x},
                [x, th](Tape<T>& tp, int id) {
                  const T* g = tp.val(id).grad();
                  const T* xd = tp.val(x).data();
                  T* gx = tp.grad(x);
                  const int64_t cnt = tp.val(x).count();
                  for (int64_t i = 0; i < cnt; ++i) {
                    const T d = xd[i] - th->data()[i];
                    if (d >= T(-1) && d <= T(1)) gx[i] += g[i];
                  }
                },
                std::move(tag));
}

#define LABNN_INSTANTIATE_OPS(T)                                                                \
  template int conv2d<T>(Tape<T>&, int, int, int64_t, Padding, int64_t, std::string);          \
  template int depthwise_conv2d<T>(Tape<T>&, int, int, int, int64_t, Padding, std::string);    \
  template int batchnorm_train<T>(Tape<T>&, int, int, int, BnState<T>*, bool, std::string);    \
  template int prelu<T>(Tape<T>&, int, int, std::string);                                      \
  template int maxpool2x2<T>(Tape<T>&, int, std::string);                                      \
  template int avgpool2x2<T>(Tape<T>&, int, std::string);                                      \
  template int global_avg_pool<T>(Tape<T>&, int, std::string);                                 \
  template int dense<T>(Tape<T>&, int, int, int, std::string);                                 \
  template int softmax_cross_entropy<T>(Tape<T>&, int, const std::vector<int>&, std::string);  \
  template int add<T>(Tape<T>&, int, int, std::string);                                        \
  template int concat_duplicate<T>(Tape<T>&, int, std::string);                                \
  template int reduce_sum<T>(Tape<T>&, int, std::string);                                      \
  template int mul<T>(Tape<T>&, int, int, std::string);                                        \
  template int scale<T>(Tape<T>&, int, double, std::string);                                   \
  template int sign_ste<T>(Tape<T>&, int, BinMode, std::string);                               \
  template int lab_argmax<T>(Tape<T>&, int, int, BinMode, std::string);                        \
  template int local_threshold_ste<T>(Tape<T>&, int, Tensor<T>, BinMode, std::string);

LABNN_INSTANTIATE_OPS(float)
LABNN_INSTANTIATE_OPS(double)
#undef LABNN_INSTANTIATE_OPS

}  // namespace labnn
