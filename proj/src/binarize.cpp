#include "labnn/binarize.hpp"

#include <algorithm>
#include <cmath>

#include "labnn/conv_kernels.hpp"

namespace labnn {

std::string binarizer_kind_name(BinarizerKind k) {
  switch (k) {
    case BinarizerKind::kSignSte: return "sign";
    case BinarizerKind::kLab: return "lab";
    case BinarizerKind::kNiblack: return "niblack";
    case BinarizerKind::kSauvola: return "sauvola";
  }
  return "?";
}

BinarizerKind binarizer_kind_from_name(const std::string& name) {
  if (name == "sign") return BinarizerKind::kSignSte;
  if (name == "lab") return BinarizerKind::kLab;
  if (name == "niblack") return BinarizerKind::kNiblack;
  if (name == "sauvola") return BinarizerKind::kSauvola;
  fail("unknown binarizer: " + name + " (want sign|lab|niblack|sauvola)");
}

template <typename T>
LabParams<T> LabParams<T>::identity(int64_t channels, int64_t k) {
  LABNN_CHECK(k % 2 == 1, "LAB kernel size must be odd");
  LabParams<T> p;
  p.dw_weights = Tensor<T>({2 * channels, 1, k, k}, T(0));
  p.dw_bias = Tensor<T>({1, 2 * channels, 1, 1}, T(0));
  p.beta = T(1);
  const int64_t mid = k / 2;
  for (int64_t c = 0; c < channels; ++c) p.dw_weights.at(2 * c + 1, 0, mid, mid) = T(1);
  return p;
}

template <typename T>
LabParams<T> LabParams<T>::init_near_identity(int64_t channels, Rng& rng, int64_t k,
                                              double noise) {
  LabParams<T> p = identity(channels, k);
  for (int64_t i = 0; i < p.dw_weights.count(); ++i) {
    p.dw_weights.data()[i] += static_cast<T>(noise * rng.normal());
  }
  return p;
}

template <typename T>
BitTensor sign_ste_forward(const Tensor<T>& x) {
  return pack(x);
}

template <typename T>
Tensor<T> sign_ste_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  LABNN_CHECK(x.shape() == upstream.shape(), "sign_ste_backward: shape mismatch");
  Tensor<T> g(x.shape());
  for (int64_t i = 0; i < x.count(); ++i) {
    const T v = x.data()[i];
    g.data()[i] = (v >= T(-1) && v <= T(1)) ? upstream.data()[i] : T(0);
  }
  return g;
}

template <typename T>
LabForwardResult<T> lab_forward(const Tensor<T>& x, const LabParams<T>& p, Padding pad) {
  LABNN_CHECK(p.channels() == x.shape().c,
              "LabParams serve " + std::to_string(p.channels()) + " channels, input has " +
                  std::to_string(x.shape().c));
  LabForwardResult<T> r;
  r.logits = depthwise_fwd(x, p.dw_weights, 2, 1, pad, &p.dw_bias);
  const Shape4& s = x.shape();
  r.out = BitTensor(s);
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* z0 = r.logits.data() + (n * 2 * s.c + 2 * c) * plane;
      const T* z1 = z0 + plane;
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) {
          if (z1[h * s.w + w] > z0[h * s.w + w]) r.out.set(n, c, h, w, true);
        }
    }
  }
  return r;
}

template <typename T>
LabGrads<T> lab_backward(const Tensor<T>& x, const Tensor<T>& logits, const LabParams<T>& p,
                         const Tensor<T>& upstream, Padding pad) {
  const Shape4& s = x.shape();
  LABNN_CHECK(upstream.shape() == s, "lab_backward: upstream must match input shape");
  LABNN_CHECK((logits.shape() == Shape4{s.n, 2 * s.c, s.h, s.w}),
              "lab_backward: logits shape mismatch");
  const int64_t plane = s.h * s.w;
  const T beta = p.beta;

  Tensor<T> dz(logits.shape());
  double dbeta = 0.0;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* z0 = logits.data() + (n * 2 * s.c + 2 * c) * plane;
      const T* z1 = z0 + plane;
      T* g0 = dz.data() + (n * 2 * s.c + 2 * c) * plane;
      T* g1 = g0 + plane;
      const T* up = upstream.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const T d = z1[i] - z0[i];
        const T bd = beta * d;
        const T pr = bd >= T(0) ? T(1) / (T(1) + std::exp(-bd))
                                : std::exp(bd) / (T(1) + std::exp(bd));
        const T common = up[i] * T(2) * pr * (T(1) - pr);
        g1[i] = common * beta;
        g0[i] = -common * beta;
        dbeta += static_cast<double>(common) * d;
      }
    }
  }

  LabGrads<T> g;
  g.x = Tensor<T>(s);
  g.dw_weights = Tensor<T>(p.dw_weights.shape());
  g.dw_bias = Tensor<T>(p.dw_bias.shape());
  depthwise_bwd(x, p.dw_weights, dz, 2, 1, pad, &g.x, &g.dw_weights, &g.dw_bias);
  g.beta = static_cast<T>(dbeta);
  return g;
}

namespace {

template <typename T>
void window_stats(const T* map, int64_t h, int64_t w, int64_t cy, int64_t cx, int64_t half,
                  double* mean, double* sigma) {
  const int64_t y0 = std::max<int64_t>(0, cy - half), y1 = std::min(h - 1, cy + half);
  const int64_t x0 = std::max<int64_t>(0, cx - half), x1 = std::min(w - 1, cx + half);
  double sum = 0.0;
  int64_t cnt = 0;
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x, ++cnt) sum += map[y * w + x];
  *mean = sum / static_cast<double>(cnt);
  double sq = 0.0;
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x) {
      const double d = map[y * w + x] - *mean;
      sq += d * d;
    }
  *sigma = std::sqrt(sq / static_cast<double>(cnt));
}

}  // namespace

template <typename T>
Tensor<T> niblack_thresholds(const Tensor<T>& x, double k_n, int64_t window) {
  LABNN_CHECK(window % 2 == 1 && window >= 3, "niblack window must be odd and >= 3");
  const Shape4& s = x.shape();
  Tensor<T> th(s);
  const int64_t half = window / 2;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* map = x.data() + (n * s.c + c) * s.h * s.w;
      T* tmap = th.data() + (n * s.c + c) * s.h * s.w;
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t xq = 0; xq < s.w; ++xq) {
          double mu = 0, sigma = 0;
          window_stats(map, s.h, s.w, y, xq, half, &mu, &sigma);
          tmap[y * s.w + xq] = static_cast<T>(mu + k_n * sigma);
        }
    }
  }
  return th;
}

template <typename T>
Tensor<T> sauvola_thresholds(const Tensor<T>& x, double k_s, int64_t window, double R) {
  LABNN_CHECK(window % 2 == 1 && window >= 3, "sauvola window must be odd and >= 3");
  const Shape4& s = x.shape();
  Tensor<T> th(s);
  const int64_t half = window / 2;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* map = x.data() + (n * s.c + c) * s.h * s.w;
      T* tmap = th.data() + (n * s.c + c) * s.h * s.w;
      double r = R;
      if (r <= 0.0) {  // half the dynamic range of this map
        T lo = map[0], hi = map[0];
        for (int64_t i = 1; i < s.h * s.w; ++i) {
          lo = std::min(lo, map[i]);
          hi = std::max(hi, map[i]);
        }
        r = std::max(0.5 * (static_cast<double>(hi) - static_cast<double>(lo)), 1e-12);
      }
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t xq = 0; xq < s.w; ++xq) {
          double mu = 0, sigma = 0;
          window_stats(map, s.h, s.w, y, xq, half, &mu, &sigma);
          tmap[y * s.w + xq] = static_cast<T>(mu * (1.0 + k_s * (sigma / r - 1.0)));
        }
    }
  }
  return th;
}

namespace {

template <typename T>
BitTensor threshold_pack(const Tensor<T>& x, const Tensor<T>& th) {
  BitTensor out(x.shape());
  const Shape4& s = x.shape();
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) {
          if (x.at(n, c, h, w) > th.at(n, c, h, w)) out.set(n, c, h, w, true);
        }
  return out;
}

}  // namespace

template <typename T>
BitTensor niblack(const Tensor<T>& x, double k_n, int64_t window) {
  return threshold_pack(x, niblack_thresholds(x, k_n, window));
}

template <typename T>
BitTensor sauvola(const Tensor<T>& x, double k_s, int64_t window, double R) {
  return threshold_pack(x, sauvola_thresholds(x, k_s, window, R));
}

template <typename T>
void quantize_lab_weights(LabParams<T>& p, int bits) {
  LABNN_CHECK(bits == 4 || bits == 8, "quantize_lab_weights supports 4 or 8 bits");
  const int64_t levels = (1ll << (bits - 1)) - 1;  // 127 or 7
  const Shape4& s = p.dw_weights.shape();
  const int64_t per_ch = s.c * s.h * s.w;
  for (int64_t co = 0; co < s.n; ++co) {
    T* w = p.dw_weights.data() + co * per_ch;
    T max_abs = T(0);
    for (int64_t i = 0; i < per_ch; ++i) max_abs = std::max(max_abs, std::abs(w[i]));
    if (max_abs == T(0)) continue;
    const T scale = max_abs / static_cast<T>(levels);
    for (int64_t i = 0; i < per_ch; ++i) {
      w[i] = scale * std::round(w[i] / scale);
    }
  }
}

template <typename T>
BitTensor binarize_apply(const Tensor<T>& x, const BinarizerConfig<T>& config) {
  switch (config.kind) {
    case BinarizerKind::kSignSte: return sign_ste_forward(x);
    case BinarizerKind::kLab: return lab_forward(x, config.lab).out;
    case BinarizerKind::kNiblack: return niblack(x, config.k_n, config.window);
    case BinarizerKind::kSauvola: return sauvola(x, config.k_s, config.window, config.R);
  }
  fail("unreachable binarizer kind");
}

#define LABNN_INSTANTIATE_BINARIZE(T)                                                          \
  template struct LabParams<T>;                                                                \
  template BitTensor sign_ste_forward<T>(const Tensor<T>&);                                    \
  template Tensor<T> sign_ste_backward<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template LabForwardResult<T> lab_forward<T>(const Tensor<T>&, const LabParams<T>&, Padding); \
  template LabGrads<T> lab_backward<T>(const Tensor<T>&, const Tensor<T>&, const LabParams<T>&,\
                                       const Tensor<T>&, Padding);                             \
  template Tensor<T> niblack_thresholds<T>(const Tensor<T>&, double, int64_t);                 \
  template Tensor<T> sauvola_thresholds<T>(const Tensor<T>&, double, int64_t, double);         \
  template BitTensor niblack<T>(const Tensor<T>&, double, int64_t);                            \
  template BitTensor sauvola<T>(const Tensor<T>&, double, int64_t, double);                    \
  template void quantize_lab_weights<T>(LabParams<T>&, int);                                   \
  template BitTensor binarize_apply<T>(const Tensor<T>&, const BinarizerConfig<T>&);

LABNN_INSTANTIATE_BINARIZE(float)
LABNN_INSTANTIATE_BINARIZE(double)
#undef LABNN_INSTANTIATE_BINARIZE

}  // namespace labnn
