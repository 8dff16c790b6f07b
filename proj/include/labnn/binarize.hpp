#pragma once

#include <cstdint>
#include <string>

#include "labnn/tensor.hpp"

namespace labnn {

// Per-layer learnable activation binarizer state: a 3x3 depthwise kernel
// with channel multiplier 2, per-output-channel bias, and the soft-argmax
// temperature beta (learnable, initialized to 1).
template <typename T>
struct LabParams {
  Tensor<T> dw_weights;  // (2C, 1, k, k)
  Tensor<T> dw_bias;     // (1, 2C, 1, 1)
  T beta = T(1);

  int64_t channels() const { return dw_weights.shape().n / 2; }
  int64_t kernel() const { return dw_weights.shape().h; }
  int64_t param_count() const { return dw_weights.count() + dw_bias.count() + 1; }

  // Degenerate parameterization: class-1 logit is the center tap of x,
  // class-0 logit is zero, so the argmax reproduces sign(x) exactly.
  static LabParams identity(int64_t channels, int64_t k = 3);

  // Identity plus Gaussian noise on every tap; starts close to sign so
  // training cannot be worse than the global threshold at initialization.
  static LabParams init_near_identity(int64_t channels, Rng& rng, int64_t k = 3,
                                      double noise = 0.1);
};

enum class BinarizerKind { kSignSte, kLab, kNiblack, kSauvola };

std::string binarizer_kind_name(BinarizerKind k);
BinarizerKind binarizer_kind_from_name(const std::string& name);

// Tagged binarizer selection. Lab carries its trainable parameters; the
// classical local-thresholding baselines carry window and k (and R for
// Sauvola, <= 0 meaning half the per-map dynamic range, recomputed per call).
template <typename T>
struct BinarizerConfig {
  BinarizerKind kind = BinarizerKind::kSignSte;
  LabParams<T> lab;
  double k_n = -0.2;
  double k_s = 0.2;
  int64_t window = 3;
  double R = 0.0;

  static BinarizerConfig sign() { return {}; }
  static BinarizerConfig make_lab(LabParams<T> p) {
    BinarizerConfig c;
    c.kind = BinarizerKind::kLab;
    c.lab = std::move(p);
    return c;
  }
  static BinarizerConfig niblack(double k, int64_t window = 3) {
    BinarizerConfig c;
    c.kind = BinarizerKind::kNiblack;
    c.k_n = k;
    c.window = window;
    return c;
  }
  static BinarizerConfig sauvola(double k, int64_t window = 3, double R = 0.0) {
    BinarizerConfig c;
    c.kind = BinarizerKind::kSauvola;
    c.k_s = k;
    c.window = window;
    c.R = R;
    return c;
  }
};

template <typename T>
BitTensor sign_ste_forward(const Tensor<T>& x);

// Clipped straight-through estimator: upstream passes where |x| <= 1.
template <typename T>
Tensor<T> sign_ste_backward(const Tensor<T>& x, const Tensor<T>& upstream);

template <typename T>
struct LabForwardResult {
  BitTensor out;      // same shape as x
  Tensor<T> logits;   // (N, 2C, H, W), cached for backward
};

// Depthwise conv (multiplier 2, same padding) + bias, then per-pixel argmax
// over each channel pair; +1 iff z1 > z0 (ties -> -1).
template <typename T>
LabForwardResult<T> lab_forward(const Tensor<T>& x, const LabParams<T>& p,
                                Padding pad = Padding::same(0.0));

template <typename T>
struct LabGrads {
  Tensor<T> x;
  Tensor<T> dw_weights;
  Tensor<T> dw_bias;
  T beta = T(0);
};

// Surrogate gradients of the forward: the hard output is treated as
// y = 2*sigmoid(beta*(z1 - z0)) - 1 per pixel, then gradients flow through
// the depthwise convolution to x, weights and bias.
template <typename T>
LabGrads<T> lab_backward(const Tensor<T>& x, const Tensor<T>& logits, const LabParams<T>& p,
                         const Tensor<T>& upstream, Padding pad = Padding::same(0.0));

// Local-threshold maps, window clipped at borders (population sigma over the
// clipped window). niblack: T = mu + k*sigma. sauvola: T = mu*(1 + k*(sigma/R - 1)),
// R <= 0 meaning half the dynamic range of each (n, c) map.
template <typename T>
Tensor<T> niblack_thresholds(const Tensor<T>& x, double k_n, int64_t window);

template <typename T>
Tensor<T> sauvola_thresholds(const Tensor<T>& x, double k_s, int64_t window, double R = 0.0);

template <typename T>
BitTensor niblack(const Tensor<T>& x, double k_n, int64_t window);

template <typename T>
BitTensor sauvola(const Tensor<T>& x, double k_s, int64_t window, double R = 0.0);

// Per-output-channel symmetric uniform quantization of the depthwise
// weights: scale = max|w| / (2^(bits-1) - 1), weights replaced by their
// dequantized values. Bias and beta untouched; all-zero channels stay zero.
template <typename T>
void quantize_lab_weights(LabParams<T>& p, int bits);

// Forward-only dispatch over the tagged binarizer (analysis paths).
template <typename T>
BitTensor binarize_apply(const Tensor<T>& x, const BinarizerConfig<T>& config);

}  // namespace labnn
