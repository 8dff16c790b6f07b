#pragma once

#include <vector>

#include "labnn/tensor.hpp"

namespace labnn {

// Raw (non-autodiff) convolution kernels: im2col plus GEMM, parallel over
// batch images. Weight layout (C_out, C_in/groups, k, k); col layout has row
// index (ci, ky, kx) to match flattened weights.

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc);

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, const Padding& pad,
                     int64_t groups = 1);

// Either output may be null to skip it. dw accumulates over the batch.
template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout, int64_t stride,
                const Padding& pad, Tensor<T>* dx, Tensor<T>* dw, int64_t groups = 1);

// Depthwise with channel multiplier: w shape (mult*C, 1, k, k); output
// channel o reads input channel o / mult. bias is per output channel
// ((1, mult*C, 1, 1)) or null.
template <typename T>
Tensor<T> depthwise_fwd(const Tensor<T>& x, const Tensor<T>& w, int64_t mult, int64_t stride,
                        const Padding& pad, const Tensor<T>* bias);

template <typename T>
void depthwise_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dout, int64_t mult,
                   int64_t stride, const Padding& pad, Tensor<T>* dx, Tensor<T>* dw,
                   Tensor<T>* dbias);

}  // namespace labnn
