#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "labnn/conv_kernels.hpp"
#include "labnn/graph.hpp"

namespace labnn {

// Forward style for quantizing nodes. kHard emits exact {-1,+1} values with
// surrogate gradients (training); kRelaxed emits the smooth surrogate itself,
// so finite differences of the relaxed graph match the analytic backward.
enum class BinMode { kHard, kRelaxed };

template <typename T>
struct BnState {
  Tensor<T> running_mean;  // (1, C, 1, 1)
  Tensor<T> running_var;   // (1, C, 1, 1)
  double momentum = 0.1;
  double eps = 1e-5;

  BnState() = default;
  explicit BnState(int64_t channels)
      : running_mean({1, channels, 1, 1}, T(0)), running_var({1, channels, 1, 1}, T(1)) {}
};

template <typename T>
int conv2d(Tape<T>& t, int x, int w, int64_t stride, Padding pad, int64_t groups = 1,
           std::string tag = {});

// bias < 0 means no bias.
template <typename T>
int depthwise_conv2d(Tape<T>& t, int x, int w, int bias, int64_t mult, Padding pad,
                     std::string tag = {});

// Training-mode batch normalization. Batch statistics per channel over
// (N, H, W); requires batch size >= 2. state, when given, has its running
// statistics updated in place (set update_running=false for gradient checks).
template <typename T>
int batchnorm_train(Tape<T>& t, int x, int gamma, int beta,
                    std::type_identity_t<BnState<T>*> state, bool update_running = true,
                    std::string tag = {});

template <typename T>
int prelu(Tape<T>& t, int x, int slope, std::string tag = {});

template <typename T>
int maxpool2x2(Tape<T>& t, int x, std::string tag = {});

template <typename T>
int avgpool2x2(Tape<T>& t, int x, std::string tag = {});

template <typename T>
int global_avg_pool(Tape<T>& t, int x, std::string tag = {});

// x is flattened to (N, C*H*W); w has shape (K, F, 1, 1); bias < 0 for none.
template <typename T>
int dense(Tape<T>& t, int x, int w, int bias, std::string tag = {});

// Mean cross-entropy over the batch; returns a scalar node.
template <typename T>
int softmax_cross_entropy(Tape<T>& t, int logits, const std::vector<int>& labels,
                          std::string tag = {});

template <typename T>
int add(Tape<T>& t, int a, int b, std::string tag = {});

// (N, C, H, W) -> (N, 2C, H, W) with both halves equal to x.
template <typename T>
int concat_duplicate(Tape<T>& t, int x, std::string tag = {});

template <typename T>
int reduce_sum(Tape<T>& t, int x, std::string tag = {});

template <typename T>
int mul(Tape<T>& t, int a, int b, std::string tag = {});

template <typename T>
int scale(Tape<T>& t, int x, double s, std::string tag = {});

// sign with clipped straight-through gradient: grad passes where |x| <= 1.
template <typename T>
int sign_ste(Tape<T>& t, int x, BinMode mode, std::string tag = {});

// Two-class argmax over channel pairs (z[2c], z[2c+1]) of a multiplier-2
// depthwise output; +1 iff z1 > z0 (ties -> -1). Backward treats the output
// as 2*sigmoid(beta*(z1 - z0)) - 1. beta is a scalar (1,1,1,1) node.
template <typename T>
int lab_argmax(Tape<T>& t, int z, int beta, BinMode mode, std::string tag = {});

// Binarize against a precomputed per-pixel threshold map (local thresholding
// baselines); straight-through gradient on x - T with |x - T| <= 1.
template <typename T>
int local_threshold_ste(Tape<T>& t, int x, Tensor<T> thresholds, BinMode mode,
                        std::string tag = {});

}  // namespace labnn
