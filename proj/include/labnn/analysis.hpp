#pragma once

#include <string>
#include <vector>

#include "labnn/binarize.hpp"
#include "labnn/nets.hpp"

namespace labnn {

// Result of the kernel-enumeration uniqueness experiment on one binary map:
// convolve A with every +-1 kernel, binarize each output, count distinct
// binary maps. eta = n_c / n_t.
struct UniquenessReport {
  int64_t k = 0;
  int64_t c_in = 0;
  std::string padding;
  int64_t n_t = 0;  // 2^(k^2 * c_in)
  int64_t n_c = 0;
  double eta = 0.0;
  // log10 of (k^2 * C)^(H*W), the printed theoretical maximum; stored as a
  // logarithm because the plain value overflows anything fixed-width.
  double log10_theoretical_max = 0.0;
};

// a must be a single-batch single-channel map; k <= 4 keeps the kernel
// enumeration (2^(k^2)) tractable. Distinct maps are counted by hashing the
// canonical packed bytes with full-equality confirmation on collision.
template <typename T>
UniquenessReport uniqueness_eta(const BitTensor& a, int64_t k, const BinarizerConfig<T>& binarizer,
                                Padding pad);

template <typename T>
struct ChannelSlice {
  const T* data = nullptr;
  int64_t h = 0, w = 0;
};

template <typename T>
ChannelSlice<T> channel_slice(const Tensor<T>& t, int64_t n, int64_t c);

// Global single-window SSIM with dynamic range L = 2 (suits +-1 maps):
// C1 = (0.01 L)^2, C2 = (0.03 L)^2, population moments.
template <typename T>
double ssim(const ChannelSlice<T>& a, const ChannelSlice<T>& b);

// sqrt( (mean|a-b|)^2 + (mean|a+b|)^2 ); inversion-tolerant by construction.
template <typename T>
double endsim(const ChannelSlice<T>& a, const ChannelSlice<T>& b);

struct LayerDissimilarity {
  std::string layer;
  double mean_ssim = 0.0;
  double mean_endsim = 0.0;
  int64_t pair_count = 0;   // unordered channel pairs per image
  int64_t image_count = 0;
};

// Averages ssim and endsim over all unordered channel pairs per layer, then
// over images. Each tensor holds one layer's maps for a batch of images.
template <typename T>
LayerDissimilarity pairwise_dissimilarity(const Tensor<T>& layer_maps, std::string layer_name);

struct BinaryDistribution {
  std::vector<double> plus_fraction;  // per channel
  double mean = 0.0;
};

BinaryDistribution binary_distribution(const BitTensor& b);

// Per-layer operation accounting, one row per (layer, op). OP is derived,
// never stored: OP = BOP/64 + FLOP.
struct OpsBudget {
  struct Row {
    std::string layer;
    std::string op;
    double bops = 0.0;
    double flops = 0.0;
    double ops() const { return bops / 64.0 + flops; }
  };
  std::vector<Row> rows;

  double total_bops() const;
  double total_flops() const;
  double total_ops() const { return total_bops() / 64.0 + total_flops(); }
  double flops_matching(const std::string& op_substr) const;
};

// Counts per single image (batch 1). With full_precision the binary
// convolutions are counted as real MACs and binarizers are omitted,
// giving the FP32 baseline of the same topology.
OpsBudget count_ops(const ModelSpec& spec, bool full_precision = false);

}  // namespace labnn
