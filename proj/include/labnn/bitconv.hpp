#pragma once

#include <vector>

#include "labnn/tensor.hpp"

namespace labnn {

// Packed binary convolution layer. Weights are (C_out, C_in, k, k) bits;
// alpha, when non-empty, scales each output channel (XNOR-Net style) and
// must be strictly positive. "same" padding pads with the sign bit of
// pad.value (-1 or +1; the padded taps take part in the popcount).
template <typename T>
struct BinConvLayer {
  BitTensor weights;
  std::vector<T> alpha;
  int64_t stride = 1;
  Padding pad = Padding::valid();
};

// XNOR + popcount convolution over {-1,+1}: each output element is
// 2 * popcount(xnor(a, w)) - k^2 * C_in, integer-exact, then scaled by
// alpha[c] when present. Equals real conv2d on the unpacked operands.
template <typename T>
Tensor<T> binconv(const BitTensor& a, const BinConvLayer<T>& layer);

// Binary multiply-accumulates for one layer applied to the given input
// shape; one MAC counts as one BOP. Depends only on shapes.
template <typename T>
int64_t count_bops(const BinConvLayer<T>& layer, const Shape4& input);

int64_t count_bops(const Shape4& weight_shape, int64_t stride, const Padding& pad,
                   const Shape4& input);

}  // namespace labnn
