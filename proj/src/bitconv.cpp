#include "labnn/bitconv.hpp"

#include <bit>

namespace labnn {

namespace {

// k consecutive bits of a packed row starting at (possibly negative) ix0;
// out-of-range positions take pad_bit.
inline uint64_t window_bits(const uint64_t* row, int64_t width, int64_t ix0, int64_t k,
                            bool pad_bit) {
  const uint64_t kmask = k == 64 ? ~0ull : (1ull << k) - 1;
  if (ix0 >= 0 && ix0 + k <= width) {
    const int64_t wi = ix0 >> 6;
    const int64_t off = ix0 & 63;
    uint64_t bits = row[wi] >> off;
    if (off != 0 && off + k > 64) bits |= row[wi + 1] << (64 - off);
    return bits & kmask;
  }
  uint64_t bits = pad_bit ? kmask : 0;
  for (int64_t j = 0; j < k; ++j) {
    const int64_t ix = ix0 + j;
    if (ix < 0 || ix >= width) continue;
    const uint64_t b = (row[ix >> 6] >> (ix & 63)) & 1ull;
    bits = (bits & ~(1ull << j)) | (b << j);
  }
  return bits;
}

}  // namespace

template <typename T>
Tensor<T> binconv(const BitTensor& a, const BinConvLayer<T>& layer) {
  const Shape4& as = a.shape();
  const Shape4& ws = layer.weights.shape();
  LABNN_CHECK(ws.h == ws.w && ws.h <= 64, "binconv kernel must be square and k <= 64");
  LABNN_CHECK(as.c == ws.c, "binconv channel mismatch: input " + as.str() + " vs weights " +
                                ws.str());
  if (!layer.alpha.empty()) {
    LABNN_CHECK(static_cast<int64_t>(layer.alpha.size()) == ws.n,
                "alpha must have C_out entries");
    for (T v : layer.alpha) LABNN_CHECK(v > T(0), "alpha entries must be strictly positive");
  }
  const int64_t k = ws.h;
  const ConvGeom g = conv_geometry(as.h, as.w, k, layer.stride, layer.pad);
  const bool pad_bit = layer.pad.value > 0.0;
  const int64_t field = k * k * as.c;
  const uint64_t kmask = k == 64 ? ~0ull : (1ull << k) - 1;

  // One k-bit pattern per (co, ci, ky) weight row.
  std::vector<uint64_t> wpat(static_cast<size_t>(ws.n * as.c * k));
  for (int64_t co = 0; co < ws.n; ++co)
    for (int64_t ci = 0; ci < as.c; ++ci)
      for (int64_t ky = 0; ky < k; ++ky)
        wpat[static_cast<size_t>((co * as.c + ci) * k + ky)] =
            layer.weights.row(co, ci, ky)[0] & kmask;

  Tensor<T> out({as.n, ws.n, g.out_h, g.out_w});
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < as.n; ++n) {
    for (int64_t co = 0; co < ws.n; ++co) {
      T* o = out.data() + (n * ws.n + co) * g.out_h * g.out_w;
      const T scale = layer.alpha.empty() ? T(1) : layer.alpha[static_cast<size_t>(co)];
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          const int64_t ix0 = ox * layer.stride - g.pad_left;
          int64_t matches = 0;
          for (int64_t ci = 0; ci < as.c; ++ci) {
            const uint64_t* pat = wpat.data() + (co * as.c + ci) * k;
            for (int64_t ky = 0; ky < k; ++ky) {
              const int64_t iy = oy * layer.stride - g.pad_top + ky;
              uint64_t win;
              if (iy < 0 || iy >= as.h) {
                win = pad_bit ? kmask : 0;
              } else {
                win = window_bits(a.row(n, ci, iy), as.w, ix0, k, pad_bit);
              }
              matches += std::popcount(~(win ^ pat[ky]) & kmask);
            }
          }
          o[oy * g.out_w + ox] = scale * static_cast<T>(2 * matches - field);
        }
      }
    }
  }
  return out;
}

int64_t count_bops(const Shape4& weight_shape, int64_t stride, const Padding& pad,
                   const Shape4& input) {
  const ConvGeom g = conv_geometry(input.h, input.w, weight_shape.h, stride, pad);
  const int64_t out_elems = input.n * weight_shape.n * g.out_h * g.out_w;
  return out_elems * weight_shape.h * weight_shape.w * weight_shape.c;
}

template <typename T>
int64_t count_bops(const BinConvLayer<T>& layer, const Shape4& input) {
  return count_bops(layer.weights.shape(), layer.stride, layer.pad, input);
}

template Tensor<float> binconv<float>(const BitTensor&, const BinConvLayer<float>&);
template Tensor<double> binconv<double>(const BitTensor&, const BinConvLayer<double>&);
template int64_t count_bops<float>(const BinConvLayer<float>&, const Shape4&);
template int64_t count_bops<double>(const BinConvLayer<double>&, const Shape4&);

}  // namespace labnn
