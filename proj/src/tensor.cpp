#include "labnn/tensor.hpp"

#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace labnn {

namespace {
int g_threads = 1;
}

void set_threads(int n) {
  g_threads = n < 1 ? 1 : n;
#ifdef _OPENMP
  omp_set_num_threads(g_threads);
#endif
  // GEMMs are issued from inside our own parallel regions; keep BLAS serial.
  openblas_set_num_threads(1);
}

int threads() { return g_threads; }

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

std::string Padding::str() const {
  if (mode == PadMode::kValid) return "valid";
  std::ostringstream os;
  os << "same(" << value << ")";
  return os.str();
}

ConvGeom conv_geometry(int64_t in_h, int64_t in_w, int64_t k, int64_t stride, const Padding& pad) {
  LABNN_CHECK(stride >= 1, "stride must be >= 1");
  ConvGeom g;
  if (pad.mode == PadMode::kValid) {
    LABNN_CHECK(in_h >= k && in_w >= k, "valid conv needs input >= kernel");
    g.out_h = (in_h - k) / stride + 1;
    g.out_w = (in_w - k) / stride + 1;
  } else {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const int64_t pad_h = std::max<int64_t>((g.out_h - 1) * stride + k - in_h, 0);
    const int64_t pad_w = std::max<int64_t>((g.out_w - 1) * stride + k - in_w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

template <typename T>
BitTensor pack(const Tensor<T>& x) {
  BitTensor b(x.shape());
  const Shape4& s = x.shape();
  const int64_t rows = s.n * s.c * s.h;
  const int64_t wpr = b.words_per_row();
  const T* src = x.data();
  uint64_t* dst = b.words();
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = src + r * s.w;
    uint64_t* pw = dst + r * wpr;
    for (int64_t w = 0; w < s.w; ++w) {
      if (px[w] > T(0)) pw[w >> 6] |= 1ull << (w & 63);
    }
  }
  return b;
}

template <typename T>
Tensor<T> unpack(const BitTensor& b) {
  Tensor<T> x(b.shape());
  const Shape4& s = b.shape();
  const int64_t rows = s.n * s.c * s.h;
  const int64_t wpr = b.words_per_row();
  T* dst = x.data();
  const uint64_t* src = b.words();
  for (int64_t r = 0; r < rows; ++r) {
    T* px = dst + r * s.w;
    const uint64_t* pw = src + r * wpr;
    for (int64_t w = 0; w < s.w; ++w) {
      px[w] = (pw[w >> 6] >> (w & 63)) & 1ull ? T(1) : T(-1);
    }
  }
  return x;
}

template class Tensor<float>;
template class Tensor<double>;
template BitTensor pack<float>(const Tensor<float>&);
template BitTensor pack<double>(const Tensor<double>&);
template Tensor<float> unpack<float>(const BitTensor&);
template Tensor<double> unpack<double>(const BitTensor&);

}  // namespace labnn
