#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "labnn/common.hpp"

namespace labnn {

struct Shape4 {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;

  void validate() const {
    LABNN_CHECK(n > 0 && c > 0 && h > 0 && w > 0, "Shape4 dims must be positive, got " + str());
  }
};

// Dense rank-4 tensor, N-major then C, H, W, with an optional gradient slot
// of identical length.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 s, T fill = T(0)) : shape_(s) {
    s.validate();
    data_.assign(static_cast<size_t>(s.count()), fill);
  }

  const Shape4& shape() const { return shape_; }
  int64_t count() const { return shape_.count(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[index(n, c, h, w)]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[index(n, c, h, w)]; }

  bool has_grad() const { return !grad_.empty(); }
  void alloc_grad() {
    if (grad_.empty()) grad_.assign(data_.size(), T(0));
  }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
  }
  T* grad() { return grad_.data(); }
  const T* grad() const { return grad_.data(); }

 private:
  Shape4 shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

// Bit-packed rank-4 tensor over {-1, +1}: bit b encodes 2b - 1. Rows (the
// innermost W extent) are padded to whole 64-bit words, LSB-first within a
// word; padding bits are kept at zero so row words are canonical bytes.
class BitTensor {
 public:
  BitTensor() = default;
  explicit BitTensor(Shape4 s) : shape_(s) {
    s.validate();
    words_per_row_ = (s.w + 63) / 64;
    words_.assign(static_cast<size_t>(s.n * s.c * s.h * words_per_row_), 0);
  }

  const Shape4& shape() const { return shape_; }
  int64_t count() const { return shape_.count(); }
  int64_t words_per_row() const { return words_per_row_; }
  int64_t word_count() const { return static_cast<int64_t>(words_.size()); }

  uint64_t* words() { return words_.data(); }
  const uint64_t* words() const { return words_.data(); }

  const uint64_t* row(int64_t n, int64_t c, int64_t h) const {
    return words_.data() + ((n * shape_.c + c) * shape_.h + h) * words_per_row_;
  }
  uint64_t* row(int64_t n, int64_t c, int64_t h) {
    return words_.data() + ((n * shape_.c + c) * shape_.h + h) * words_per_row_;
  }

  bool get(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (row(n, c, h)[w >> 6] >> (w & 63)) & 1ull;
  }
  void set(int64_t n, int64_t c, int64_t h, int64_t w, bool v) {
    uint64_t* word = row(n, c, h) + (w >> 6);
    const uint64_t mask = 1ull << (w & 63);
    *word = v ? (*word | mask) : (*word & ~mask);
  }

  // Raw words reinterpreted as bytes; padding bits are zero by invariant, so
  // equal logical content gives equal bytes.
  std::string canonical_bytes() const {
    return std::string(reinterpret_cast<const char*>(words_.data()), words_.size() * sizeof(uint64_t));
  }

  bool operator==(const BitTensor& o) const { return shape_ == o.shape_ && words_ == o.words_; }

 private:
  Shape4 shape_;
  int64_t words_per_row_ = 0;
  std::vector<uint64_t> words_;
};

// bit set iff element > 0, so 0 maps to -1.
template <typename T>
BitTensor pack(const Tensor<T>& x);

template <typename T>
Tensor<T> unpack(const BitTensor& b);

enum class PadMode { kValid, kSame };

// "same" padding needs an explicit pad value; real convolutions default to 0
// and binary ones to -1 (callers choose). Output sizing follows the usual
// SAME rule: out = ceil(in / stride), low pad = floor(total / 2).
struct Padding {
  PadMode mode = PadMode::kValid;
  double value = 0.0;

  static Padding valid() { return {PadMode::kValid, 0.0}; }
  static Padding same(double v) { return {PadMode::kSame, v}; }

  bool is_same() const { return mode == PadMode::kSame; }
  std::string str() const;
};

struct ConvGeom {
  int64_t out_h = 0, out_w = 0;
  int64_t pad_top = 0, pad_left = 0;
};

ConvGeom conv_geometry(int64_t in_h, int64_t in_w, int64_t k, int64_t stride, const Padding& pad);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace labnn
