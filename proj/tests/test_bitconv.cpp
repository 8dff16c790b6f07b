#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "labnn/bitconv.hpp"
#include "labnn/conv_kernels.hpp"
#include "oracles.hpp"

using namespace labnn;

namespace {

BitTensor random_bits(Shape4 s, Rng& rng) {
  BitTensor b(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) b.set(n, c, h, w, rng.uniform() < 0.5);
  return b;
}

}  // namespace

TEST_CASE("binconv: all +1 input with all +1 3x3 kernel gives 9 everywhere") {
  Tensor<float> x({1, 1, 5, 5}, 1.0f);
  Tensor<float> w({1, 1, 3, 3}, 1.0f);
  BinConvLayer<float> layer{pack(w), {}, 1, Padding::valid()};
  Tensor<float> y = binconv(pack(x), layer);
  CHECK(y.shape() == Shape4{1, 1, 3, 3});
  for (int64_t i = 0; i < y.count(); ++i) CHECK(y.data()[i] == 9.0f);
}

TEST_CASE("binconv: self-correlation with kernel covering the map gives element count") {
  Rng rng(31);
  Tensor<float> x({1, 1, 6, 6});
  oracle::fill_pm1(x, rng);
  Tensor<float> w({1, 1, 6, 6});
  std::copy(x.data(), x.data() + x.count(), w.data());
  BinConvLayer<float> layer{pack(w), {}, 1, Padding::valid()};
  Tensor<float> y = binconv(pack(x), layer);
  CHECK(y.count() == 1);
  CHECK(y.data()[0] == 36.0f);
}

TEST_CASE("binconv equals real conv2d on unpacked operands, integer exact") {
  Rng rng(32);
  int checked = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int64_t n = 1 + rng.below(2);
    const int64_t cin = 1 + rng.below(5);
    const int64_t cout = 1 + rng.below(5);
    const int64_t k = 1 + rng.below(3);
    const int64_t h = k + rng.below(70);  // exercises multi-word rows too
    const int64_t w = k + rng.below(70);
    const int64_t stride = 1 + rng.below(2);
    const double pad_value = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Padding pad = rng.uniform() < 0.5 ? Padding::valid() : Padding::same(pad_value);

    const BitTensor a = random_bits({n, cin, h, w}, rng);
    const BitTensor wb = random_bits({cout, cin, k, k}, rng);
    BinConvLayer<float> layer{wb, {}, stride, pad};
    Tensor<float> got = binconv(a, layer);
    Tensor<float> expect = conv2d_fwd(unpack<float>(a), unpack<float>(wb), stride, pad);
    REQUIRE(got.shape() == expect.shape());
    for (int64_t i = 0; i < got.count(); ++i) {
      REQUIRE(got.data()[i] == expect.data()[i]);  // zero floating-point error
    }
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("binconv with alpha scales each output channel") {
  Rng rng(33);
  const BitTensor a = random_bits({1, 2, 7, 7}, rng);
  const BitTensor w = random_bits({3, 2, 3, 3}, rng);
  BinConvLayer<float> plain{w, {}, 1, Padding::same(-1.0)};
  BinConvLayer<float> scaled{w, {0.5f, 2.0f, 0.25f}, 1, Padding::same(-1.0)};
  Tensor<float> y0 = binconv(a, plain);
  Tensor<float> y1 = binconv(a, scaled);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t h = 0; h < 7; ++h)
      for (int64_t w2 = 0; w2 < 7; ++w2)
        CHECK(y1.at(0, c, h, w2) == scaled.alpha[static_cast<size_t>(c)] * y0.at(0, c, h, w2));
  BinConvLayer<float> bad{w, {0.5f, -1.0f, 0.25f}, 1, Padding::valid()};
  CHECK_THROWS_AS(binconv(a, bad), Error);
}

TEST_CASE("binconv rejects channel mismatch") {
  Rng rng(34);
  const BitTensor a = random_bits({1, 2, 5, 5}, rng);
  const BitTensor w = random_bits({1, 3, 3, 3}, rng);
  BinConvLayer<float> layer{w, {}, 1, Padding::valid()};
  CHECK_THROWS_AS(binconv(a, layer), Error);
}

TEST_CASE("count_bops: 1x1 kernel on 4x4 single-channel input is 16") {
  BinConvLayer<float> layer{BitTensor({1, 1, 1, 1}), {}, 1, Padding::valid()};
  CHECK(count_bops(layer, {1, 1, 4, 4}) == 16);
}

TEST_CASE("count_bops matches direct enumeration of output positions x fan-in") {
  Rng rng(35);
  for (int rep = 0; rep < 50; ++rep) {
    const int64_t cin = 1 + rng.below(4);
    const int64_t cout = 1 + rng.below(6);
    const int64_t k = 1 + rng.below(3);
    const int64_t h = k + rng.below(12);
    const int64_t w = k + rng.below(12);
    const int64_t stride = 1 + rng.below(2);
    const Padding pad = rng.uniform() < 0.5 ? Padding::valid() : Padding::same(-1.0);
    const ConvGeom g = conv_geometry(h, w, k, stride, pad);
    int64_t expect = 0;
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < g.out_h; ++oy)
        for (int64_t ox = 0; ox < g.out_w; ++ox) expect += k * k * cin;
    BinConvLayer<float> layer{BitTensor({cout, cin, k, k}), {}, stride, pad};
    CHECK(count_bops(layer, {1, cin, h, w}) == expect);
  }
}

TEST_CASE("count_bops is independent of packed contents") {
  Rng rng(36);
  BinConvLayer<float> a{random_bits({4, 3, 3, 3}, rng), {}, 1, Padding::same(-1.0)};
  BinConvLayer<float> b{random_bits({4, 3, 3, 3}, rng), {}, 1, Padding::same(-1.0)};
  CHECK(count_bops(a, {1, 3, 14, 14}) == count_bops(b, {1, 3, 14, 14}));
}

TEST_CASE("count_bops: binary ResNet-18 topology at 224x224 is 1.68e9 within 2%") {
  struct Conv {
    int64_t cin, cout, in_hw, stride;
  };
  // conv2..conv17: four stages of four 3x3 convolutions, stride 2 at each
  // stage transition, after the 7x7/2 stem and 3x3/2 max pool (56x56 input).
  std::vector<Conv> convs;
  for (int i = 0; i < 4; ++i) convs.push_back({64, 64, 56, 1});
  convs.push_back({64, 128, 56, 2});
  for (int i = 0; i < 3; ++i) convs.push_back({128, 128, 28, 1});
  convs.push_back({128, 256, 28, 2});
  for (int i = 0; i < 3; ++i) convs.push_back({256, 256, 14, 1});
  convs.push_back({256, 512, 14, 2});
  for (int i = 0; i < 3; ++i) convs.push_back({512, 512, 7, 1});
  REQUIRE(convs.size() == 16);

  int64_t total = 0;
  for (const Conv& c : convs) {
    total += count_bops({c.cout, c.cin, 3, 3}, c.stride, Padding::same(-1.0),
                        {1, c.cin, c.in_hw, c.in_hw});
  }
  CHECK(total == 1676279808);
  CHECK(std::abs(static_cast<double>(total) / 1.68e9 - 1.0) < 0.02);
}
