#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "labnn/checkpoint.hpp"
#include "labnn/tensor.hpp"
#include "oracles.hpp"

using namespace labnn;

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Tensor<float>({0, 1, 1, 1}), Error);
  CHECK_THROWS_AS(Tensor<float>({1, -2, 1, 1}), Error);
  CHECK(Tensor<float>({2, 3, 4, 5}).count() == 120);
}

TEST_CASE("pack maps positives to bit 1 and zero to -1") {
  Tensor<float> x({1, 1, 1, 3});
  x.data()[0] = 0.5f;
  x.data()[1] = 0.0f;
  x.data()[2] = -0.3f;
  BitTensor b = pack(x);
  CHECK(b.get(0, 0, 0, 0) == true);
  CHECK(b.get(0, 0, 0, 1) == false);
  CHECK(b.get(0, 0, 0, 2) == false);
  Tensor<float> u = unpack<float>(b);
  CHECK(u.data()[0] == 1.0f);
  CHECK(u.data()[1] == -1.0f);
  CHECK(u.data()[2] == -1.0f);
}

TEST_CASE("all-positive packs to all ones") {
  Tensor<float> x({1, 2, 3, 5}, 2.0f);
  BitTensor b = pack(x);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t h = 0; h < 3; ++h)
      for (int64_t w = 0; w < 5; ++w) CHECK(b.get(0, c, h, w));
}

TEST_CASE("unpack of all-zero bits is all -1") {
  BitTensor b({1, 1, 2, 7});
  Tensor<double> u = unpack<double>(b);
  for (int64_t i = 0; i < u.count(); ++i) CHECK(u.data()[i] == -1.0);
}

TEST_CASE("pack/unpack round trip matches elementwise sign, W not divisible by 64") {
  Rng rng(7);
  Tensor<float> x({1, 2, 5, 70});
  oracle::fill_random(x, rng);
  x.data()[3] = 0.0f;  // exercise the sign(0) = -1 rule
  BitTensor b = pack(x);
  CHECK(b.words_per_row() == 2);
  Tensor<float> u = unpack<float>(b);
  for (int64_t n = 0; n < 1; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t h = 0; h < 5; ++h)
        for (int64_t w = 0; w < 70; ++w) {
          const float expect = x.at(n, c, h, w) > 0.0f ? 1.0f : -1.0f;
          CHECK(u.at(n, c, h, w) == expect);
        }
  CHECK(pack(u) == b);
}

TEST_CASE("row padding bits stay zero") {
  Rng rng(9);
  for (int64_t w : {1, 31, 63, 64, 65, 127, 130}) {
    Tensor<float> x({2, 1, 3, w});
    oracle::fill_random(x, rng);
    BitTensor b = pack(x);
    const int64_t rows = 2 * 1 * 3;
    for (int64_t r = 0; r < rows; ++r) {
      const uint64_t* pw = b.words() + r * b.words_per_row();
      const int64_t used = w & 63;
      if (used != 0) {
        const uint64_t pad_mask = ~((1ull << used) - 1);
        CHECK((pw[b.words_per_row() - 1] & pad_mask) == 0);
      }
    }
    CHECK(pack(unpack<float>(b)) == b);
  }
}

TEST_CASE("conv geometry") {
  ConvGeom g = conv_geometry(32, 32, 3, 1, Padding::same(0));
  CHECK(g.out_h == 32);
  CHECK(g.pad_top == 1);
  g = conv_geometry(32, 32, 3, 2, Padding::same(0));
  CHECK(g.out_h == 16);
  CHECK(g.pad_top == 0);  // SAME with stride 2 pads one trailing row only
  g = conv_geometry(8, 8, 3, 1, Padding::valid());
  CHECK(g.out_h == 6);
  CHECK_THROWS_AS(conv_geometry(2, 2, 3, 1, Padding::valid()), Error);
}

TEST_CASE("checkpoint round trip and exact layout") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "labnn_ckpt_test.labc").string();

  Tensor<float> t({1, 1, 1, 2});
  t.data()[0] = 1.0f;
  t.data()[1] = -2.5f;
  BitTensor b({1, 1, 1, 3});
  b.set(0, 0, 0, 0, true);
  b.set(0, 0, 0, 2, true);
  save_checkpoint(path, {{"w", t}, {"bits", b}});

  // Byte-level check of the header and first record.
  std::ifstream f(path, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(buf.size() == 4 + 4 + 4 + (2 + 1 + 2 + 16 + 8) + (2 + 4 + 2 + 16 + 8));
  CHECK(buf.substr(0, 4) == "LABC");
  CHECK(static_cast<unsigned char>(buf[4]) == 1);  // version LE
  CHECK(static_cast<unsigned char>(buf[8]) == 2);  // tensor count LE
  CHECK(static_cast<unsigned char>(buf[12]) == 1);  // name length LE
  CHECK(buf[14] == 'w');
  CHECK(buf[15] == 0);  // dtype real-32
  CHECK(buf[16] == 4);  // rank
  // bit record: name "bits", dtype 1, payload word 0b101 LE
  const size_t bit_rec = 12 + 2 + 1 + 2 + 16 + 8;
  CHECK(buf.substr(bit_rec + 2, 4) == "bits");
  CHECK(buf[bit_rec + 6] == 1);
  CHECK(static_cast<unsigned char>(buf[bit_rec + 24]) == 0x5);  // LSB-first packed word

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name == "w");
  const auto& lt = std::get<Tensor<float>>(loaded[0].value);
  CHECK(lt.data()[0] == 1.0f);
  CHECK(lt.data()[1] == -2.5f);
  CHECK(std::get<BitTensor>(loaded[1].value) == b);
  fs::remove(path);
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "labnn_ckpt_bad.labc").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  {
    Tensor<float> t({1, 1, 1, 4});
    save_checkpoint(path, {{"w", t}});
    // chop the payload
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size() - 5));
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  fs::remove(path);
}
