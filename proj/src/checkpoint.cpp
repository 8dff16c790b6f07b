#include "labnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace labnn {

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  const char* take(size_t n) {
    LABNN_CHECK(pos_ + n <= buf_.size(), "truncated checkpoint: " + path_);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  uint16_t u16() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2));
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  uint64_t u64() {
    uint64_t v = u32();
    return v | (static_cast<uint64_t>(u32()) << 32);
  }
  float f32() {
    const uint32_t bits = u32();
    float v = 0;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string out;
  out += "LABC";
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    LABNN_CHECK(nt.name.size() <= 0xffff, "tensor name too long: " + nt.name);
    put_u16(out, static_cast<uint16_t>(nt.name.size()));
    out += nt.name;
    if (const auto* t = std::get_if<Tensor<float>>(&nt.value)) {
      out.push_back(0);
      out.push_back(4);
      const Shape4& s = t->shape();
      put_u32(out, static_cast<uint32_t>(s.n));
      put_u32(out, static_cast<uint32_t>(s.c));
      put_u32(out, static_cast<uint32_t>(s.h));
      put_u32(out, static_cast<uint32_t>(s.w));
      for (int64_t i = 0; i < t->count(); ++i) put_f32(out, t->data()[i]);
    } else {
      const BitTensor& b = std::get<BitTensor>(nt.value);
      out.push_back(1);
      out.push_back(4);
      const Shape4& s = b.shape();
      put_u32(out, static_cast<uint32_t>(s.n));
      put_u32(out, static_cast<uint32_t>(s.c));
      put_u32(out, static_cast<uint32_t>(s.h));
      put_u32(out, static_cast<uint32_t>(s.w));
      for (int64_t i = 0; i < b.word_count(); ++i) put_u64(out, b.words()[i]);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  LABNN_CHECK(f.good(), "cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  LABNN_CHECK(f.good(), "write failed: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  LABNN_CHECK(f.good(), "cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(buf, path);
  LABNN_CHECK(std::memcmp(r.take(4), "LABC", 4) == 0, "bad checkpoint magic: " + path);
  const uint32_t version = r.u32();
  LABNN_CHECK(version == 1, "unsupported checkpoint version " + std::to_string(version));
  const uint32_t n_tensors = r.u32();

  std::vector<NamedTensor> out;
  out.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint16_t name_len = r.u16();
    std::string name(r.take(name_len), name_len);
    const uint8_t dtype = static_cast<uint8_t>(*r.take(1));
    const uint8_t rank = static_cast<uint8_t>(*r.take(1));
    LABNN_CHECK(rank == 4, "unsupported tensor rank in checkpoint");
    Shape4 s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    s.validate();
    if (dtype == 0) {
      Tensor<float> t(s);
      for (int64_t j = 0; j < t.count(); ++j) t.data()[j] = r.f32();
      out.push_back({std::move(name), std::move(t)});
    } else if (dtype == 1) {
      BitTensor b(s);
      for (int64_t j = 0; j < b.word_count(); ++j) b.words()[j] = r.u64();
      out.push_back({std::move(name), std::move(b)});
    } else {
      fail("unknown dtype code in checkpoint: " + std::to_string(dtype));
    }
  }
  LABNN_CHECK(r.done(), "trailing bytes in checkpoint: " + path);
  return out;
}

}  // namespace labnn
