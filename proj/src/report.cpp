#include "labnn/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace labnn {

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

std::string fmt_int(int64_t v) { return std::to_string(v); }

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  LABNN_CHECK(f.good(), "cannot open for write: " + path);
  f << content;
  LABNN_CHECK(f.good(), "write failed: " + path);
}

void write_pgm(const std::string& path, const BitTensor& b, int64_t n, int64_t c) {
  const Shape4& s = b.shape();
  LABNN_CHECK(n < s.n && c < s.c, "write_pgm: slice out of range");
  std::ostringstream os;
  os << "P2\n" << s.w << " " << s.h << "\n255\n";
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) {
      os << (b.get(n, c, y, x) ? 255 : 0) << (x + 1 == s.w ? "" : " ");
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

template <typename T>
void write_pgm_real(const std::string& path, const Tensor<T>& t, int64_t n, int64_t c) {
  const Shape4& s = t.shape();
  LABNN_CHECK(n < s.n && c < s.c, "write_pgm_real: slice out of range");
  T lo = t.at(n, c, 0, 0), hi = lo;
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      lo = std::min(lo, t.at(n, c, y, x));
      hi = std::max(hi, t.at(n, c, y, x));
    }
  const double range = hi > lo ? static_cast<double>(hi - lo) : 1.0;
  std::ostringstream os;
  os << "P2\n" << s.w << " " << s.h << "\n255\n";
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) {
      const int v =
          static_cast<int>(255.0 * (static_cast<double>(t.at(n, c, y, x)) - lo) / range + 0.5);
      os << v << (x + 1 == s.w ? "" : " ");
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

template void write_pgm_real<float>(const std::string&, const Tensor<float>&, int64_t, int64_t);
template void write_pgm_real<double>(const std::string&, const Tensor<double>&, int64_t, int64_t);

}  // namespace labnn
