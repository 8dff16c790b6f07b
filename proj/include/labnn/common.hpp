#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace labnn {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

#define LABNN_CHECK(cond, msg)                         \
  do {                                                 \
    if (!(cond)) ::labnn::fail(std::string("check failed: ") + (msg)); \
  } while (0)

// Thread count for kernel-internal parallelism. 1 by default; training and
// benchmarking stay deterministic for any fixed value because all parallel
// loops use static partitioning.
void set_threads(int n);
int threads();

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// transforms below avoid the implementation-defined std distributions so
// that identical seeds give identical streams everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    have_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  uint64_t next() { return eng_(); }

  int64_t below(int64_t n) {  // uniform in [0, n)
    LABNN_CHECK(n > 0, "Rng::below needs n > 0");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x = 0;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates, pinned draw order
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace labnn
