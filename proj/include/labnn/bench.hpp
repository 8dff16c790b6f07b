#pragma once

#include <string>
#include <vector>

#include "labnn/nets.hpp"

namespace labnn {

// Wall-clock microbenchmark of packed inference with per-operator
// attribution. Times are microseconds over `runs` timed repetitions after
// `warmup` untimed ones (the first warmup run also packs the weights).
struct BenchReport {
  struct OpRow {
    std::string op;  // "layer/op"
    double mean_us = 0, min_us = 0, max_us = 0, median_us = 0;
  };
  std::vector<OpRow> rows;
  double e2e_mean_us = 0, e2e_min_us = 0, e2e_max_us = 0, e2e_median_us = 0;
  double other_mean_us = 0;  // end-to-end minus attributed
  double coverage = 0;       // attributed mean / end-to-end mean
  int64_t runs = 0, warmup = 0;
  int threads = 1;
};

template <typename T>
BenchReport bench_model(const Model<T>& model, int64_t batch = 1, int64_t runs = 50,
                        int64_t warmup = 5, int threads = 1);

}  // namespace labnn
