#include "labnn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <map>

namespace labnn {

namespace {

struct Series {
  std::vector<double> us;
  double mean() const {
    double acc = 0;
    for (double v : us) acc += v;
    return acc / static_cast<double>(us.size());
  }
  double min() const { return *std::min_element(us.begin(), us.end()); }
  double max() const { return *std::max_element(us.begin(), us.end()); }
  double median() const {
    std::vector<double> s = us;
    std::sort(s.begin(), s.end());
    const size_t n = s.size();
    return n % 2 == 1 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  }
};

}  // namespace

template <typename T>
BenchReport bench_model(const Model<T>& model, int64_t batch, int64_t runs, int64_t warmup,
                        int threads) {
  LABNN_CHECK(runs >= 1, "bench needs runs >= 1");
  const int prev_threads = labnn::threads();
  set_threads(threads);

  const ModelSpec& spec = model.spec();
  Rng rng(12345);
  Tensor<T> input({batch, spec.input.c, spec.input.h, spec.input.w});
  for (int64_t i = 0; i < input.count(); ++i) input.data()[i] = static_cast<T>(rng.normal());

  for (int64_t i = 0; i < warmup; ++i) model.infer(input);

  std::map<std::string, Series> per_op;
  std::vector<std::string> op_order;
  Series e2e;
  Series attributed;
  for (int64_t r = 0; r < runs; ++r) {
    Profiler prof;
    const auto t0 = std::chrono::steady_clock::now();
    model.infer(input, Model<T>::InferPath::kPacked, &prof);
    const auto t1 = std::chrono::steady_clock::now();
    e2e.us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());

    std::map<std::string, double> this_run;
    double total = 0;
    for (const auto& [key, seconds] : prof.entries()) {
      if (per_op.find(key) == per_op.end()) op_order.push_back(key);
      this_run[key] += seconds * 1e6;
      total += seconds * 1e6;
    }
    for (const auto& [key, us] : this_run) per_op[key].us.push_back(us);
    attributed.us.push_back(total);
  }

  BenchReport rep;
  rep.runs = runs;
  rep.warmup = warmup;
  rep.threads = threads;
  for (const std::string& key : op_order) {
    const Series& s = per_op[key];
    rep.rows.push_back({key, s.mean(), s.min(), s.max(), s.median()});
  }
  rep.e2e_mean_us = e2e.mean();
  rep.e2e_min_us = e2e.min();
  rep.e2e_max_us = e2e.max();
  rep.e2e_median_us = e2e.median();
  rep.other_mean_us = rep.e2e_mean_us - attributed.mean();
  rep.coverage = attributed.mean() / rep.e2e_mean_us;

  set_threads(prev_threads);
  return rep;
}

template BenchReport bench_model<float>(const Model<float>&, int64_t, int64_t, int64_t, int);
template BenchReport bench_model<double>(const Model<double>&, int64_t, int64_t, int64_t, int);

}  // namespace labnn
