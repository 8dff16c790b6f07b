#include "labnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "labnn/report.hpp"

namespace labnn {

std::string dataset_kind_name(DatasetKind k) {
  return k == DatasetKind::kMnistIdx ? "mnist-idx" : "cifar10-binary";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "mnist-idx" || name == "mnist") return DatasetKind::kMnistIdx;
  if (name == "cifar10-binary" || name == "cifar10") return DatasetKind::kCifar10Binary;
  fail("unknown dataset kind: " + name + " (want mnist-idx|cifar10-binary)");
}

std::string optimizer_kind_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd-momentum";
}

OptimizerKind optimizer_kind_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::kSgdMomentum;
  fail("unknown optimizer: " + name + " (want adam|sgd-momentum)");
}

std::string lr_schedule_name(LrSchedule s) {
  return s == LrSchedule::kConstant ? "constant" : "cosine";
}

LrSchedule lr_schedule_from_name(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  fail("unknown lr schedule: " + name + " (want constant|cosine)");
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  LABNN_CHECK(f.good(), "cannot open dataset file: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

uint32_t be32(const std::string& buf, size_t off) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

Dataset load_mnist(const std::string& dir, Split split) {
  const std::string stem = split == Split::kTrain ? "train" : "t10k";
  const std::string ipath = dir + "/" + stem + "-images-idx3-ubyte";
  const std::string lpath = dir + "/" + stem + "-labels-idx1-ubyte";
  const std::string ibuf = read_file(ipath);
  const std::string lbuf = read_file(lpath);

  LABNN_CHECK(ibuf.size() >= 16, "truncated IDX image header: " + ipath);
  LABNN_CHECK(be32(ibuf, 0) == 0x00000803, "bad IDX image magic in " + ipath);
  const int64_t n = be32(ibuf, 4);
  const int64_t rows = be32(ibuf, 8);
  const int64_t cols = be32(ibuf, 12);
  LABNN_CHECK(static_cast<int64_t>(ibuf.size()) == 16 + n * rows * cols,
              "truncated IDX image payload: " + ipath);

  LABNN_CHECK(lbuf.size() >= 8, "truncated IDX label header: " + lpath);
  LABNN_CHECK(be32(lbuf, 0) == 0x00000801, "bad IDX label magic in " + lpath);
  LABNN_CHECK(static_cast<int64_t>(be32(lbuf, 4)) == n, "image/label count mismatch: " + lpath);
  LABNN_CHECK(static_cast<int64_t>(lbuf.size()) == 8 + n, "truncated IDX label payload: " + lpath);

  Dataset d;
  d.kind = DatasetKind::kMnistIdx;
  d.split = split;
  d.count = n;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.pixels.assign(ibuf.begin() + 16, ibuf.end());
  d.labels.assign(lbuf.begin() + 8, lbuf.end());
  for (uint8_t l : d.labels) LABNN_CHECK(l < 10, "label out of range in " + lpath);
  d.mean = {0.1307, 0.1307, 0.1307};
  d.stdev = {0.3081, 0.3081, 0.3081};
  return d;
}

Dataset load_cifar10(const std::string& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  Dataset d;
  d.kind = DatasetKind::kCifar10Binary;
  d.split = split;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  constexpr int64_t kRecord = 3073;
  for (const std::string& path : files) {
    const std::string buf = read_file(path);
    LABNN_CHECK(!buf.empty() && static_cast<int64_t>(buf.size()) % kRecord == 0,
                "truncated CIFAR-10 batch (size not a multiple of 3073): " + path);
    const int64_t n = static_cast<int64_t>(buf.size()) / kRecord;
    for (int64_t i = 0; i < n; ++i) {
      const uint8_t label = static_cast<uint8_t>(buf[i * kRecord]);
      LABNN_CHECK(label < 10, "label out of range in " + path);
      d.labels.push_back(label);
      const char* px = buf.data() + i * kRecord + 1;
      d.pixels.insert(d.pixels.end(), px, px + 3072);
    }
    d.count += n;
  }
  d.mean = {0.4914, 0.4822, 0.4465};
  d.stdev = {0.2470, 0.2435, 0.2616};
  return d;
}

}  // namespace

Dataset load_dataset(const std::string& dir, DatasetKind kind, Split split) {
  return kind == DatasetKind::kMnistIdx ? load_mnist(dir, split) : load_cifar10(dir, split);
}

Dataset dataset_head(const Dataset& d, int64_t count) {
  LABNN_CHECK(count >= 1, "dataset_head needs count >= 1");
  if (count >= d.count) return d;
  Dataset out = d;
  out.count = count;
  out.pixels.assign(d.pixels.begin(), d.pixels.begin() + count * d.image_bytes());
  out.labels.assign(d.labels.begin(), d.labels.begin() + count);
  return out;
}

template <typename T>
Tensor<T> make_batch(const Dataset& d, const std::vector<int64_t>& indices, bool augment,
                     Rng* rng) {
  LABNN_CHECK(!indices.empty(), "empty batch");
  const int64_t c = d.channels, h = d.height, w = d.width;
  Tensor<T> out({static_cast<int64_t>(indices.size()), c, h, w});
  for (size_t bi = 0; bi < indices.size(); ++bi) {
    const int64_t idx = indices[bi];
    LABNN_CHECK(idx >= 0 && idx < d.count, "batch index out of range");
    const uint8_t* img = d.pixels.data() + idx * d.image_bytes();
    int64_t dy = 0, dx = 0;
    bool flip = false;
    if (augment && rng) {
      dy = rng->below(9) - 4;  // pad-4 random crop
      dx = rng->below(9) - 4;
      flip = rng->uniform() < 0.5;
    }
    for (int64_t ci = 0; ci < c; ++ci) {
      const double mean = d.mean[static_cast<size_t>(ci)];
      const double stdev = d.stdev[static_cast<size_t>(ci)];
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          const int64_t sy = y + dy;
          const int64_t sx = flip ? (w - 1 - (x + dx)) : (x + dx);
          double v = 0.0;  // zero padding outside the crop
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            v = static_cast<double>(img[(ci * h + sy) * w + sx]) / 255.0;
          }
          out.at(static_cast<int64_t>(bi), ci, y, x) = static_cast<T>((v - mean) / stdev);
        }
      }
    }
  }
  return out;
}

namespace {

// rank of the true class among the logits; ties broken by class index.
template <typename T>
int label_rank(const T* logits, int64_t k, int label) {
  int rank = 0;
  for (int64_t j = 0; j < k; ++j) {
    if (logits[j] > logits[label] || (logits[j] == logits[label] && j < label)) ++rank;
  }
  return rank;
}

template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<typename Model<T>::Param>& params) : cfg_(cfg) {
    if (cfg.optimizer == OptimizerKind::kAdam) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params[i].value.count()), T(0));
        v_[i].assign(static_cast<size_t>(params[i].value.count()), T(0));
      }
    } else {
      m_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params[i].value.count()), T(0));
      }
    }
  }

  void step(std::vector<typename Model<T>::Param>& params, const std::vector<const T*>& grads,
            double lr) {
    ++t_;
    if (cfg_.optimizer == OptimizerKind::kAdam) {
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (size_t i = 0; i < params.size(); ++i) {
        T* p = params[i].value.data();
        const T* g = grads[i];
        T* m = m_[i].data();
        T* v = v_[i].data();
        const int64_t n = params[i].value.count();
        for (int64_t j = 0; j < n; ++j) {
          m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
          v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * static_cast<double>(g[j]) * g[j]);
          const double mhat = m[j] / bc1;
          const double vhat = v[j] / bc2;
          p[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
        }
      }
    } else {
      const double mu = 0.9;
      for (size_t i = 0; i < params.size(); ++i) {
        T* p = params[i].value.data();
        const T* g = grads[i];
        T* m = m_[i].data();
        const int64_t n = params[i].value.count();
        for (int64_t j = 0; j < n; ++j) {
          m[j] = static_cast<T>(mu * m[j] + g[j]);
          p[j] -= static_cast<T>(lr * m[j]);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, int64_t batch) {
  LABNN_CHECK(data.count > 0, "evaluate on empty dataset");
  int64_t top1 = 0, top5 = 0;
  for (int64_t start = 0; start < data.count; start += batch) {
    const int64_t n = std::min(batch, data.count - start);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> b = make_batch<T>(data, idx, false, nullptr);
    const Tensor<T> logits = model.infer(b, Model<T>::InferPath::kGemm);
    const int64_t k = logits.shape().c;
    for (int64_t i = 0; i < n; ++i) {
      const int rank = label_rank(logits.data() + i * k, k, data.labels[start + i]);
      if (rank == 0) ++top1;
      if (rank < 5) ++top5;
    }
  }
  return {static_cast<double>(top1) / static_cast<double>(data.count),
          static_cast<double>(top5) / static_cast<double>(data.count)};
}

template <typename T>
TrainResult<T> train_model(Model<T>& model, const Dataset& train, const Dataset* test,
                           const TrainConfig& cfg, std::ostream* csv) {
  LABNN_CHECK(cfg.batch_size >= 2, "batch size must be >= 2 (batchnorm)");
  LABNN_CHECK(cfg.lr > 0, "learning rate must be positive");
  LABNN_CHECK(train.count >= cfg.batch_size, "training set smaller than one batch");

  TrainResult<T> result;
  for (const auto& [name, beta] : model.lab_betas()) result.beta_names.push_back(name);

  if (csv) {
    *csv << "epoch,step,lr,loss,top1,top5";
    for (const std::string& n : result.beta_names) *csv << ",beta." << n;
    *csv << "\n";
  }

  Rng data_rng(cfg.seed + 0x9e3779b97f4a7c15ull);
  Optimizer<T> opt(cfg, model.params());

  std::vector<int64_t> order(static_cast<size_t>(train.count));
  std::iota(order.begin(), order.end(), 0);
  const int64_t steps_per_epoch = train.count / cfg.batch_size;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  int64_t step = 0;

  auto log_row = [&](int64_t epoch, double lr, double loss, double top1, double top5) {
    TrainLogRow row;
    row.epoch = epoch;
    row.step = step;
    row.lr = lr;
    row.loss = loss;
    row.top1 = top1;
    row.top5 = top5;
    for (const auto& [name, beta] : model.lab_betas()) row.betas.push_back(static_cast<double>(beta));
    if (csv) {
      *csv << row.epoch << "," << row.step << "," << fmt_real(row.lr) << "," << fmt_real(row.loss)
           << "," << fmt_real(row.top1) << "," << fmt_real(row.top5);
      for (double b : row.betas) *csv << "," << fmt_real(b);
      *csv << "\n" << std::flush;
    }
    result.log.push_back(std::move(row));
  };

  double last_loss = 0.0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    data_rng.shuffle(order);
    for (int64_t bi = 0; bi < steps_per_epoch; ++bi, ++step) {
      const std::vector<int64_t> idx(order.begin() + bi * cfg.batch_size,
                                     order.begin() + (bi + 1) * cfg.batch_size);
      const Tensor<T> batch = make_batch<T>(train, idx, cfg.augment, &data_rng);
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];

      double lr = cfg.lr;
      if (cfg.schedule == LrSchedule::kCosine) {
        lr = cfg.lr * 0.5 *
             (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                             static_cast<double>(total_steps)));
      }

      Tape<T> tape;
      auto g = model.build_graph(tape, batch, labels, BinMode::kHard, true);
      tape.backward(g.loss);
      last_loss = static_cast<double>(tape.val(g.loss).data()[0]);
      if (!std::isfinite(last_loss)) {
        fail("training diverged (non-finite loss) at epoch " + std::to_string(epoch) + " step " +
             std::to_string(step));
      }

      std::vector<const T*> grads;
      grads.reserve(model.params().size());
      for (size_t i = 0; i < model.params().size(); ++i) {
        grads.push_back(tape.val(g.param_leaves[i]).grad());
      }
      opt.step(model.params(), grads, lr);
      model.clamp_latent_weights();

      if (step % cfg.log_every == 0 || bi == steps_per_epoch - 1) {
        int64_t t1 = 0, t5 = 0;
        const Tensor<T>& logits = tape.val(g.logits);
        const int64_t k = logits.shape().c;
        for (size_t i = 0; i < idx.size(); ++i) {
          const int rank = label_rank(logits.data() + static_cast<int64_t>(i) * k, k, labels[i]);
          if (rank == 0) ++t1;
          if (rank < 5) ++t5;
        }
        log_row(epoch, lr, last_loss, static_cast<double>(t1) / static_cast<double>(idx.size()),
                static_cast<double>(t5) / static_cast<double>(idx.size()));
      }
    }
  }

  result.final_loss = last_loss;
  result.final_eval = evaluate(model, test ? *test : train, cfg.eval_batch);
  return result;
}

std::vector<SweepRow> placement_sweep(const ModelSpec& base, const Dataset& train,
                                      const Dataset& test, const TrainConfig& cfg,
                                      std::ostream* progress) {
  LABNN_CHECK(base.stages.size() == 4, "placement sweep expects a 4-stage spec");
  std::vector<SweepRow> rows;
  for (int mask = 0; mask < 16; ++mask) {
    ModelSpec spec = base;
    for (int s = 0; s < 4; ++s) {
      spec.stages[static_cast<size_t>(s)].binarizer =
          (mask & (1 << s)) ? BinarizerKind::kLab : BinarizerKind::kSignSte;
    }
    Model<float> model(spec, cfg.seed);
    train_model(model, train, nullptr, cfg, nullptr);
    const EvalResult ev = evaluate(model, test, cfg.eval_batch);

    // single-image packed-path latency, small sample
    Rng rng(cfg.seed);
    Tensor<float> probe({1, spec.input.c, spec.input.h, spec.input.w});
    for (int64_t i = 0; i < probe.count(); ++i) probe.data()[i] = static_cast<float>(rng.normal());
    model.infer(probe);  // warm the packed cache
    double best_ms = 0.0;
    const int reps = 5;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) model.infer(probe);
    const auto t1 = std::chrono::steady_clock::now();
    best_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;

    rows.push_back({mask, ev.top1, ev.top5, model.deployed_bytes(), best_ms});
    if (progress) {
      *progress << "mask " << mask << ": top1 " << ev.top1 << " top5 " << ev.top5 << " bytes "
                << model.deployed_bytes() << " latency_ms " << best_ms << "\n"
                << std::flush;
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.top1 > b.top1; });
  return rows;
}

#define LABNN_INSTANTIATE_TRAIN(T)                                                              \
  template Tensor<T> make_batch<T>(const Dataset&, const std::vector<int64_t>&, bool, Rng*);    \
  template EvalResult evaluate<T>(const Model<T>&, const Dataset&, int64_t);                    \
  template TrainResult<T> train_model<T>(Model<T>&, const Dataset&, const Dataset*,             \
                                         const TrainConfig&, std::ostream*);

LABNN_INSTANTIATE_TRAIN(float)
LABNN_INSTANTIATE_TRAIN(double)
#undef LABNN_INSTANTIATE_TRAIN

}  // namespace labnn
