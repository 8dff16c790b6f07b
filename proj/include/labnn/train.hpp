#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "labnn/nets.hpp"

namespace labnn {

enum class DatasetKind { kMnistIdx, kCifar10Binary };
enum class Split { kTrain, kTest };

std::string dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& name);

// Raw pixels plus labels; images are channel-major uint8, ten classes.
// Normalization constants are the usual per-channel mean/std for the kind
// and may be overridden before batching.
struct Dataset {
  DatasetKind kind = DatasetKind::kMnistIdx;
  Split split = Split::kTrain;
  int64_t count = 0, channels = 0, height = 0, width = 0;
  std::vector<uint8_t> pixels;  // count * channels * height * width
  std::vector<uint8_t> labels;
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stdev{1, 1, 1};

  int64_t image_bytes() const { return channels * height * width; }
};

// dir holds the standard files: train-images-idx3-ubyte / t10k-... for
// mnist-idx, data_batch_*.bin / test_batch.bin for cifar10-binary.
Dataset load_dataset(const std::string& dir, DatasetKind kind, Split split);

Dataset dataset_head(const Dataset& d, int64_t count);

// Normalized batch; augment applies pad-4 random crop plus horizontal flip.
template <typename T>
Tensor<T> make_batch(const Dataset& d, const std::vector<int64_t>& indices, bool augment,
                     Rng* rng);

enum class OptimizerKind { kAdam, kSgdMomentum };
enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  int64_t batch_size = 128;
  double lr = 1.25e-3;
  int64_t epochs = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::kCosine;
  bool augment = false;
  int64_t log_every = 50;
  int64_t eval_batch = 200;
};

std::string optimizer_kind_name(OptimizerKind k);
OptimizerKind optimizer_kind_from_name(const std::string& name);
std::string lr_schedule_name(LrSchedule s);
LrSchedule lr_schedule_from_name(const std::string& name);

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, int64_t batch = 200);

struct TrainLogRow {
  int64_t epoch = 0, step = 0;
  double lr = 0.0, loss = 0.0, top1 = 0.0, top5 = 0.0;
  std::vector<double> betas;  // one per LAB site, model order
};

template <typename T>
struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<std::string> beta_names;
  EvalResult final_eval;   // on test when given, else on train
  double final_loss = 0.0;
};

// Trains in place. Aborts with a diagnostic if the loss turns non-finite.
// csv, when given, receives one header plus one row per logged step.
template <typename T>
TrainResult<T> train_model(Model<T>& model, const Dataset& train, const Dataset* test,
                           const TrainConfig& cfg, std::ostream* csv = nullptr);

// Placement study: all 16 stage masks of LAB-vs-sign on a 4-stage base
// spec, identical seed and schedule, sorted by top-1 descending.
struct SweepRow {
  int mask = 0;  // bit s set -> stage s+1 uses LAB
  double top1 = 0.0, top5 = 0.0;
  int64_t model_bytes = 0;
  double latency_ms = 0.0;
};

std::vector<SweepRow> placement_sweep(const ModelSpec& base, const Dataset& train,
                                      const Dataset& test, const TrainConfig& cfg,
                                      std::ostream* progress = nullptr);

}  // namespace labnn
