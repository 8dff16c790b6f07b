#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "labnn/train.hpp"
#include "oracles.hpp"

using namespace labnn;
namespace fs = std::filesystem;

namespace {

void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

// Synthetic 10-class set in MNIST IDX format: each class is a distinct
// bright quadrant/stripe pattern plus pixel noise, trivially separable.
void write_synth_mnist(const fs::path& dir, int64_t n_train, int64_t n_test, uint64_t seed) {
  fs::create_directories(dir);
  Rng rng(seed);
  auto write_split = [&](const std::string& stem, int64_t n) {
    std::string img, lab;
    put_be32(img, 0x00000803);
    put_be32(img, static_cast<uint32_t>(n));
    put_be32(img, 28);
    put_be32(img, 28);
    put_be32(lab, 0x00000801);
    put_be32(lab, static_cast<uint32_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const int cls = static_cast<int>(i % 10);
      lab.push_back(static_cast<char>(cls));
      for (int64_t y = 0; y < 28; ++y) {
        for (int64_t x = 0; x < 28; ++x) {
          // class-dependent stripe position
          const bool on = (y / 3) % 10 == cls || (x / 3) % 10 == cls;
          int v = on ? 220 : 30;
          v += static_cast<int>(rng.below(21)) - 10;
          img.push_back(static_cast<char>(std::clamp(v, 0, 255)));
        }
      }
    }
    std::ofstream fi(dir / (stem + "-images-idx3-ubyte"), std::ios::binary);
    fi << img;
    std::ofstream fl(dir / (stem + "-labels-idx1-ubyte"), std::ios::binary);
    fl << lab;
  };
  write_split("train", n_train);
  write_split("t10k", n_test);
}

ModelSpec small_spec(BinarizerKind bin) {
  ModelSpec spec;
  spec.input = {1, 1, 28, 28};
  spec.stages.resize(2);
  spec.stages[0] = {1, 8, 2, bin, -0.2, 0.0, 3, true};
  spec.stages[1] = {1, 16, 2, bin, -0.2, 0.0, 3, true};
  return spec;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("mnist-idx loader parses headers and rejects corruption") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist";
  write_synth_mnist(dir, 40, 20, 1);

  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);
  CHECK(train.count == 40);
  CHECK(train.channels == 1);
  CHECK(train.height == 28);
  CHECK(train.width == 28);
  Dataset test = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTest);
  CHECK(test.count == 20);

  // corrupt magic -> error, no partial handle
  std::string buf = file_bytes(dir / "train-images-idx3-ubyte");
  buf[0] = 0x7f;
  {
    std::ofstream f(dir / "train-images-idx3-ubyte", std::ios::binary);
    f << buf;
  }
  CHECK_THROWS_AS(load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain), Error);

  // truncated payload
  buf[0] = 0x00;
  {
    std::ofstream f(dir / "train-images-idx3-ubyte", std::ios::binary);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size() - 10));
  }
  CHECK_THROWS_AS(load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain), Error);
  fs::remove_all(dir);
}

TEST_CASE("cifar10-binary loader parses records and rejects bad labels") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_cifar";
  fs::create_directories(dir);
  Rng rng(2);
  auto write_batch = [&](const std::string& name, int64_t n, bool corrupt_label) {
    std::string buf;
    for (int64_t i = 0; i < n; ++i) {
      buf.push_back(static_cast<char>(corrupt_label && i == n - 1 ? 17 : i % 10));
      for (int64_t j = 0; j < 3072; ++j) buf.push_back(static_cast<char>(rng.below(256)));
    }
    std::ofstream f(dir / name, std::ios::binary);
    f << buf;
  };
  for (int i = 1; i <= 5; ++i) write_batch("data_batch_" + std::to_string(i) + ".bin", 12, false);
  write_batch("test_batch.bin", 8, false);

  Dataset train = load_dataset(dir.string(), DatasetKind::kCifar10Binary, Split::kTrain);
  CHECK(train.count == 60);
  CHECK(train.channels == 3);
  CHECK(train.height == 32);
  Dataset test = load_dataset(dir.string(), DatasetKind::kCifar10Binary, Split::kTest);
  CHECK(test.count == 8);

  write_batch("test_batch.bin", 8, true);  // label 17
  CHECK_THROWS_AS(load_dataset(dir.string(), DatasetKind::kCifar10Binary, Split::kTest), Error);

  {  // truncated record
    std::ofstream f(dir / "test_batch.bin", std::ios::binary | std::ios::trunc);
    f << "abc";
  }
  CHECK_THROWS_AS(load_dataset(dir.string(), DatasetKind::kCifar10Binary, Split::kTest), Error);
  fs::remove_all(dir);
}

TEST_CASE("make_batch normalizes and augmentation stays in range") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist2";
  write_synth_mnist(dir, 20, 10, 3);
  Dataset d = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);
  Rng rng(4);
  Tensor<float> plain = make_batch<float>(d, {0, 1, 2}, false, nullptr);
  CHECK(plain.shape() == Shape4{3, 1, 28, 28});
  const double expect = (static_cast<double>(d.pixels[0]) / 255.0 - d.mean[0]) / d.stdev[0];
  CHECK(plain.at(0, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-6));
  Tensor<float> aug = make_batch<float>(d, {0, 1, 2}, true, &rng);
  for (int64_t i = 0; i < aug.count(); ++i) CHECK(std::isfinite(aug.data()[i]));
  fs::remove_all(dir);
}

TEST_CASE("smoke training: loss decreases on the separable synthetic task") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist3";
  write_synth_mnist(dir, 64, 32, 5);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);

  Model<float> m(small_spec(BinarizerKind::kSignSte), 6);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 2e-3;
  cfg.epochs = 6;
  cfg.seed = 6;
  cfg.log_every = 1;
  auto res = train_model(m, train, nullptr, cfg, nullptr);

  const auto& log = res.log;
  REQUIRE(log.size() >= 8u);
  double first_window = 0, last_window = 0;
  for (int i = 0; i < 4; ++i) {
    first_window += log[static_cast<size_t>(i)].loss;
    last_window += log[log.size() - 1 - static_cast<size_t>(i)].loss;
  }
  CHECK(last_window < first_window);
  fs::remove_all(dir);
}

TEST_CASE("memorization: 32 samples reach loss < 0.05 within 200 steps for sign and LAB") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist4";
  write_synth_mnist(dir, 32, 10, 7);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);

  for (BinarizerKind kind : {BinarizerKind::kSignSte, BinarizerKind::kLab}) {
    ModelSpec spec = small_spec(kind);
    spec.stages[0].channels = 16;
    spec.stages[1].channels = 32;
    Model<float> m(spec, 8);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.lr = 1e-2;
    cfg.epochs = 200;  // batch == dataset, so one step per epoch
    cfg.seed = 8;
    cfg.log_every = 1;
    cfg.schedule = LrSchedule::kConstant;
    auto res = train_model(m, train, nullptr, cfg, nullptr);
    double best = 1e9;
    for (const auto& row : res.log) best = std::min(best, row.loss);
    INFO("variant ", binarizer_kind_name(kind), " best loss ", best);
    CHECK(best < 0.05);

    // perfect memorization shows up as 1.0 / 1.0 on the training set
    const EvalResult ev = evaluate(m, train);
    CHECK(ev.top1 == 1.0);
    CHECK(ev.top5 == 1.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("evaluate: random-init model sits at chance level; top5 >= top1") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist5";
  write_synth_mnist(dir, 10, 1000, 9);
  Dataset test = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTest);
  Model<float> m(small_spec(BinarizerKind::kSignSte), 10);
  const EvalResult ev = evaluate(m, test);
  CHECK(ev.top5 >= ev.top1);
  CHECK(ev.top1 == doctest::Approx(0.1).epsilon(0.5));  // 0.1 +- 0.05
  fs::remove_all(dir);
}

TEST_CASE("determinism: same seed and config give byte-identical checkpoints") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist6";
  write_synth_mnist(dir, 48, 10, 11);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);

  auto run = [&](const fs::path& out) {
    Model<float> m(small_spec(BinarizerKind::kLab), 12);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    cfg.epochs = 2;
    cfg.seed = 12;
    train_model(m, train, nullptr, cfg, nullptr);
    m.save(out.string());
  };
  const fs::path a = fs::temp_directory_path() / "labnn_det_a.labc";
  const fs::path b = fs::temp_directory_path() / "labnn_det_b.labc";
  run(a);
  run(b);
  CHECK(file_bytes(a) == file_bytes(b));
  CHECK(!file_bytes(a).empty());
  fs::remove(a);
  fs::remove(b);
  fs::remove_all(dir);
}

TEST_CASE("gradient flow: one step changes every trainable layer, betas drift") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist7";
  write_synth_mnist(dir, 16, 10, 13);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);

  Model<float> m(small_spec(BinarizerKind::kLab), 14);
  std::vector<Tensor<float>> before;
  for (const auto& p : m.params()) before.push_back(p.value);

  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 1e-3;
  cfg.epochs = 4;
  cfg.seed = 14;
  train_model(m, train, nullptr, cfg, nullptr);

  for (size_t i = 0; i < m.params().size(); ++i) {
    bool changed = false;
    for (int64_t j = 0; j < before[i].count(); ++j) {
      if (m.params()[i].value.data()[j] != before[i].data()[j]) {
        changed = true;
        break;
      }
    }
    INFO("param ", m.params()[i].name);
    CHECK(changed);
  }
  for (const auto& [name, beta] : m.lab_betas()) {
    INFO("beta at ", name);
    CHECK(beta != 1.0f);
  }
  fs::remove_all(dir);
}

TEST_CASE("sgd-momentum optimizer also trains the smoke task") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist_sgd";
  write_synth_mnist(dir, 64, 16, 21);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);
  Model<float> m(small_spec(BinarizerKind::kSignSte), 22);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 2e-3;
  cfg.epochs = 6;
  cfg.seed = 22;
  cfg.log_every = 1;
  cfg.optimizer = OptimizerKind::kSgdMomentum;
  cfg.schedule = LrSchedule::kConstant;
  auto res = train_model(m, train, nullptr, cfg, nullptr);
  double first = 0, last = 0;
  for (int i = 0; i < 4; ++i) {
    first += res.log[static_cast<size_t>(i)].loss;
    last += res.log[res.log.size() - 1 - static_cast<size_t>(i)].loss;
  }
  CHECK(last < first);
  fs::remove_all(dir);
}

TEST_CASE("training rejects bad configs and diverging losses abort") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist8";
  write_synth_mnist(dir, 16, 10, 15);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);
  Model<float> m(small_spec(BinarizerKind::kSignSte), 16);
  TrainConfig cfg;
  cfg.batch_size = 1;  // batchnorm needs >= 2
  CHECK_THROWS_AS(train_model(m, train, nullptr, cfg, nullptr), Error);
  cfg.batch_size = 16;
  cfg.lr = -1.0;
  CHECK_THROWS_AS(train_model(m, train, nullptr, cfg, nullptr), Error);
  fs::remove_all(dir);
}

TEST_CASE("train log CSV has the expected columns including per-site betas") {
  const fs::path dir = fs::temp_directory_path() / "labnn_synth_mnist9";
  write_synth_mnist(dir, 16, 10, 17);
  Dataset train = load_dataset(dir.string(), DatasetKind::kMnistIdx, Split::kTrain);
  Model<float> m(small_spec(BinarizerKind::kLab), 18);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.seed = 18;
  std::ostringstream csv;
  train_model(m, train, nullptr, cfg, &csv);
  std::istringstream is(csv.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,step,lr,loss,top1,top5,beta.s1.l0,beta.s2.l0");
  std::string row;
  CHECK(std::getline(is, row).good());
  fs::remove_all(dir);
}
