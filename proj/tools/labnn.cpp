// labnn: binary-neural-network toolkit CLI.
// Subcommands: train, eval, sweep-blocks, analyze, count-ops, bench, dump-maps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "labnn/analysis.hpp"
#include "labnn/bench.hpp"
#include "labnn/config.hpp"
#include "labnn/report.hpp"
#include "labnn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace labnn;

namespace {

const std::map<std::string, std::vector<std::string>> kSchema = {
    {"net",
     {"preset", "stages", "layers_per_stage", "base_channels", "binarizer", "binarizer_s1",
      "binarizer_s2", "binarizer_s3", "binarizer_s4", "niblack_k", "sauvola_k", "sauvola_R",
      "window", "prelu", "prelu_after_add", "stem", "stem_kernel", "stem_stride", "stem_maxpool",
      "shortcut", "classes", "lab_kernel", "input_channels", "input_size"}},
    {"train",
     {"dataset", "data_dir", "batch_size", "lr", "epochs", "optimizer", "schedule", "seed",
      "augment", "log_every", "limit_train", "limit_test", "eval_batch"}},
    {"analyze", {"images", "uniq_k", "uniq_padding", "uniq_binarizer", "dump_channels"}},
    {"bench", {"runs", "warmup", "threads", "batch"}},
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  int64_t seed = -1;     // -1: take from config
  int threads = 1;
  int64_t images = -1;   // -1: analysis default
  std::vector<std::string> sets;  // section.key=value overrides
};

RunConfig load_config(const CommonArgs& args) {
  LABNN_CHECK(!args.config_path.empty(), "missing --config");
  RunConfig cfg = RunConfig::parse_file(args.config_path);
  for (const std::string& s : args.sets) {
    const size_t dot = s.find('.');
    const size_t eq = s.find('=');
    LABNN_CHECK(dot != std::string::npos && eq != std::string::npos && dot < eq,
                "bad --set, want section.key=value: " + s);
    cfg.set(s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  if (args.seed >= 0) cfg.set("train", "seed", std::to_string(args.seed));
  cfg.require_known(kSchema);
  return cfg;
}

DatasetKind dataset_kind(const RunConfig& cfg) {
  return dataset_kind_from_name(cfg.get_str("train", "dataset", "mnist-idx"));
}

std::string resolve_data_dir(const RunConfig& cfg) {
  std::string dir = cfg.get_str("train", "data_dir", "");
  if (dir.empty()) {
    const char* env = std::getenv("LABNN_DATA_DIR");
    if (env) dir = env;
  }
  LABNN_CHECK(!dir.empty(), "no dataset root: set train.data_dir or LABNN_DATA_DIR");
  const DatasetKind kind = dataset_kind(cfg);
  const std::string sub = kind == DatasetKind::kMnistIdx ? "mnist" : "cifar-10-batches-bin";
  if (fs::exists(fs::path(dir) / sub)) return (fs::path(dir) / sub).string();
  return dir;
}

BinarizerKind stage_binarizer(const RunConfig& cfg, int stage_1based) {
  const std::string global = cfg.get_str("net", "binarizer", "sign");
  const std::string key = "binarizer_s" + std::to_string(stage_1based);
  return binarizer_kind_from_name(cfg.get_str("net", key, global));
}

ModelSpec spec_from_config(const RunConfig& cfg) {
  const std::string preset = cfg.get_str("net", "preset", "");
  if (preset == "resnet18-imagenet") {
    return ModelSpec::resnet18_imagenet(
        binarizer_kind_from_name(cfg.get_str("net", "binarizer", "sign")));
  }
  LABNN_CHECK(preset.empty() || preset == "desk", "unknown net.preset: " + preset);

  const DatasetKind kind = dataset_kind(cfg);
  const int64_t in_c = cfg.get_int("net", "input_channels",
                                   kind == DatasetKind::kMnistIdx ? 1 : 3);
  const int64_t in_hw = cfg.get_int("net", "input_size",
                                    kind == DatasetKind::kMnistIdx ? 28 : 32);
  ModelSpec spec;
  spec.input = {1, in_c, in_hw, in_hw};
  spec.stem = stem_kind_from_name(cfg.get_str("net", "stem", "plain"));
  spec.stem_kernel = cfg.get_int("net", "stem_kernel", 3);
  spec.stem_stride = cfg.get_int("net", "stem_stride", 1);
  spec.stem_maxpool = cfg.get_bool("net", "stem_maxpool", false);
  const std::string sc = cfg.get_str("net", "shortcut", "duplicate");
  if (sc == "duplicate") {
    spec.shortcut = ShortcutProjection::kPoolDuplicate;
  } else if (sc == "conv1x1") {
    spec.shortcut = ShortcutProjection::kConv1x1;
  } else {
    fail("unknown net.shortcut: " + sc + " (want duplicate|conv1x1)");
  }
  spec.classes = cfg.get_int("net", "classes", 10);
  spec.prelu_after_add = cfg.get_bool("net", "prelu_after_add", true);
  spec.lab_kernel = cfg.get_int("net", "lab_kernel", 3);

  const int64_t n_stages = cfg.get_int("net", "stages", 4);
  const int64_t layers = cfg.get_int("net", "layers_per_stage", 2);
  int64_t ch = cfg.get_int("net", "base_channels", 32);
  const bool prelu = cfg.get_bool("net", "prelu", true);
  spec.stages.resize(static_cast<size_t>(n_stages));
  for (int64_t i = 0; i < n_stages; ++i) {
    StageSpec& st = spec.stages[static_cast<size_t>(i)];
    st.layers = layers;
    st.channels = ch;
    st.stride = i == 0 ? 1 : 2;
    st.binarizer = stage_binarizer(cfg, static_cast<int>(i) + 1);
    st.use_prelu = prelu;
    st.bin_window = cfg.get_int("net", "window", 3);
    st.bin_R = cfg.get_real("net", "sauvola_R", 0.0);
    st.bin_k = st.binarizer == BinarizerKind::kNiblack ? cfg.get_real("net", "niblack_k", -0.2)
                                                       : cfg.get_real("net", "sauvola_k", 0.2);
    ch *= 2;
  }
  return spec;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = cfg.get_int("train", "batch_size", 128);
  tc.lr = cfg.get_real("train", "lr", 1.25e-3);
  tc.epochs = cfg.get_int("train", "epochs", 1);
  tc.optimizer = optimizer_kind_from_name(cfg.get_str("train", "optimizer", "adam"));
  tc.schedule = lr_schedule_from_name(cfg.get_str("train", "schedule", "cosine"));
  tc.seed = static_cast<uint64_t>(cfg.get_int("train", "seed", 0));
  tc.augment = cfg.get_bool("train", "augment", false);
  tc.log_every = cfg.get_int("train", "log_every", 50);
  tc.eval_batch = cfg.get_int("train", "eval_batch", 200);
  return tc;
}

Dataset load_split(const RunConfig& cfg, Split split) {
  Dataset d = load_dataset(resolve_data_dir(cfg), dataset_kind(cfg), split);
  const int64_t limit =
      cfg.get_int("train", split == Split::kTrain ? "limit_train" : "limit_test", 0);
  if (limit > 0) d = dataset_head(d, limit);
  return d;
}

void write_effective_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "effective-config.ini").string(), cfg.echo());
}

// ----------------------------------------------------------------------------

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  set_threads(args.threads);
  write_effective_config(cfg, args.out_dir);

  const ModelSpec spec = spec_from_config(cfg);
  const TrainConfig tc = train_config_from(cfg);
  const Dataset train = load_split(cfg, Split::kTrain);
  const Dataset test = load_split(cfg, Split::kTest);

  Model<float> model(spec, tc.seed);
  std::ofstream log_csv(fs::path(args.out_dir) / "train_log.csv");
  auto result = train_model(model, train, &test, tc, &log_csv);
  const std::string ckpt = (fs::path(args.out_dir) / "checkpoint.labc").string();
  model.save(ckpt);

  json summary;
  summary["final_top1"] = result.final_eval.top1;
  summary["final_top5"] = result.final_eval.top5;
  summary["final_loss"] = result.final_loss;
  summary["epochs"] = tc.epochs;
  summary["seed"] = tc.seed;
  summary["train_images"] = train.count;
  summary["test_images"] = test.count;
  summary["real_params"] = model.real_param_count();
  summary["binary_weights"] = model.binary_weight_count();
  summary["deployed_bytes"] = model.deployed_bytes();
  summary["checkpoint"] = "checkpoint.labc";
  summary["prelu_after_add"] = spec.prelu_after_add;
  summary["stem"] = stem_kind_name(spec.stem);
  summary["shortcut"] =
      spec.shortcut == ShortcutProjection::kPoolDuplicate ? "duplicate" : "conv1x1";
  json betas = json::object();
  for (const auto& [name, b] : model.lab_betas()) betas[name] = b;
  summary["lab_betas"] = betas;
  write_text_file((fs::path(args.out_dir) / "summary.json").string(), summary.dump(2) + "\n");

  std::cout << "train: top1 " << fmt_real(result.final_eval.top1) << " top5 "
            << fmt_real(result.final_eval.top5) << " loss " << fmt_real(result.final_loss)
            << " -> " << ckpt << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.checkpoint.empty(), "missing --checkpoint");
  set_threads(args.threads);

  Model<float> model(spec_from_config(cfg), 0);
  model.load(args.checkpoint);
  const Dataset test = load_split(cfg, Split::kTest);
  const EvalResult ev = evaluate(model, test, train_config_from(cfg).eval_batch);
  std::cout << "eval: top1 " << fmt_real(ev.top1) << " top5 " << fmt_real(ev.top5) << " on "
            << test.count << " images\n";
  if (!args.out_dir.empty()) {
    write_effective_config(cfg, args.out_dir);
    json j;
    j["top1"] = ev.top1;
    j["top5"] = ev.top5;
    j["images"] = test.count;
    j["checkpoint"] = args.checkpoint;
    write_text_file((fs::path(args.out_dir) / "eval.json").string(), j.dump(2) + "\n");
  }
  return 0;
}

int cmd_sweep_blocks(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  set_threads(args.threads);
  write_effective_config(cfg, args.out_dir);

  const ModelSpec base = spec_from_config(cfg);
  const TrainConfig tc = train_config_from(cfg);
  const Dataset train = load_split(cfg, Split::kTrain);
  const Dataset test = load_split(cfg, Split::kTest);

  const std::vector<SweepRow> rows = placement_sweep(base, train, test, tc, &std::cout);

  std::ostringstream csv;
  csv << "block1,block2,block3,block4,top1,top5,model_bytes,latency_ms\n";
  json jrows = json::array();
  for (const SweepRow& r : rows) {
    for (int s = 0; s < 4; ++s) csv << ((r.mask >> s) & 1) << ",";
    csv << fmt_real(r.top1) << "," << fmt_real(r.top5) << "," << r.model_bytes << ","
        << fmt_real(r.latency_ms) << "\n";
    jrows.push_back({{"mask", r.mask},
                     {"top1", r.top1},
                     {"top5", r.top5},
                     {"model_bytes", r.model_bytes},
                     {"latency_ms", r.latency_ms}});
  }
  write_text_file((fs::path(args.out_dir) / "sweep.csv").string(), csv.str());
  write_text_file((fs::path(args.out_dir) / "sweep.json").string(), jrows.dump(2) + "\n");
  std::cout << "sweep-blocks: " << rows.size() << " rows -> " << args.out_dir << "\n";
  return 0;
}

struct CapturedLayers {
  std::vector<std::string> names;
  // per layer, chunked over images
  std::vector<std::vector<Tensor<float>>> pre;
  std::vector<std::vector<BitTensor>> post;
};

CapturedLayers capture_layers(const Model<float>& model, const Dataset& data, int64_t n_images) {
  CapturedLayers cap;
  const int64_t chunk = 25;
  for (int64_t start = 0; start < n_images; start += chunk) {
    const int64_t n = std::min(chunk, n_images - start);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = start + i;
    const Tensor<float> batch = make_batch<float>(data, idx, false, nullptr);
    ActivationSink<float> sink;
    model.infer(batch, Model<float>::InferPath::kPacked, nullptr, &sink);
    if (cap.names.empty()) {
      for (const auto& rec : sink.records) {
        cap.names.push_back(rec.layer);
        cap.pre.emplace_back();
        cap.post.emplace_back();
      }
    }
    for (size_t li = 0; li < sink.records.size(); ++li) {
      cap.pre[li].push_back(sink.records[li].pre);
      cap.post[li].push_back(sink.records[li].post);
    }
  }
  return cap;
}

// stack chunked per-batch maps into one tensor along N
Tensor<float> stack_chunks(const std::vector<Tensor<float>>& chunks) {
  int64_t total = 0;
  for (const auto& t : chunks) total += t.shape().n;
  const Shape4& s = chunks.front().shape();
  Tensor<float> out({total, s.c, s.h, s.w});
  int64_t off = 0;
  for (const auto& t : chunks) {
    std::copy(t.data(), t.data() + t.count(), out.data() + off);
    off += t.count();
  }
  return out;
}

int cmd_analyze(const CommonArgs& args, const std::string& which) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  set_threads(args.threads);
  write_effective_config(cfg, args.out_dir);

  Model<float> model(spec_from_config(cfg), 0);
  if (!args.checkpoint.empty()) model.load(args.checkpoint);
  const Dataset test = load_split(cfg, Split::kTest);

  int64_t def_images = 20;
  if (which == "similarity") def_images = 10;
  if (which == "distribution") def_images = 1000;
  int64_t n_images = args.images > 0 ? args.images : cfg.get_int("analyze", "images", def_images);
  n_images = std::min(n_images, test.count);
  LABNN_CHECK(n_images >= 1, "no images to analyze");

  const CapturedLayers cap = capture_layers(model, test, n_images);
  json j;
  j["which"] = which;
  j["images"] = n_images;
  std::ostringstream csv;

  if (which == "uniqueness") {
    const int64_t k = cfg.get_int("analyze", "uniq_k", 3);
    const std::string pad_name = cfg.get_str("analyze", "uniq_padding", "same-1");
    Padding pad = Padding::valid();
    if (pad_name == "same-1") {
      pad = Padding::same(-1.0);
    } else if (pad_name == "same+1") {
      pad = Padding::same(1.0);
    } else {
      LABNN_CHECK(pad_name == "valid", "analyze.uniq_padding must be valid|same-1|same+1");
    }
    BinarizerConfig<float> bin;
    const std::string bname = cfg.get_str("analyze", "uniq_binarizer", "sign");
    if (bname == "niblack") {
      bin = BinarizerConfig<float>::niblack(-0.2);
    } else if (bname == "sauvola") {
      bin = BinarizerConfig<float>::sauvola(0.2);
    } else {
      LABNN_CHECK(bname == "sign", "analyze.uniq_binarizer must be sign|niblack|sauvola");
    }
    csv << "layer,channel,images,k,padding,n_t,mean_eta\n";
    json layers = json::array();
    for (size_t li = 0; li < cap.names.size(); ++li) {
      const Shape4 s = cap.post[li].front().shape();
      double layer_acc = 0;
      for (int64_t c = 0; c < s.c; ++c) {
        double acc = 0;
        int64_t imgs = 0;
        int64_t n_t = 0;
        for (const BitTensor& chunk : cap.post[li]) {
          for (int64_t n = 0; n < chunk.shape().n; ++n) {
            BitTensor one({1, 1, s.h, s.w});
            for (int64_t y = 0; y < s.h; ++y)
              for (int64_t x = 0; x < s.w; ++x) one.set(0, 0, y, x, chunk.get(n, c, y, x));
            const UniquenessReport r = uniqueness_eta(one, k, bin, pad);
            acc += r.eta;
            n_t = r.n_t;
            ++imgs;
          }
        }
        const double mean_eta = acc / static_cast<double>(imgs);
        layer_acc += mean_eta;
        csv << cap.names[li] << "," << c << "," << imgs << "," << k << "," << pad.str() << ","
            << n_t << "," << fmt_real(mean_eta) << "\n";
      }
      layers.push_back({{"layer", cap.names[li]},
                        {"mean_eta", layer_acc / static_cast<double>(s.c)},
                        {"channels", s.c}});
      std::cout << "uniqueness " << cap.names[li] << ": mean eta "
                << fmt_real(layer_acc / static_cast<double>(s.c)) << "\n";
    }
    j["layers"] = layers;
  } else if (which == "similarity") {
    csv << "layer,images,pairs,ssim_pre,endsim_pre,ssim_post,endsim_post\n";
    json layers = json::array();
    for (size_t li = 0; li < cap.names.size(); ++li) {
      const Tensor<float> pre = stack_chunks(cap.pre[li]);
      std::vector<Tensor<float>> post_chunks;
      for (const BitTensor& b : cap.post[li]) post_chunks.push_back(unpack<float>(b));
      const Tensor<float> post = stack_chunks(post_chunks);
      const LayerDissimilarity dpre = pairwise_dissimilarity(pre, cap.names[li]);
      const LayerDissimilarity dpost = pairwise_dissimilarity(post, cap.names[li]);
      csv << cap.names[li] << "," << dpre.image_count << "," << dpre.pair_count << ","
          << fmt_real(dpre.mean_ssim) << "," << fmt_real(dpre.mean_endsim) << ","
          << fmt_real(dpost.mean_ssim) << "," << fmt_real(dpost.mean_endsim) << "\n";
      layers.push_back({{"layer", cap.names[li]},
                        {"ssim_pre", dpre.mean_ssim},
                        {"endsim_pre", dpre.mean_endsim},
                        {"ssim_post", dpost.mean_ssim},
                        {"endsim_post", dpost.mean_endsim}});
      std::cout << "similarity " << cap.names[li] << ": ssim_post " << fmt_real(dpost.mean_ssim)
                << " endsim_post " << fmt_real(dpost.mean_endsim) << "\n";
    }
    j["layers"] = layers;
  } else if (which == "distribution") {
    csv << "layer,channel,plus_fraction\n";
    json layers = json::array();
    for (size_t li = 0; li < cap.names.size(); ++li) {
      const Shape4 s = cap.post[li].front().shape();
      std::vector<double> frac(static_cast<size_t>(s.c), 0.0);
      int64_t total_images = 0;
      for (const BitTensor& chunk : cap.post[li]) {
        const BinaryDistribution d = binary_distribution(chunk);
        for (int64_t c = 0; c < s.c; ++c) {
          frac[static_cast<size_t>(c)] +=
              d.plus_fraction[static_cast<size_t>(c)] * static_cast<double>(chunk.shape().n);
        }
        total_images += chunk.shape().n;
      }
      double mean = 0;
      for (int64_t c = 0; c < s.c; ++c) {
        frac[static_cast<size_t>(c)] /= static_cast<double>(total_images);
        mean += frac[static_cast<size_t>(c)];
        csv << cap.names[li] << "," << c << "," << fmt_real(frac[static_cast<size_t>(c)]) << "\n";
      }
      mean /= static_cast<double>(s.c);
      layers.push_back({{"layer", cap.names[li]}, {"mean_plus_fraction", mean}});
      std::cout << "distribution " << cap.names[li] << ": mean +1 fraction " << fmt_real(mean)
                << "\n";
    }
    j["layers"] = layers;
  } else {
    fail("unknown analysis: " + which + " (want uniqueness|similarity|distribution)");
  }

  // qualitative dumps of the first image
  const int64_t dump_channels = cfg.get_int("analyze", "dump_channels", 4);
  for (size_t li = 0; li < cap.names.size(); ++li) {
    const Shape4 s = cap.post[li].front().shape();
    for (int64_t c = 0; c < std::min<int64_t>(dump_channels, s.c); ++c) {
      const std::string base =
          (fs::path(args.out_dir) / (cap.names[li] + ".c" + std::to_string(c))).string();
      write_pgm_real(base + ".pre.pgm", cap.pre[li].front(), 0, c);
      write_pgm(base + ".post.pgm", cap.post[li].front(), 0, c);
    }
  }

  write_text_file((fs::path(args.out_dir) / (which + ".csv")).string(), csv.str());
  write_text_file((fs::path(args.out_dir) / (which + ".json")).string(), j.dump(2) + "\n");
  return 0;
}

int cmd_count_ops(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  write_effective_config(cfg, args.out_dir);

  const ModelSpec spec = spec_from_config(cfg);
  const OpsBudget budget = count_ops(spec, false);
  const OpsBudget fp = count_ops(spec, true);

  std::ostringstream csv;
  csv << "layer,op,bops,flops,ops\n";
  for (const auto& r : budget.rows) {
    csv << r.layer << "," << r.op << "," << fmt_real(r.bops) << "," << fmt_real(r.flops) << ","
        << fmt_real(r.ops()) << "\n";
  }
  csv << "total,," << fmt_real(budget.total_bops()) << "," << fmt_real(budget.total_flops()) << ","
      << fmt_real(budget.total_ops()) << "\n";
  write_text_file((fs::path(args.out_dir) / "ops.csv").string(), csv.str());

  json j;
  j["bops"] = budget.total_bops();
  j["flops"] = budget.total_flops();
  j["ops"] = budget.total_ops();
  j["fp32_flops"] = fp.total_flops();
  j["lab_depthwise_flops"] = budget.flops_matching("lab.depthwise_conv2d");
  write_text_file((fs::path(args.out_dir) / "ops.json").string(), j.dump(2) + "\n");

  std::cout << "count-ops: BOPs " << fmt_real(budget.total_bops()) << " FLOPs "
            << fmt_real(budget.total_flops()) << " OPs " << fmt_real(budget.total_ops())
            << " (fp32 twin: " << fmt_real(fp.total_flops()) << " FLOPs)\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  write_effective_config(cfg, args.out_dir);

  Model<float> model(spec_from_config(cfg), 0);
  if (!args.checkpoint.empty()) model.load(args.checkpoint);
  const BenchReport rep = bench_model(
      model, cfg.get_int("bench", "batch", 1), cfg.get_int("bench", "runs", 50),
      cfg.get_int("bench", "warmup", 5),
      static_cast<int>(cfg.get_int("bench", "threads", args.threads)));

  std::ostringstream csv;
  csv << "operator,layer,mean_us,min_us,max_us,median_us\n";
  for (const auto& r : rep.rows) {
    const size_t slash = r.op.find('/');
    const std::string layer = slash == std::string::npos ? "" : r.op.substr(0, slash);
    const std::string op = slash == std::string::npos ? r.op : r.op.substr(slash + 1);
    csv << op << "," << layer << "," << fmt_real(r.mean_us) << "," << fmt_real(r.min_us) << ","
        << fmt_real(r.max_us) << "," << fmt_real(r.median_us) << "\n";
  }
  csv << "other,," << fmt_real(rep.other_mean_us) << ",,,\n";
  write_text_file((fs::path(args.out_dir) / "bench.csv").string(), csv.str());

  json j;
  j["e2e_mean_us"] = rep.e2e_mean_us;
  j["e2e_min_us"] = rep.e2e_min_us;
  j["e2e_max_us"] = rep.e2e_max_us;
  j["e2e_median_us"] = rep.e2e_median_us;
  j["coverage"] = rep.coverage;
  j["runs"] = rep.runs;
  j["warmup"] = rep.warmup;
  j["threads"] = rep.threads;
  write_text_file((fs::path(args.out_dir) / "bench.json").string(), j.dump(2) + "\n");

  std::cout << "bench: e2e mean " << fmt_real(rep.e2e_mean_us) << " us over " << rep.runs
            << " runs (coverage " << fmt_real(rep.coverage) << ")\n";
  return 0;
}

int cmd_dump_maps(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  LABNN_CHECK(!args.out_dir.empty(), "missing --out");
  set_threads(args.threads);
  write_effective_config(cfg, args.out_dir);

  Model<float> model(spec_from_config(cfg), 0);
  if (!args.checkpoint.empty()) model.load(args.checkpoint);
  const Dataset test = load_split(cfg, Split::kTest);
  const int64_t n_images = std::min<int64_t>(args.images > 0 ? args.images : 4, test.count);
  const int64_t dump_channels = cfg.get_int("analyze", "dump_channels", 4);

  const CapturedLayers cap = capture_layers(model, test, n_images);
  int64_t files = 0;
  for (size_t li = 0; li < cap.names.size(); ++li) {
    int64_t img = 0;
    for (size_t chunk = 0; chunk < cap.post[li].size(); ++chunk) {
      for (int64_t n = 0; n < cap.post[li][chunk].shape().n; ++n, ++img) {
        for (int64_t c = 0; c < std::min<int64_t>(dump_channels, cap.post[li][chunk].shape().c);
             ++c) {
          const std::string base = (fs::path(args.out_dir) /
                                    (cap.names[li] + ".img" + std::to_string(img) + ".c" +
                                     std::to_string(c)))
                                       .string();
          write_pgm_real(base + ".pre.pgm", cap.pre[li][chunk], n, c);
          write_pgm(base + ".post.pgm", cap.post[li][chunk], n, c);
          files += 2;
        }
      }
    }
  }
  std::cout << "dump-maps: wrote " << files << " PGM files to " << args.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary neural network toolkit with a learnable activation binarizer"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config", args.config_path, "config file path");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--threads", args.threads, "worker threads");
    cmd->add_option("--images", args.images, "image count override");
    cmd->add_option("--set", args.sets, "config override section.key=value")->take_all();
    if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint path");
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, false);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  CLI::App* sweep = app.add_subcommand("sweep-blocks", "16-mask LAB placement study");
  add_common(sweep, false);
  CLI::App* analyze = app.add_subcommand("analyze", "uniqueness / similarity / distribution");
  std::string which;
  analyze->add_option("--which", which, "uniqueness|similarity|distribution")->required();
  add_common(analyze, true);
  CLI::App* countops = app.add_subcommand("count-ops", "BOP/FLOP/OP accounting");
  add_common(countops, false);
  CLI::App* bench = app.add_subcommand("bench", "per-operator latency microbenchmark");
  add_common(bench, true);
  CLI::App* dump = app.add_subcommand("dump-maps", "write feature maps as PGM");
  add_common(dump, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_eval(args);
    if (sweep->parsed()) return cmd_sweep_blocks(args);
    if (analyze->parsed()) return cmd_analyze(args, which);
    if (countops->parsed()) return cmd_count_ops(args);
    if (bench->parsed()) return cmd_bench(args);
    if (dump->parsed()) return cmd_dump_maps(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
