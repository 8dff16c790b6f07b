#include "labnn/analysis.hpp"

#include <bit>
#include <cmath>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace labnn {

template <typename T>
UniquenessReport uniqueness_eta(const BitTensor& a, int64_t k, const BinarizerConfig<T>& binarizer,
                                Padding pad) {
  const Shape4& s = a.shape();
  LABNN_CHECK(s.n == 1 && s.c == 1, "uniqueness_eta wants a single-batch single-channel map");
  LABNN_CHECK(k >= 1 && k <= 4, "uniqueness_eta: k must be in [1, 4] (kernel enumeration)");
  const int64_t bits = k * k;
  const int64_t n_t = 1ll << bits;

  const int nthreads = threads();
  std::vector<std::unordered_set<std::string>> seen(static_cast<size_t>(nthreads));

#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int64_t kid = 0; kid < n_t; ++kid) {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    BinConvLayer<T> layer;
    layer.weights = BitTensor({1, 1, k, k});
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx)
        layer.weights.set(0, 0, ky, kx, (kid >> (ky * k + kx)) & 1);
    layer.stride = 1;
    layer.pad = pad;
    const Tensor<T> d = binconv(a, layer);
    const BitTensor b = binarize_apply(d, binarizer);
    seen[static_cast<size_t>(tid)].insert(b.canonical_bytes());
  }

  std::unordered_set<std::string> all;
  for (auto& s_part : seen) all.merge(s_part);

  UniquenessReport rep;
  rep.k = k;
  rep.c_in = s.c;
  rep.padding = pad.str();
  rep.n_t = n_t;
  rep.n_c = static_cast<int64_t>(all.size());
  rep.eta = static_cast<double>(rep.n_c) / static_cast<double>(n_t);
  const ConvGeom g = conv_geometry(s.h, s.w, k, 1, pad);
  rep.log10_theoretical_max =
      static_cast<double>(g.out_h * g.out_w) * std::log10(static_cast<double>(k * k * s.c));
  return rep;
}

template <typename T>
ChannelSlice<T> channel_slice(const Tensor<T>& t, int64_t n, int64_t c) {
  const Shape4& s = t.shape();
  LABNN_CHECK(n < s.n && c < s.c, "channel_slice out of range");
  return {t.data() + (n * s.c + c) * s.h * s.w, s.h, s.w};
}

template <typename T>
double ssim(const ChannelSlice<T>& a, const ChannelSlice<T>& b) {
  LABNN_CHECK(a.h == b.h && a.w == b.w, "ssim: slices must share H x W");
  const int64_t n = a.h * a.w;
  double mu_a = 0, mu_b = 0;
  for (int64_t i = 0; i < n; ++i) {
    mu_a += a.data[i];
    mu_b += b.data[i];
  }
  mu_a /= static_cast<double>(n);
  mu_b /= static_cast<double>(n);
  double var_a = 0, var_b = 0, cov = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double da = a.data[i] - mu_a;
    const double db = b.data[i] - mu_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  var_a /= static_cast<double>(n);
  var_b /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  constexpr double kC1 = 0.0004;  // (0.01 * 2)^2
  constexpr double kC2 = 0.0036;  // (0.03 * 2)^2
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

template <typename T>
double endsim(const ChannelSlice<T>& a, const ChannelSlice<T>& b) {
  LABNN_CHECK(a.h == b.h && a.w == b.w, "endsim: slices must share H x W");
  const int64_t n = a.h * a.w;
  double diff = 0, summ = 0;
  for (int64_t i = 0; i < n; ++i) {
    diff += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    summ += std::abs(static_cast<double>(a.data[i]) + b.data[i]);
  }
  diff /= static_cast<double>(n);
  summ /= static_cast<double>(n);
  return std::sqrt(diff * diff + summ * summ);
}

template <typename T>
LayerDissimilarity pairwise_dissimilarity(const Tensor<T>& layer_maps, std::string layer_name) {
  const Shape4& s = layer_maps.shape();
  LABNN_CHECK(s.c >= 2, "pairwise_dissimilarity needs >= 2 channels");
  LayerDissimilarity out;
  out.layer = std::move(layer_name);
  out.image_count = s.n;
  out.pair_count = s.c * (s.c - 1) / 2;
  double ssim_acc = 0, end_acc = 0;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < s.c; ++i) {
      for (int64_t j = i + 1; j < s.c; ++j) {
        const ChannelSlice<T> a = channel_slice(layer_maps, n, i);
        const ChannelSlice<T> b = channel_slice(layer_maps, n, j);
        ssim_acc += ssim(a, b);
        end_acc += endsim(a, b);
      }
    }
  }
  const double denom = static_cast<double>(out.pair_count * out.image_count);
  out.mean_ssim = ssim_acc / denom;
  out.mean_endsim = end_acc / denom;
  return out;
}

BinaryDistribution binary_distribution(const BitTensor& b) {
  const Shape4& s = b.shape();
  BinaryDistribution out;
  out.plus_fraction.assign(static_cast<size_t>(s.c), 0.0);
  const int64_t per_channel = s.n * s.h * s.w;
  for (int64_t c = 0; c < s.c; ++c) {
    int64_t ones = 0;
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t h = 0; h < s.h; ++h) {
        const uint64_t* row = b.row(n, c, h);
        for (int64_t w = 0; w < b.words_per_row(); ++w) ones += std::popcount(row[w]);
      }
    }
    out.plus_fraction[static_cast<size_t>(c)] =
        static_cast<double>(ones) / static_cast<double>(per_channel);
  }
  double acc = 0;
  for (double f : out.plus_fraction) acc += f;
  out.mean = acc / static_cast<double>(s.c);
  return out;
}

double OpsBudget::total_bops() const {
  double acc = 0;
  for (const Row& r : rows) acc += r.bops;
  return acc;
}

double OpsBudget::total_flops() const {
  double acc = 0;
  for (const Row& r : rows) acc += r.flops;
  return acc;
}

double OpsBudget::flops_matching(const std::string& op_substr) const {
  double acc = 0;
  for (const Row& r : rows) {
    if (r.op.find(op_substr) != std::string::npos) acc += r.flops;
  }
  return acc;
}

OpsBudget count_ops(const ModelSpec& spec, bool full_precision) {
  const ModelPlan plan = plan_model(spec);
  OpsBudget budget;
  auto row = [&](const std::string& layer, const std::string& op, double bops, double flops) {
    budget.rows.push_back({layer, op, bops, flops});
  };

  for (size_t i = 0; i < plan.stem_convs.size(); ++i) {
    const auto& [name, ws] = plan.stem_convs[i];
    const Shape4& in = plan.stem_inputs[i];
    const ConvGeom g =
        conv_geometry(in.h, in.w, ws.h, plan.stem_strides[i], Padding::same(0.0));
    const double out_elems = static_cast<double>(ws.n * g.out_h * g.out_w);
    row(name, "conv2d", 0, out_elems * static_cast<double>(ws.c * ws.h * ws.w));
    row(name, "batchnorm", 0, 2.0 * out_elems);
    row(name, "prelu", 0, 2.0 * out_elems);
  }
  if (plan.stem_maxpool) {
    const Shape4& a = plan.after_stem;
    row("stem", "maxpool", 0, 3.0 * static_cast<double>(a.c * a.h * a.w));
  }

  for (const BinaryLayerPlan& bp : plan.binary_layers) {
    const double in_elems = static_cast<double>(bp.cin * bp.in_h * bp.in_w);
    const double out_elems = static_cast<double>(bp.cout * bp.out_h * bp.out_w);
    const double fan_in = static_cast<double>(9 * bp.cin);
    if (!full_precision) {
      switch (bp.binarizer) {
        case BinarizerKind::kSignSte:
          row(bp.name, "sign", 0, in_elems);
          break;
        case BinarizerKind::kLab: {
          const double kk = static_cast<double>(spec.lab_kernel * spec.lab_kernel);
          row(bp.name, "lab.depthwise_conv2d", 0, 2.0 * in_elems * kk);
          row(bp.name, "lab.bias_add", 0, 2.0 * in_elems);
          row(bp.name, "lab.argmax", 0, in_elems);
          row(bp.name, "lab.encode", 0, in_elems);
          break;
        }
        case BinarizerKind::kNiblack:
        case BinarizerKind::kSauvola: {
          const double win = static_cast<double>(
              spec.stages[static_cast<size_t>(bp.stage)].bin_window);
          row(bp.name, "local_threshold", 0, 2.0 * win * win * in_elems);
          break;
        }
      }
      row(bp.name, "binconv", out_elems * fan_in, 0);
    } else {
      row(bp.name, "conv2d", 0, out_elems * fan_in);
    }
    row(bp.name, "batchnorm", 0, 2.0 * out_elems);
    if (bp.pool_shortcut) {
      const double pooled = static_cast<double>(bp.cin * bp.out_h * bp.out_w);
      row(bp.name, "shortcut.avgpool", 0, 4.0 * pooled);
    }
    if (bp.conv1x1_shortcut) {
      row(bp.name, "shortcut.conv2d", 0, out_elems * static_cast<double>(bp.cin));
      row(bp.name, "shortcut.batchnorm", 0, 2.0 * out_elems);
    }
    row(bp.name, "add", 0, out_elems);
    if (bp.use_prelu) row(bp.name, "prelu", 0, 2.0 * out_elems);
  }

  const Shape4& hd = plan.head_in;
  row("head", "global_avg_pool", 0, static_cast<double>(hd.c * hd.h * hd.w));
  row("head", "fc", 0, static_cast<double>(plan.classes * hd.c + plan.classes));
  return budget;
}

#define LABNN_INSTANTIATE_ANALYSIS(T)                                                            \
  template UniquenessReport uniqueness_eta<T>(const BitTensor&, int64_t,                         \
                                              const BinarizerConfig<T>&, Padding);               \
  template ChannelSlice<T> channel_slice<T>(const Tensor<T>&, int64_t, int64_t);                 \
  template double ssim<T>(const ChannelSlice<T>&, const ChannelSlice<T>&);                       \
  template double endsim<T>(const ChannelSlice<T>&, const ChannelSlice<T>&);                     \
  template LayerDissimilarity pairwise_dissimilarity<T>(const Tensor<T>&, std::string);

LABNN_INSTANTIATE_ANALYSIS(float)
LABNN_INSTANTIATE_ANALYSIS(double)
#undef LABNN_INSTANTIATE_ANALYSIS

}  // namespace labnn
