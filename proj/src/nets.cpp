#include "labnn/nets.hpp"

#include <algorithm>
#include <cmath>

#include "labnn/checkpoint.hpp"

namespace labnn {

namespace {
constexpr int64_t kQuicknetGroups = 4;
}

std::string stem_kind_name(StemKind k) {
  return k == StemKind::kPlainConv ? "plain" : "quicknet";
}

StemKind stem_kind_from_name(const std::string& name) {
  if (name == "plain") return StemKind::kPlainConv;
  if (name == "quicknet") return StemKind::kQuicknetStem;
  fail("unknown stem kind: " + name + " (want plain|quicknet)");
}

void ModelSpec::validate() const {
  input.validate();
  LABNN_CHECK(!stages.empty(), "model needs at least one stage");
  LABNN_CHECK(classes >= 2, "model needs >= 2 classes");
  LABNN_CHECK(stem_kernel >= 1 && stem_stride >= 1, "bad stem geometry");
  LABNN_CHECK(lab_kernel % 2 == 1, "LAB kernel must be odd");
  for (size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    LABNN_CHECK(st.layers >= 1, "stage needs >= 1 layer");
    LABNN_CHECK(st.channels >= 1, "stage channels must be positive");
    LABNN_CHECK(st.stride == 1 || st.stride == 2, "stage stride must be 1 or 2");
    if (i > 0) {
      LABNN_CHECK(st.channels == 2 * stages[i - 1].channels,
                  "stage channels must double per stage (ResNet convention)");
    }
  }
  if (stem == StemKind::kQuicknetStem) {
    const int64_t half = stages[0].channels / 2;
    LABNN_CHECK(stages[0].channels % 2 == 0 && half % kQuicknetGroups == 0,
                "quicknet stem needs first-stage channels divisible by 8");
  }
}

ModelSpec ModelSpec::desk_default(int64_t in_channels, int64_t in_hw, BinarizerKind binarizer) {
  ModelSpec spec;
  spec.input = {1, in_channels, in_hw, in_hw};
  spec.stages.resize(4);
  int64_t ch = 32;
  for (size_t i = 0; i < 4; ++i) {
    spec.stages[i].layers = 2;
    spec.stages[i].channels = ch;
    spec.stages[i].stride = i == 0 ? 1 : 2;
    spec.stages[i].binarizer = binarizer;
    ch *= 2;
  }
  return spec;
}

ModelSpec ModelSpec::resnet18_imagenet(BinarizerKind binarizer) {
  ModelSpec spec;
  spec.input = {1, 3, 224, 224};
  spec.stem_kernel = 7;
  spec.stem_stride = 2;
  spec.stem_maxpool = true;
  spec.shortcut = ShortcutProjection::kConv1x1;
  spec.classes = 1000;
  spec.stages.resize(4);
  int64_t ch = 64;
  for (size_t i = 0; i < 4; ++i) {
    spec.stages[i].layers = 4;
    spec.stages[i].channels = ch;
    spec.stages[i].stride = i == 0 ? 1 : 2;
    spec.stages[i].binarizer = binarizer;
    ch *= 2;
  }
  return spec;
}

ModelPlan plan_model(const ModelSpec& spec) {
  spec.validate();
  ModelPlan plan;
  int64_t c = spec.input.c, h = spec.input.h, w = spec.input.w;

  auto conv_step = [&](int64_t cout, int64_t k, int64_t stride, int64_t groups,
                       const std::string& name) {
    plan.stem_convs.push_back({name, Shape4{cout, c / groups, k, k}});
    plan.stem_groups.push_back(groups);
    plan.stem_strides.push_back(stride);
    plan.stem_inputs.push_back({1, c, h, w});
    const ConvGeom g = conv_geometry(h, w, k, stride, Padding::same(0.0));
    c = cout;
    h = g.out_h;
    w = g.out_w;
  };

  const int64_t c1 = spec.stages[0].channels;
  if (spec.stem == StemKind::kPlainConv) {
    conv_step(c1, spec.stem_kernel, spec.stem_stride, 1, "stem0");
  } else {
    conv_step(c1 / 2, 3, 2, 1, "stem0");
    conv_step(c1, 3, 2, kQuicknetGroups, "stem1");
  }
  if (spec.stem_maxpool) {
    h /= 2;
    w /= 2;
    plan.stem_maxpool = true;
  }
  LABNN_CHECK(h >= 1 && w >= 1, "stem reduces spatial dims to zero");
  plan.after_stem = {1, c, h, w};

  for (size_t si = 0; si < spec.stages.size(); ++si) {
    const StageSpec& st = spec.stages[si];
    for (int64_t li = 0; li < st.layers; ++li) {
      BinaryLayerPlan bl;
      bl.name = "s" + std::to_string(si + 1) + ".l" + std::to_string(li);
      bl.stage = static_cast<int64_t>(si);
      bl.cin = c;
      bl.cout = st.channels;
      bl.stride = li == 0 ? st.stride : 1;
      bl.in_h = h;
      bl.in_w = w;
      const ConvGeom g = conv_geometry(h, w, 3, bl.stride, Padding::same(-1.0));
      bl.out_h = g.out_h;
      bl.out_w = g.out_w;
      bl.binarizer = st.binarizer;
      bl.use_prelu = st.use_prelu;
      const bool shape_change = bl.stride == 2 || bl.cout != bl.cin;
      if (shape_change) {
        if (spec.shortcut == ShortcutProjection::kConv1x1) {
          bl.conv1x1_shortcut = true;
          bl.pool_shortcut = bl.stride == 2;
        } else {
          bl.pool_shortcut = bl.stride == 2;
          if (bl.cout != bl.cin) {
            LABNN_CHECK(bl.cout == 2 * bl.cin,
                        "pool-duplicate shortcut needs exact channel doubling at " + bl.name);
            bl.duplicate_shortcut = true;
          }
        }
      }
      plan.binary_layers.push_back(bl);
      c = bl.cout;
      h = bl.out_h;
      w = bl.out_w;
    }
  }
  plan.head_in = {1, c, h, w};
  plan.classes = spec.classes;
  return plan;
}

void Profiler::add(const std::string& key, double seconds) {
  entries_.emplace_back(key, seconds);
}

// ---------------------------------------------------------------------------

template <typename T>
int Model<T>::add_param(const std::string& name, Tensor<T> value, bool binary_latent) {
  params_.push_back({name, std::move(value), binary_latent});
  return static_cast<int>(params_.size()) - 1;
}

template <typename T>
BnState<T>& Model<T>::bn_state(const std::string& name) {
  for (auto& [n, st] : bn_states_) {
    if (n == name) return st;
  }
  fail("no batchnorm state named " + name);
}

template <typename T>
const BnState<T>& Model<T>::bn_state(const std::string& name) const {
  for (const auto& [n, st] : bn_states_) {
    if (n == name) return st;
  }
  fail("no batchnorm state named " + name);
}

template <typename T>
Model<T>::Model(const ModelSpec& spec, uint64_t seed) : spec_(spec), plan_(plan_model(spec)) {
  Rng rng(seed);

  auto kaiming = [&](Tensor<T>& t, int64_t fan_in) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.count(); ++i) t.data()[i] = static_cast<T>(std * rng.normal());
  };
  auto glorot = [&](Tensor<T>& t, int64_t fan_in, int64_t fan_out) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    for (int64_t i = 0; i < t.count(); ++i) t.data()[i] = static_cast<T>(std * rng.normal());
  };

  for (size_t i = 0; i < plan_.stem_convs.size(); ++i) {
    const auto& [name, ws] = plan_.stem_convs[i];
    StemConvRefs sc;
    sc.name = name;
    sc.stride = plan_.stem_strides[i];
    sc.groups = plan_.stem_groups[i];
    Tensor<T> wt(ws);
    kaiming(wt, ws.c * ws.h * ws.w);
    sc.w = add_param(name + ".conv.w", std::move(wt));
    sc.bn_gamma = add_param(name + ".bn.gamma", Tensor<T>({1, ws.n, 1, 1}, T(1)));
    sc.bn_beta = add_param(name + ".bn.beta", Tensor<T>({1, ws.n, 1, 1}, T(0)));
    sc.prelu = add_param(name + ".prelu.slope", Tensor<T>({1, ws.n, 1, 1}, T(0.25)));
    bn_states_.emplace_back(name + ".bn", BnState<T>(ws.n));
    stem_convs_.push_back(sc);
  }

  for (const BinaryLayerPlan& bp : plan_.binary_layers) {
    BinaryLayerRefs l;
    l.plan = bp;
    if (bp.binarizer == BinarizerKind::kLab) {
      LabParams<T> p = LabParams<T>::init_near_identity(bp.cin, rng, spec_.lab_kernel);
      l.lab_w = add_param("lab." + bp.name + ".dw_weights", std::move(p.dw_weights));
      l.lab_b = add_param("lab." + bp.name + ".dw_bias", std::move(p.dw_bias));
      l.lab_beta = add_param("lab." + bp.name + ".beta", Tensor<T>({1, 1, 1, 1}, T(1)));
    }
    Tensor<T> wt({bp.cout, bp.cin, 3, 3});
    glorot(wt, bp.cin * 9, bp.cout * 9);
    l.conv_w = add_param(bp.name + ".conv.w", std::move(wt), true);
    l.bn_gamma = add_param(bp.name + ".bn.gamma", Tensor<T>({1, bp.cout, 1, 1}, T(1)));
    l.bn_beta = add_param(bp.name + ".bn.beta", Tensor<T>({1, bp.cout, 1, 1}, T(0)));
    bn_states_.emplace_back(bp.name + ".bn", BnState<T>(bp.cout));
    if (bp.conv1x1_shortcut) {
      Tensor<T> pw({bp.cout, bp.cin, 1, 1});
      kaiming(pw, bp.cin);
      l.proj_w = add_param(bp.name + ".proj.w", std::move(pw));
      l.proj_bn_gamma = add_param(bp.name + ".proj.bn.gamma", Tensor<T>({1, bp.cout, 1, 1}, T(1)));
      l.proj_bn_beta = add_param(bp.name + ".proj.bn.beta", Tensor<T>({1, bp.cout, 1, 1}, T(0)));
      bn_states_.emplace_back(bp.name + ".proj.bn", BnState<T>(bp.cout));
    }
    if (bp.use_prelu) {
      l.prelu = add_param(bp.name + ".prelu.slope", Tensor<T>({1, bp.cout, 1, 1}, T(0.25)));
    }
    layers_.push_back(l);
  }

  const int64_t feat = plan_.head_in.c;
  Tensor<T> fw({spec_.classes, feat, 1, 1});
  glorot(fw, feat, spec_.classes);
  fc_w_ = add_param("head.fc.w", std::move(fw));
  fc_b_ = add_param("head.fc.b", Tensor<T>({1, spec_.classes, 1, 1}, T(0)));
}

template <typename T>
LabParams<T> Model<T>::lab_params_for(const BinaryLayerRefs& l) const {
  LabParams<T> p;
  p.dw_weights = param_ref(l.lab_w);
  p.dw_bias = param_ref(l.lab_b);
  p.beta = param_ref(l.lab_beta).data()[0];
  return p;
}

template <typename T>
typename Model<T>::GraphBuild Model<T>::build_graph(Tape<T>& tape, const Tensor<T>& batch,
                                                    const std::vector<int>& labels, BinMode mode,
                                                    bool update_running) {
  LABNN_CHECK(batch.shape().c == spec_.input.c && batch.shape().h == spec_.input.h &&
                  batch.shape().w == spec_.input.w,
              "batch shape " + batch.shape().str() + " does not match model input");
  GraphBuild out;
  out.param_leaves.reserve(params_.size());
  for (const Param& p : params_) out.param_leaves.push_back(tape.leaf(p.value, p.name));

  int x = tape.leaf(batch, "input");
  for (const StemConvRefs& sc : stem_convs_) {
    x = conv2d(tape, x, out.param_leaves[sc.w], sc.stride, Padding::same(0.0), sc.groups,
               sc.name + "/conv");
    x = batchnorm_train(tape, x, out.param_leaves[sc.bn_gamma], out.param_leaves[sc.bn_beta],
                        &bn_state(sc.name + ".bn"), update_running, sc.name + "/bn");
    x = prelu(tape, x, out.param_leaves[sc.prelu], sc.name + "/prelu");
  }
  if (plan_.stem_maxpool) x = maxpool2x2(tape, x, "stem/pool");

  for (size_t li = 0; li < layers_.size(); ++li) {
    const BinaryLayerRefs& l = layers_[li];
    const BinaryLayerPlan& bp = l.plan;

    int shortcut = x;
    if (bp.pool_shortcut) shortcut = avgpool2x2(tape, shortcut, bp.name + "/shortcut");
    if (bp.duplicate_shortcut) shortcut = concat_duplicate(tape, shortcut, bp.name + "/shortcut");
    if (bp.conv1x1_shortcut) {
      shortcut = conv2d(tape, shortcut, out.param_leaves[l.proj_w], 1, Padding::valid(), 1,
                        bp.name + "/proj");
      shortcut = batchnorm_train(tape, shortcut, out.param_leaves[l.proj_bn_gamma],
                                 out.param_leaves[l.proj_bn_beta],
                                 &bn_state(bp.name + ".proj.bn"), update_running,
                                 bp.name + "/proj.bn");
    }

    int xb = -1;
    switch (bp.binarizer) {
      case BinarizerKind::kSignSte:
        xb = sign_ste(tape, x, mode, bp.name + "/binarize");
        break;
      case BinarizerKind::kLab: {
        const int z = depthwise_conv2d(tape, x, out.param_leaves[l.lab_w],
                                       out.param_leaves[l.lab_b], 2, Padding::same(0.0),
                                       bp.name + "/lab.dw");
        xb = lab_argmax(tape, z, out.param_leaves[l.lab_beta], mode, bp.name + "/binarize");
        break;
      }
      case BinarizerKind::kNiblack: {
        const StageSpec& stage = spec_.stages[static_cast<size_t>(bp.stage)];
        xb = local_threshold_ste(
            tape, x, niblack_thresholds(tape.val(x), stage.bin_k, stage.bin_window), mode,
            bp.name + "/binarize");
        break;
      }
      case BinarizerKind::kSauvola: {
        const StageSpec& stage = spec_.stages[static_cast<size_t>(bp.stage)];
        xb = local_threshold_ste(
            tape, x, sauvola_thresholds(tape.val(x), stage.bin_k, stage.bin_window, stage.bin_R),
            mode, bp.name + "/binarize");
        break;
      }
    }

    const int wb = sign_ste(tape, out.param_leaves[l.conv_w], mode, bp.name + "/sign.w");
    int y = conv2d(tape, xb, wb, bp.stride, Padding::same(-1.0), 1, bp.name + "/conv");
    y = batchnorm_train(tape, y, out.param_leaves[l.bn_gamma], out.param_leaves[l.bn_beta],
                        &bn_state(bp.name + ".bn"), update_running, bp.name + "/bn");

    if (bp.use_prelu && !spec_.prelu_after_add) {
      y = prelu(tape, y, out.param_leaves[l.prelu], bp.name + "/prelu");
    }
    y = add(tape, y, shortcut, bp.name + "/add");
    if (bp.use_prelu && spec_.prelu_after_add) {
      y = prelu(tape, y, out.param_leaves[l.prelu], bp.name + "/prelu");
    }
    x = y;
  }

  x = global_avg_pool(tape, x, "head/gap");
  out.logits = dense(tape, x, out.param_leaves[fc_w_], out.param_leaves[fc_b_], "head/fc");
  out.loss = softmax_cross_entropy(tape, out.logits, labels, "loss");
  return out;
}

// ------------------------- packed inference path --------------------------

namespace {

class ScopedTimer {
 public:
  ScopedTimer(Profiler* prof, std::string key) : prof_(prof), key_(std::move(key)) {
    if (prof_) start_ = std::chrono::steady_clock::now();
  }
  ~ScopedTimer() {
    if (prof_) {
      const auto end = std::chrono::steady_clock::now();
      prof_->add(key_, std::chrono::duration<double>(end - start_).count());
    }
  }

 private:
  Profiler* prof_;
  std::string key_;
  std::chrono::steady_clock::time_point start_;
};

template <typename T>
void bn_infer_inplace(Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      const BnState<T>& st) {
  const Shape4& s = x.shape();
  const int64_t plane = s.h * s.w;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T scale = gamma.data()[c] / static_cast<T>(std::sqrt(
                          static_cast<double>(st.running_var.data()[c]) + st.eps));
      const T shift = beta.data()[c] - scale * st.running_mean.data()[c];
      T* p = x.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] = scale * p[i] + shift;
    }
  }
}

template <typename T>
void prelu_inplace(Tensor<T>& x, const Tensor<T>& slope) {
  const Shape4& s = x.shape();
  const int64_t plane = s.h * s.w;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T a = slope.data()[c];
      T* p = x.data() + (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        if (p[i] < T(0)) p[i] *= a;
      }
    }
  }
}

template <typename T>
Tensor<T> maxpool_infer(const Tensor<T>& x) {
  const Shape4& s = x.shape();
  Tensor<T> out({s.n, s.c, s.h / 2, s.w / 2});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t oy = 0; oy < s.h / 2; ++oy)
        for (int64_t ox = 0; ox < s.w / 2; ++ox) {
          T best = x.at(n, c, 2 * oy, 2 * ox);
          best = std::max(best, x.at(n, c, 2 * oy, 2 * ox + 1));
          best = std::max(best, x.at(n, c, 2 * oy + 1, 2 * ox));
          best = std::max(best, x.at(n, c, 2 * oy + 1, 2 * ox + 1));
          out.at(n, c, oy, ox) = best;
        }
  return out;
}

template <typename T>
Tensor<T> avgpool_infer(const Tensor<T>& x) {
  const Shape4& s = x.shape();
  Tensor<T> out({s.n, s.c, (s.h + 1) / 2, (s.w + 1) / 2});
  const Shape4& os = out.shape();
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t oy = 0; oy < os.h; ++oy)
        for (int64_t ox = 0; ox < os.w; ++ox) {
          const int64_t hh = std::min<int64_t>(2, s.h - 2 * oy);
          const int64_t ww = std::min<int64_t>(2, s.w - 2 * ox);
          T acc = T(0);
          for (int64_t dy = 0; dy < hh; ++dy)
            for (int64_t dx = 0; dx < ww; ++dx) acc += x.at(n, c, 2 * oy + dy, 2 * ox + dx);
          out.at(n, c, oy, ox) = acc / static_cast<T>(hh * ww);
        }
  return out;
}

template <typename T>
Tensor<T> duplicate_channels(const Tensor<T>& x) {
  const Shape4& s = x.shape();
  Tensor<T> out({s.n, 2 * s.c, s.h, s.w});
  const int64_t plane = s.c * s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    const T* p = x.data() + n * plane;
    std::copy(p, p + plane, out.data() + n * 2 * plane);
    std::copy(p, p + plane, out.data() + n * 2 * plane + plane);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& batch, InferPath path, Profiler* prof,
                          ActivationSink<T>* sink) const {
  LABNN_CHECK(batch.shape().c == spec_.input.c && batch.shape().h == spec_.input.h &&
                  batch.shape().w == spec_.input.w,
              "batch shape " + batch.shape().str() + " does not match model input");

  if (path == InferPath::kPacked && packed_.empty()) {
    for (const BinaryLayerRefs& l : layers_) {
      BinConvLayer<T> bc;
      bc.weights = pack(param_ref(l.conv_w));
      bc.stride = l.plan.stride;
      bc.pad = Padding::same(-1.0);
      packed_.push_back(std::move(bc));
    }
  }
  if (path == InferPath::kGemm && signed_weights_.empty()) {
    for (const BinaryLayerRefs& l : layers_) {
      signed_weights_.push_back(unpack<T>(pack(param_ref(l.conv_w))));
    }
  }

  Tensor<T> x = batch;
  for (const StemConvRefs& sc : stem_convs_) {
    {
      ScopedTimer tm(prof, sc.name + "/conv");
      x = conv2d_fwd(x, param_ref(sc.w), sc.stride, Padding::same(0.0), sc.groups);
    }
    {
      ScopedTimer tm(prof, sc.name + "/bn");
      bn_infer_inplace(x, param_ref(sc.bn_gamma), param_ref(sc.bn_beta),
                       bn_state(sc.name + ".bn"));
    }
    {
      ScopedTimer tm(prof, sc.name + "/prelu");
      prelu_inplace(x, param_ref(sc.prelu));
    }
  }
  if (plan_.stem_maxpool) {
    ScopedTimer tm(prof, "stem/pool");
    x = maxpool_infer(x);
  }

  for (size_t li = 0; li < layers_.size(); ++li) {
    const BinaryLayerRefs& l = layers_[li];
    const BinaryLayerPlan& bp = l.plan;

    Tensor<T> shortcut = x;
    {
      ScopedTimer tm(prof, bp.name + "/shortcut");
      if (bp.pool_shortcut) shortcut = avgpool_infer(shortcut);
      if (bp.duplicate_shortcut) shortcut = duplicate_channels(shortcut);
      if (bp.conv1x1_shortcut) {
        shortcut = conv2d_fwd(shortcut, param_ref(l.proj_w), 1, Padding::valid());
        bn_infer_inplace(shortcut, param_ref(l.proj_bn_gamma), param_ref(l.proj_bn_beta),
                         bn_state(bp.name + ".proj.bn"));
      }
    }

    BitTensor bits;
    {
      ScopedTimer tm(prof, bp.name + "/binarize");
      switch (bp.binarizer) {
        case BinarizerKind::kSignSte:
          bits = sign_ste_forward(x);
          break;
        case BinarizerKind::kLab:
          bits = lab_forward(x, lab_params_for(l)).out;
          break;
        case BinarizerKind::kNiblack: {
          const StageSpec& stage = spec_.stages[static_cast<size_t>(bp.stage)];
          bits = niblack(x, stage.bin_k, stage.bin_window);
          break;
        }
        case BinarizerKind::kSauvola: {
          const StageSpec& stage = spec_.stages[static_cast<size_t>(bp.stage)];
          bits = sauvola(x, stage.bin_k, stage.bin_window, stage.bin_R);
          break;
        }
      }
    }
    if (sink) sink->records.push_back({bp.name, x, bits});

    Tensor<T> y;
    {
      ScopedTimer tm(prof, bp.name + "/binconv");
      if (path == InferPath::kPacked) {
        y = binconv(bits, packed_[li]);
      } else {
        y = conv2d_fwd(unpack<T>(bits), signed_weights_[li], bp.stride, Padding::same(-1.0));
      }
    }
    {
      ScopedTimer tm(prof, bp.name + "/bn");
      bn_infer_inplace(y, param_ref(l.bn_gamma), param_ref(l.bn_beta), bn_state(bp.name + ".bn"));
    }
    if (bp.use_prelu && !spec_.prelu_after_add) {
      ScopedTimer tm(prof, bp.name + "/prelu");
      prelu_inplace(y, param_ref(l.prelu));
    }
    {
      ScopedTimer tm(prof, bp.name + "/add");
      LABNN_CHECK(y.shape() == shortcut.shape(), "shortcut shape mismatch at " + bp.name);
      for (int64_t i = 0; i < y.count(); ++i) y.data()[i] += shortcut.data()[i];
    }
    if (bp.use_prelu && spec_.prelu_after_add) {
      ScopedTimer tm(prof, bp.name + "/prelu");
      prelu_inplace(y, param_ref(l.prelu));
    }
    x = std::move(y);
  }

  Tensor<T> pooled({x.shape().n, x.shape().c, 1, 1});
  {
    ScopedTimer tm(prof, "head/gap");
    const Shape4& s = x.shape();
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        const T* p = x.data() + (n * s.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        pooled.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
      }
  }
  Tensor<T> logits({batch.shape().n, spec_.classes, 1, 1});
  {
    ScopedTimer tm(prof, "head/fc");
    const Tensor<T>& fw = param_ref(fc_w_);
    const Tensor<T>& fb = param_ref(fc_b_);
    const int64_t feat = plan_.head_in.c;
    gemm(false, true, batch.shape().n, spec_.classes, feat, T(1), pooled.data(), feat, fw.data(),
         feat, T(0), logits.data(), spec_.classes);
    for (int64_t n = 0; n < batch.shape().n; ++n)
      for (int64_t j = 0; j < spec_.classes; ++j) logits.data()[n * spec_.classes + j] += fb.data()[j];
  }
  return logits;
}

// ------------------------------ accounting --------------------------------

template <typename T>
int64_t Model<T>::real_param_count() const {
  int64_t cnt = 0;
  for (const Param& p : params_) {
    if (!p.binary_latent) cnt += p.value.count();
  }
  for (const auto& [name, st] : bn_states_) {
    cnt += st.running_mean.count() + st.running_var.count();
  }
  return cnt;
}

template <typename T>
int64_t Model<T>::binary_weight_count() const {
  int64_t cnt = 0;
  for (const Param& p : params_) {
    if (p.binary_latent) cnt += p.value.count();
  }
  return cnt;
}

template <typename T>
int64_t Model<T>::lab_param_count() const {
  int64_t cnt = 0;
  for (const Param& p : params_) {
    if (p.name.rfind("lab.", 0) == 0) cnt += p.value.count();
  }
  return cnt;
}

template <typename T>
int64_t Model<T>::deployed_bytes() const {
  return 4 * real_param_count() + (binary_weight_count() + 7) / 8;
}

template <typename T>
std::vector<std::pair<std::string, T>> Model<T>::lab_betas() const {
  std::vector<std::pair<std::string, T>> out;
  for (const BinaryLayerRefs& l : layers_) {
    if (l.lab_beta >= 0) out.emplace_back(l.plan.name, param_ref(l.lab_beta).data()[0]);
  }
  return out;
}

template <typename T>
void Model<T>::save(const std::string& path) const {
  std::vector<NamedTensor> out;
  for (const Param& p : params_) {
    Tensor<float> f(p.value.shape());
    for (int64_t i = 0; i < f.count(); ++i) f.data()[i] = static_cast<float>(p.value.data()[i]);
    out.push_back({p.name, std::move(f)});
  }
  for (const auto& [name, st] : bn_states_) {
    Tensor<float> rm(st.running_mean.shape()), rv(st.running_var.shape());
    for (int64_t i = 0; i < rm.count(); ++i) rm.data()[i] = static_cast<float>(st.running_mean.data()[i]);
    for (int64_t i = 0; i < rv.count(); ++i) rv.data()[i] = static_cast<float>(st.running_var.data()[i]);
    out.push_back({name + ".running_mean", std::move(rm)});
    out.push_back({name + ".running_var", std::move(rv)});
  }
  save_checkpoint(path, out);
}

template <typename T>
void Model<T>::load(const std::string& path) {
  const std::vector<NamedTensor> in = load_checkpoint(path);
  int64_t consumed = 0;
  auto find = [&](const std::string& name) -> const Tensor<float>& {
    for (const NamedTensor& nt : in) {
      if (nt.name == name) {
        const Tensor<float>* t = std::get_if<Tensor<float>>(&nt.value);
        LABNN_CHECK(t != nullptr, "checkpoint tensor " + name + " has wrong dtype");
        ++consumed;
        return *t;
      }
    }
    fail("checkpoint is missing tensor " + name + " (model/checkpoint mismatch?)");
  };
  auto assign = [&](Tensor<T>& dst, const Tensor<float>& src, const std::string& name) {
    LABNN_CHECK(dst.shape() == src.shape(), "checkpoint tensor " + name + " has shape " +
                                                src.shape().str() + ", expected " +
                                                dst.shape().str());
    for (int64_t i = 0; i < dst.count(); ++i) dst.data()[i] = static_cast<T>(src.data()[i]);
  };
  for (Param& p : params_) assign(p.value, find(p.name), p.name);
  for (auto& [name, st] : bn_states_) {
    assign(st.running_mean, find(name + ".running_mean"), name + ".running_mean");
    assign(st.running_var, find(name + ".running_var"), name + ".running_var");
  }
  LABNN_CHECK(consumed == static_cast<int64_t>(in.size()),
              "checkpoint " + path + " carries tensors this model does not use "
              "(model/checkpoint mismatch?)");
  invalidate_packed();
}

template <typename T>
void Model<T>::quantize_lab(int bits) {
  for (const BinaryLayerRefs& l : layers_) {
    if (l.lab_w < 0) continue;
    LabParams<T> p = lab_params_for(l);
    quantize_lab_weights(p, bits);
    param_ref(l.lab_w) = std::move(p.dw_weights);
  }
  invalidate_packed();
}

template <typename T>
void Model<T>::clamp_latent_weights() {
  for (Param& p : params_) {
    if (!p.binary_latent) continue;
    for (int64_t i = 0; i < p.value.count(); ++i) {
      p.value.data()[i] = std::clamp(p.value.data()[i], T(-1), T(1));
    }
  }
  invalidate_packed();
}

template class Model<float>;
template class Model<double>;

}  // namespace labnn
