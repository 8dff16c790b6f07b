#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "labnn/binarize.hpp"
#include "labnn/bitconv.hpp"
#include "labnn/ops.hpp"

namespace labnn {

enum class StemKind { kPlainConv, kQuicknetStem };
enum class ShortcutProjection { kPoolDuplicate, kConv1x1 };

std::string stem_kind_name(StemKind k);
StemKind stem_kind_from_name(const std::string& name);

// One stage of binary layers. The first layer applies the stride; all layers
// of a stage share channel count and binarizer choice.
struct StageSpec {
  int64_t layers = 2;
  int64_t channels = 32;
  int64_t stride = 1;
  BinarizerKind binarizer = BinarizerKind::kSignSte;
  double bin_k = -0.2;      // niblack / sauvola k
  double bin_R = 0.0;       // sauvola R, 0 = auto
  int64_t bin_window = 3;
  bool use_prelu = true;
};

// Bi-RealNet-style model: full-precision stem and classifier around stages
// of binary convolutions, each wrapped by a real-valued shortcut.
struct ModelSpec {
  Shape4 input{1, 3, 32, 32};  // n is ignored
  StemKind stem = StemKind::kPlainConv;
  int64_t stem_kernel = 3;
  int64_t stem_stride = 1;
  bool stem_maxpool = false;
  ShortcutProjection shortcut = ShortcutProjection::kPoolDuplicate;
  std::vector<StageSpec> stages;
  int64_t classes = 10;
  bool prelu_after_add = true;  // PReLU placement relative to the shortcut add
  int64_t lab_kernel = 3;

  void validate() const;

  // 4 stages x 2 layers, channels 32/64/128/256.
  static ModelSpec desk_default(int64_t in_channels = 3, int64_t in_hw = 32,
                                BinarizerKind binarizer = BinarizerKind::kSignSte);
  // ResNet-18 at ImageNet shapes (7x7/2 stem + pool, conv1x1 shortcut
  // projections, 1000 classes); used by the operation counter.
  static ModelSpec resnet18_imagenet(BinarizerKind binarizer = BinarizerKind::kSignSte);
};

// Shape walk of a spec: one entry per binary layer plus stem/head markers.
struct BinaryLayerPlan {
  std::string name;  // "s1.l0"
  int64_t stage = 0;  // 0-based stage index
  int64_t cin = 0, cout = 0, k = 3, stride = 1;
  int64_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  BinarizerKind binarizer = BinarizerKind::kSignSte;
  bool use_prelu = true;
  bool pool_shortcut = false;       // stride-2 shortcut pooling
  bool duplicate_shortcut = false;  // channel doubling by duplication
  bool conv1x1_shortcut = false;    // real projection instead
};

struct ModelPlan {
  // stem
  std::vector<std::pair<std::string, Shape4>> stem_convs;  // weight shapes
  std::vector<int64_t> stem_groups;
  std::vector<int64_t> stem_strides;
  std::vector<Shape4> stem_inputs;  // input activation shape per stem conv
  bool stem_maxpool = false;
  Shape4 after_stem{1, 0, 0, 0};
  std::vector<BinaryLayerPlan> binary_layers;
  Shape4 head_in{1, 0, 0, 0};
  int64_t classes = 0;
};

ModelPlan plan_model(const ModelSpec& spec);

// Wall-clock attribution of inference work, keyed "layer/op".
class Profiler {
 public:
  void add(const std::string& key, double seconds);
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

// Captures per-binary-layer activations during inference (analysis paths).
template <typename T>
struct ActivationSink {
  struct Record {
    std::string layer;
    Tensor<T> pre;   // real activation entering the binarizer
    BitTensor post;  // binarized map
  };
  std::vector<Record> records;
};

template <typename T>
class Model {
 public:
  struct Param {
    std::string name;
    Tensor<T> value;
    bool binary_latent = false;  // clipped to [-1, 1] after optimizer steps
  };

  Model(const ModelSpec& spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const ModelPlan& plan() const { return plan_; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  // Builds the training graph on the tape. Returns the scalar loss node,
  // the logits node, and tape leaf ids aligned with params().
  struct GraphBuild {
    int loss = -1;
    int logits = -1;
    std::vector<int> param_leaves;
  };
  GraphBuild build_graph(Tape<T>& tape, const Tensor<T>& batch, const std::vector<int>& labels,
                         BinMode mode, bool update_running);

  // Inference with running batchnorm statistics. kPacked runs the binary
  // convolutions as XNOR + popcount over BitTensors (the deployment path);
  // kGemm runs them as real GEMMs over +-1 tensors. Both routes are
  // integer-exact over +-1 data, so their outputs are bit-identical.
  enum class InferPath { kPacked, kGemm };
  Tensor<T> infer(const Tensor<T>& batch, InferPath path = InferPath::kPacked,
                  Profiler* prof = nullptr, ActivationSink<T>* sink = nullptr) const;

  int64_t real_param_count() const;
  int64_t binary_weight_count() const;
  int64_t lab_param_count() const;  // across all LAB sites
  // 1 bit per binary weight, 4 bytes per real parameter (running stats
  // included; they ship with the model).
  int64_t deployed_bytes() const;

  std::vector<std::pair<std::string, T>> lab_betas() const;

  void save(const std::string& path) const;
  void load(const std::string& path);
  void quantize_lab(int bits);

  // Clip binary latent weights to [-1, 1]; call after each optimizer step.
  void clamp_latent_weights();

  // Drop cached packed/signed weights; call after any parameter change.
  void invalidate_packed() const {
    packed_.clear();
    signed_weights_.clear();
  }

 private:
  // Parameter indices (into params_) per structural element.
  struct StemConvRefs {
    std::string name;
    int w = -1, bn_gamma = -1, bn_beta = -1, prelu = -1;
    int64_t stride = 1, groups = 1;
  };
  struct BinaryLayerRefs {
    BinaryLayerPlan plan;
    int conv_w = -1;
    int bn_gamma = -1, bn_beta = -1;
    int prelu = -1;
    int lab_w = -1, lab_b = -1, lab_beta = -1;
    int proj_w = -1, proj_bn_gamma = -1, proj_bn_beta = -1;
  };

  Tensor<T>& param_ref(int idx) { return params_[static_cast<size_t>(idx)].value; }
  const Tensor<T>& param_ref(int idx) const { return params_[static_cast<size_t>(idx)].value; }
  int add_param(const std::string& name, Tensor<T> value, bool binary_latent = false);
  BnState<T>& bn_state(const std::string& name);
  const BnState<T>& bn_state(const std::string& name) const;
  LabParams<T> lab_params_for(const BinaryLayerRefs& l) const;

  ModelSpec spec_;
  ModelPlan plan_;
  std::vector<Param> params_;
  std::vector<std::pair<std::string, BnState<T>>> bn_states_;
  std::vector<StemConvRefs> stem_convs_;
  std::vector<BinaryLayerRefs> layers_;
  int fc_w_ = -1, fc_b_ = -1;
  mutable std::vector<BinConvLayer<T>> packed_;   // per binary layer, lazy
  mutable std::vector<Tensor<T>> signed_weights_;  // +-1 real twins, lazy
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace labnn
