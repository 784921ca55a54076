#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "vfi/attention.hpp"
#include "vfi/flow_estimator.hpp"
#include "vfi/loss.hpp"

namespace vfi {

// Every architectural and training hyperparameter. Two presets:
// "paper": M=8, width 180, TFLs 2/6/6/6, encoder 24/48/96/192, 6 heads,
//          lambda (1,1,0.01), lr 1e-4, crop 192, batches 48/24.
// "toy":   M=4, width 32, TFLs 1/2/2/2, encoder 8/16/24/32, 2 heads —
//          desk-scale settings for CPU training.
struct ModelConfig {
  std::string preset = "toy";
  int window = 4;
  int width = 32;
  std::array<int, 4> tfls{1, 2, 2, 2};
  std::array<int, 4> enc_widths{8, 16, 24, 32};
  int heads = 2;
  int mlp_ratio = 2;
  bool use_cross = true;  // false: plain window attention (ablation)

  double lambda_rec = 1.0, lambda_css = 1.0, lambda_dis = 0.01;
  double lr = 1e-3;
  int batch = 2;
  int crop = 64;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 0.0;
  bool cosine_decay = true;  // phase-2 lr decay to 10%

  double leaky_slope = 0.1;
  std::string mlp_activation = "gelu";
  std::string conv_activation = "leaky_relu_0.1";

  // census-loss constants
  int census_patch = 7;
  double census_binarize_eps = 1e-4;
  double census_rho_eps = 0.1;
  double census_charbonnier_alpha = 0.45;
  double census_charbonnier_eps = 1e-3;

  int corr_radius = 1;
  double corr_eps = 1e-6;

  static ModelConfig toy();
  static ModelConfig paper();
  static ModelConfig preset_by_name(const std::string& name);

  CensusConfig census() const;
  void validate() const;
  std::string to_json() const;  // canonical: keys sorted
  static ModelConfig from_json(const std::string& text);  // unknown keys rejected
  uint64_t digest() const;
};

// 4 blocks of (stride-2 conv, stride-1 conv): features at 1/2..1/16
template <typename T>
struct Encoder {
  struct Block {
    Conv2dLayer<T> c1, c2;
  };
  std::array<Block, 4> blocks;
  T leaky = T(0.1);

  void init(const ModelConfig& cfg, Rng& rng);
  std::vector<Tensor<T>> forward(const Tensor<T>& img);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

template <typename T>
struct SynthesisOutput {
  Tensor<T> mask;      // H, in (0,1)
  Tensor<T> residual;  // signed correction
  Tensor<T> frame;     // H.w0 + (1-H).w1 + residual, unclamped
  Tensor<T> warped0, warped1;
};

// blend mask/residual composition; the frame is built from exactly these ops
template <typename T>
Tensor<T> synthesize(const Tensor<T>& mask, const Tensor<T>& residual, const Tensor<T>& warped0,
                     const Tensor<T>& warped1);

// UNet: four transformer blocks at 1/1, 1/2, 1/4, 1/8 (the first consumes
// the frames and warped frames only), then three transposed-conv upsampling
// stages with skips from the matching block outputs, and a 4-channel head
// (sigmoid mask + raw residual).
template <typename T>
struct SynthesisNet {
  std::array<Tfb<T>, 4> tfbs;
  std::array<ConvT2dLayer<T>, 3> ups;
  std::array<Conv2dLayer<T>, 3> merges;
  Conv2dLayer<T> head;
  T leaky = T(0.1);

  void init(const ModelConfig& cfg, Rng& rng);
  SynthesisOutput<T> forward(const Tensor<T>& i0, const Tensor<T>& i1, const Tensor<T>& wi0,
                             const Tensor<T>& wi1, const std::vector<Tensor<T>>& wf0,
                             const std::vector<Tensor<T>>& wf1);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

template <typename T>
struct VfiModel {
  ModelConfig cfg;
  Encoder<T> enc;
  FlowEstimator<T> flow;
  SynthesisNet<T> synth;

  VfiModel(const ModelConfig& cfg_, uint64_t seed);

  ParamMap<T> params();             // full model, checkpoint order
  ParamMap<T> flow_phase_params();  // encoder + flow estimator (phase 1)
  // parameters reachable from the losses. The 1/16 encoder level is
  // produced per the encode contract but has no consumer in this wiring,
  // so its weights cannot receive gradients and are excluded from
  // optimizer updates (they are still checkpointed).
  ParamMap<T> trainable_params();
  ParamMap<T> trainable_flow_phase_params();

  struct ForwardOut {
    SynthesisOutput<T> out;
    std::pair<Tensor<T>, Tensor<T>> flows;  // O_t->0, O_t->1 at full res
  };

  // frames [N,3,H,W] in [0,1], H and W divisible by 16
  ForwardOut forward(const Tensor<T>& i0, const Tensor<T>& i1);
  std::pair<Tensor<T>, Tensor<T>> estimate_flow(const Tensor<T>& i0, const Tensor<T>& i1,
                                                FlowPyramid<T>* pyramid = nullptr);
  Tensor<T> interpolate(const Tensor<T>& i0, const Tensor<T>& i1);  // unclamped
  // factor in {2,4,8,...}: factor-1 frames in temporal order
  std::vector<Tensor<T>> interpolate_recursive(const Tensor<T>& i0, const Tensor<T>& i1,
                                               int factor);
};

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x);  // export helper, not differentiable

using VfiModelF = VfiModel<float>;
using VfiModelD = VfiModel<double>;

}  // namespace vfi
