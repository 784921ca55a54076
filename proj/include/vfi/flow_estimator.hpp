#pragma once

#include <array>
#include <utility>
#include <vector>

#include "vfi/layers.hpp"
#include "vfi/warp.hpp"

namespace vfi {

// Local cosine-similarity correlation. For each pixel x of f_t, maps to
// x' = x + flow(x) in f_src and emits the cosine similarity between f_t(x)
// and the bilinearly sampled f_src at the (2r+1)^2 integer offsets around
// x'. eps is added to both norms. Differentiable in features and flow.
template <typename T>
Tensor<T> correlation_volume(const Tensor<T>& f_t, const Tensor<T>& f_src,
                             const Tensor<T>& flow, int radius = 1, double eps = 1e-6);

// (O_t->0, O_t->1) per level, coarse to fine
template <typename T>
using FlowPyramid = std::vector<std::pair<Tensor<T>, Tensor<T>>>;

// Plain convolutional coarse-flow predictor at 1/8 resolution. The final
// layer is zero-initialized, so the untrained output is exactly zero flow.
template <typename T>
struct CoarseFlowNet {
  Conv2dLayer<T> c1, c2, c3, c4, r1, r2, head;
  T leaky = T(0.1);

  void init(const std::array<int, 3>& widths, Rng& rng);
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& i0, const Tensor<T>& i1);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

// Bilateral local refinement block. Rescales the incoming flow pair x2,
// warps the per-frame features, blends them with a sigmoid mask into F_t,
// builds radius-1 correlation volumes against each side, and regresses a
// residual per side (zero-initialized head: the first pass is exactly the
// rescaled input flow).
template <typename T>
struct Blrb {
  Conv2dLayer<T> mask1, mask2;
  struct Side {
    Conv2dLayer<T> corr1, corr2, flow1, flow2, res1, res2, res3, res4;
  };
  std::array<Side, 2> sides;
  T leaky = T(0.1);
  int radius = 1;
  double corr_eps = 1e-6;

  void init(int feat_c, int width, Rng& rng);
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& flow0_prev,
                                          const Tensor<T>& flow1_prev, const Tensor<T>& f0,
                                          const Tensor<T>& f1);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

// Coarse prediction at 1/8 followed by three BLRBs at 1/4, 1/2 and full
// resolution. The 1/4 and 1/2 blocks consume encoder levels 1 and 0; the
// full-resolution block uses a small stride-1 stem computed from the frames.
template <typename T>
struct FlowEstimator {
  CoarseFlowNet<T> coarse;
  Conv2dLayer<T> stem1, stem2;
  std::array<Blrb<T>, 3> blocks;
  T leaky = T(0.1);

  // enc_widths: encoder channel counts at 1/2, 1/4, 1/8, 1/16
  void init(const std::array<int, 4>& enc_widths, Rng& rng);
  Tensor<T> stem(const Tensor<T>& frame);
  // enc0/enc1: 4-level feature pyramids of the two frames (1/2 .. 1/16)
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& i0, const Tensor<T>& i1,
                                          const std::vector<Tensor<T>>& enc0,
                                          const std::vector<Tensor<T>>& enc1,
                                          FlowPyramid<T>* pyramid = nullptr);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

}  // namespace vfi
