#pragma once

#include <string>
#include <vector>

#include "vfi/layers.hpp"
#include "vfi/window.hpp"

namespace vfi {

// Relative-position bias index maps. Fine windows index a (2M-1)^2 table by
// token-to-token offsets. Cross windows map each coarse token to fine pixel
// units (position*2 minus the M/2 padding offset) and index a (4M-1)^2 table.
std::vector<int64_t> fine_bias_indices(int m);
std::vector<int64_t> cross_bias_indices(int m);

// Projections for windowed attention. The cross-scale variant adds separate
// key/value projections for the coarse window; plain WA uses only the
// fine-side set. One output projection is shared by both attention results.
template <typename T>
struct AttentionParams {
  LinearLayer<T> wq, wkx, wky, wvx, wvy, wo;
  Parameter<T> p_fine;   // [heads, (2M-1)^2]
  Parameter<T> p_cross;  // [heads, (4M-1)^2]
  int heads = 1;
  int m = 0;
  int channels = 0;
  std::vector<int64_t> fine_idx, cross_idx;

  void init(int channels_, int m_, int heads_, Rng& rng, bool with_cross = true);
  void collect(ParamMap<T>& out, const std::string& prefix, bool with_cross = true);
};

// Softmax(Q K^T / sqrt(d) + P) V within each window, heads concatenated,
// then output-projected. Geometry metadata is carried through.
template <typename T>
WindowGrid<T> wa_forward(const WindowGrid<T>& x_windows, AttentionParams<T>& params);

template <typename T>
struct CswaBlock {
  AttentionParams<T> attn;
  Conv2dLayer<T> fuse1, fuse2;  // 3x3, 2C->C and C->C, LeakyReLU between
  T leaky = T(0.1);

  void init(int channels, int m, int heads, Rng& rng);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

// Queries from the fine window attend to (K,V) of both the fine and the
// coarse window; the two results are merged to maps and fused:
// out = X_X + Convs([X_X, X_Y]). Returns the fused spatial map.
template <typename T>
Tensor<T> cswa_forward_map(const WindowGrid<T>& x_windows, const WindowGrid<T>& y_windows,
                           CswaBlock<T>& blk);

// Grid-in/grid-out variant (repartitions the fused map; partition/merge is
// lossless on non-overlapping grids).
template <typename T>
WindowGrid<T> cswa_forward(const WindowGrid<T>& x_windows, const WindowGrid<T>& y_windows,
                           CswaBlock<T>& blk);

// Transformer layer: z^ = attention(LN(z)) + z; z' = MLP(LN(z^)) + z^.
// The attention path pads the map to a window multiple (reflection) and
// crops back, so any spatial size passes through unchanged.
template <typename T>
struct Tfl {
  LayerNormLayer<T> ln1, ln2;
  CswaBlock<T> attn;
  LinearLayer<T> mlp1, mlp2;
  bool use_cross = true;
  int m = 0;

  void init(int channels, int m_, int heads, int mlp_ratio, Rng& rng, bool use_cross_);
  Tensor<T> forward(const Tensor<T>& z);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

// Transformer block: entry conv -> n TFLs -> exit conv. Inputs are already
// concatenated at a shared scale by the caller.
template <typename T>
struct Tfb {
  Conv2dLayer<T> entry, exit;
  std::vector<Tfl<T>> layers;
  T leaky = T(0.1);

  void init(int in_channels, int channels, int n_layers, int m, int heads, int mlp_ratio,
            Rng& rng, bool use_cross);
  Tensor<T> forward(const Tensor<T>& x_cat);
  Tensor<T> forward(const Tensor<T>& f_prev, const Tensor<T>& warped0, const Tensor<T>& warped1);
  void collect(ParamMap<T>& out, const std::string& prefix);
};

// Analytic MAC count of one cswa/wa pass at the given geometry; the bench
// harness checks the instrumented count against this exactly.
int64_t attention_macs(int64_t n, int64_t c, int64_t h, int64_t w, int m, int heads, bool cross);

}  // namespace vfi
