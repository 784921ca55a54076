#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vfi/tensor.hpp"

namespace vfi {

// Effective-receptive-field map: mean absolute input gradient of the center
// output activation, max-normalized to 1 (an all-zero field is left as-is).
struct ErfMap {
  int64_t h = 0, w = 0;
  std::vector<double> map;
  std::string block;
  int window = 0;
  double threshold = 0.01;
};

// A factory builds a freshly initialized block per sample; the block maps
// [1,C,H,W] to [1,C',H,W].
template <typename T>
using BlockFactory = std::function<std::function<Tensor<T>(const Tensor<T>&)>(Rng&)>;

// Backpropagates a unit gradient from the channel-summed center output
// activation to the input, accumulates the per-pixel L1 magnitude over
// `samples` random inputs and inits, and max-normalizes.
template <typename T>
ErfMap compute_erf(const BlockFactory<T>& factory, int64_t c, int64_t h, int64_t w, int samples,
                   Rng& rng);

// pixels strictly above threshold (0 for an all-zero map)
int64_t erf_area(const ErfMap& map, double threshold = 0.01);

void write_erf_png(const std::string& path, const ErfMap& map);

}  // namespace vfi
