#pragma once

#include "vfi/tensor.hpp"

namespace vfi {

// Flow fields are [N,2,H,W] tensors: channel 0 = horizontal displacement u,
// channel 1 = vertical displacement v, in pixels at the field's resolution.
// Zero flow is the identity warp; rescaling to half resolution halves both
// the extents and the displacement values.
template <typename T>
using FlowField = Tensor<T>;

// out(x,y) = bilinear sample of src at (x+u, y+v); sample coordinates are
// clamped to the frame (border replication). Differentiable in src and flow.
template <typename T>
Tensor<T> bilinear_warp(const Tensor<T>& src, const Tensor<T>& flow);

// Mirror padding that does not repeat the edge pixel ([a,b,c] pad 1 ->
// [b,a,b,c,b]). Any pad may be zero; each pad must be < the extent.
template <typename T>
Tensor<T> reflection_pad(const Tensor<T>& x, int left, int right, int top, int bottom);

template <typename T>
Tensor<T> reflection_pad(const Tensor<T>& x, int pad) {
  return reflection_pad(x, pad, pad, pad, pad);
}

// Bilinearly resamples the field to factor * (H,W) and scales the
// displacement values by factor.
template <typename T>
Tensor<T> rescale_flow(const Tensor<T>& flow, double factor);

// crop to x[:, :, y0:y0+h, x0:x0+w] (differentiable)
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int64_t y0, int64_t x0, int64_t h, int64_t w);

}  // namespace vfi
