#pragma once

#include "vfi/tensor.hpp"

namespace vfi {

// A feature map partitioned into M x M token windows.
//
// Non-overlapping mode tiles the map itself (stride M). Overlapping mode is
// built from the half-scale map: reflection-pad by M/4 per side, then extract
// M x M windows at stride M/2, which yields exactly one coarse window per
// fine window with matching row-major order and matching centers in fine
// coordinates.
template <typename T>
struct WindowGrid {
  Tensor<T> windows;  // [N * num_windows, M*M, C]
  int64_t n = 0, c = 0;
  int64_t fine_h = 0, fine_w = 0;  // fine-scale map extents this grid pairs with
  int m = 0;
  int stride = 0;
  int64_t grid_h = 0, grid_w = 0;  // windows per axis
  bool overlapping = false;

  int64_t num_windows() const { return grid_h * grid_w; }
  // window origin on the (padded, for overlapping) source map
  int64_t origin_y(int64_t wy) const { return wy * stride; }
  int64_t origin_x(int64_t wx) const { return wx * stride; }
};

// x [N,C,H,W] with H,W divisible by M -> row-major windows, row-major tokens,
// channels as the token feature dim.
template <typename T>
WindowGrid<T> partition_windows(const Tensor<T>& x, int m);

// x_down [N,C,H/2,W/2] where the fine map was H x W (H,W divisible by M,
// M divisible by 4).
template <typename T>
WindowGrid<T> partition_overlapping(const Tensor<T>& x_down, int m);

// exact inverse of partition_windows; usage error on an overlapping grid
template <typename T>
Tensor<T> merge_windows(const WindowGrid<T>& grid);

}  // namespace vfi
