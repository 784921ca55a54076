#include "vfi/window.hpp"

#include "vfi/warp.hpp"

namespace vfi {

namespace {

template <typename T>
bool rec_for(const Tensor<T>& x) {
  return Tape<T>::get().recording() && x.tracked();
}

template <typename T>
void push_step(bool rec, Tensor<T>& out, std::function<void()> fn) {
  if (!rec) return;
  out.node()->tracked = true;
  Tape<T>::get().push(std::move(fn));
}

// windows [N*GH*GW, M*M, C] <- map [N, C, SH, SW] at the given stride
template <typename T>
Tensor<T> extract_windows(const Tensor<T>& map, int m, int stride, int64_t gh, int64_t gw,
                          bool overlapping_grad) {
  int64_t N = map.shape()[0], C = map.shape()[1], SH = map.shape()[2], SW = map.shape()[3];
  Tensor<T> out({N * gh * gw, static_cast<int64_t>(m) * m, C});
  const T* pm = map.data();
  T* po = out.data();
  int64_t tokens = static_cast<int64_t>(m) * m;
  parallel_for(N * gh * gw, [&](int64_t w0, int64_t w1) {
    for (int64_t wi = w0; wi < w1; ++wi) {
      int64_t n = wi / (gh * gw);
      int64_t wy = (wi / gw) % gh;
      int64_t wx = wi % gw;
      int64_t oy = wy * stride, ox = wx * stride;
      T* dst = po + wi * tokens * C;
      for (int64_t r = 0; r < m; ++r)
        for (int64_t col = 0; col < m; ++col) {
          int64_t t = r * m + col;
          int64_t sy = oy + r, sx = ox + col;
          for (int64_t ch = 0; ch < C; ++ch)
            dst[t * C + ch] = pm[((n * C + ch) * SH + sy) * SW + sx];
        }
    }
  }, 8);

  bool rec = rec_for(map);
  push_step(rec, out,
            [mn = map.node(), on = out.node(), N, C, SH, SW, m, stride, gh, gw,
             overlapping_grad]() {
              if (on->g.empty()) return;
              mn->ensure_grad();
              const T* go = on->g.data();
              T* gm = mn->g.data();
              int64_t tokens = static_cast<int64_t>(m) * m;
              // overlapping windows scatter into shared pixels: split by sample
              parallel_for(N, [&](int64_t n0, int64_t n1) {
                for (int64_t n = n0; n < n1; ++n)
                  for (int64_t wy = 0; wy < gh; ++wy)
                    for (int64_t wx = 0; wx < gw; ++wx) {
                      int64_t wi = (n * gh + wy) * gw + wx;
                      const T* src = go + wi * tokens * C;
                      int64_t oy = wy * stride, ox = wx * stride;
                      for (int64_t r = 0; r < m; ++r)
                        for (int64_t col = 0; col < m; ++col) {
                          int64_t t = r * m + col;
                          int64_t sy = oy + r, sx = ox + col;
                          for (int64_t ch = 0; ch < C; ++ch)
                            gm[((n * C + ch) * SH + sy) * SW + sx] += src[t * C + ch];
                        }
                    }
              }, 1);
            });
  return out;
}

}  // namespace

template <typename T>
WindowGrid<T> partition_windows(const Tensor<T>& x, int m) {
  if (x.ndim() != 4) throw DimError("partition_windows: expected NCHW input");
  if (m < 1) throw ConfigError("partition_windows: window size must be >= 1");
  int64_t H = x.shape()[2], W = x.shape()[3];
  if (H % m != 0 || W % m != 0)
    throw DimError("partition_windows: extents " + format_shape(x.shape()) +
                   " not divisible by window " + std::to_string(m) + "; pad by " +
                   std::to_string((m - H % m) % m) + "x" + std::to_string((m - W % m) % m) +
                   " first");
  WindowGrid<T> g;
  g.n = x.shape()[0];
  g.c = x.shape()[1];
  g.fine_h = H;
  g.fine_w = W;
  g.m = m;
  g.stride = m;
  g.grid_h = H / m;
  g.grid_w = W / m;
  g.overlapping = false;
  g.windows = extract_windows(x, m, m, g.grid_h, g.grid_w, false);
  return g;
}

template <typename T>
WindowGrid<T> partition_overlapping(const Tensor<T>& x_down, int m) {
  if (x_down.ndim() != 4) throw DimError("partition_overlapping: expected NCHW input");
  if (m % 4 != 0)
    throw ConfigError("partition_overlapping: window size must be divisible by 4, got " +
                      std::to_string(m));
  int64_t HD = x_down.shape()[2], WD = x_down.shape()[3];
  int64_t H = 2 * HD, W = 2 * WD;
  if (H % m != 0 || W % m != 0)
    throw DimError("partition_overlapping: fine extents " + std::to_string(H) + "x" +
                   std::to_string(W) + " not divisible by window " + std::to_string(m));
  int pad = m / 4, stride = m / 2;
  Tensor<T> padded = reflection_pad(x_down, pad);
  int64_t PH = HD + 2 * pad;
  int64_t gh = (PH - m) / stride + 1;  // == H/m by construction
  int64_t gw = (WD + 2 * pad - m) / stride + 1;

  WindowGrid<T> g;
  g.n = x_down.shape()[0];
  g.c = x_down.shape()[1];
  g.fine_h = H;
  g.fine_w = W;
  g.m = m;
  g.stride = stride;
  g.grid_h = gh;
  g.grid_w = gw;
  g.overlapping = true;
  g.windows = extract_windows(padded, m, stride, gh, gw, true);
  return g;
}

template <typename T>
Tensor<T> merge_windows(const WindowGrid<T>& grid) {
  if (grid.overlapping)
    throw UsageError("merge_windows: overlapping grids have no unique inverse");
  int64_t N = grid.n, C = grid.c, H = grid.fine_h, W = grid.fine_w;
  int m = grid.m;
  int64_t gh = grid.grid_h, gw = grid.grid_w;
  const Tensor<T>& win = grid.windows;
  Tensor<T> out({N, C, H, W});
  const T* pw = win.data();
  T* po = out.data();
  int64_t tokens = static_cast<int64_t>(m) * m;
  parallel_for(N * gh * gw, [&](int64_t w0, int64_t w1) {
    for (int64_t wi = w0; wi < w1; ++wi) {
      int64_t n = wi / (gh * gw);
      int64_t wy = (wi / gw) % gh;
      int64_t wx = wi % gw;
      const T* src = pw + wi * tokens * C;
      for (int64_t r = 0; r < m; ++r)
        for (int64_t col = 0; col < m; ++col) {
          int64_t t = r * m + col;
          int64_t sy = wy * m + r, sx = wx * m + col;
          for (int64_t ch = 0; ch < C; ++ch)
            po[((n * C + ch) * H + sy) * W + sx] = src[t * C + ch];
        }
    }
  }, 8);

  bool rec = rec_for(win);
  Tensor<T> result = out;
  push_step(rec, result, [wn = win.node(), on = out.node(), N, C, H, W, m, gh, gw]() {
    if (on->g.empty()) return;
    wn->ensure_grad();
    const T* go = on->g.data();
    T* gw_ = wn->g.data();
    int64_t tokens = static_cast<int64_t>(m) * m;
    parallel_for(N * gh * gw, [&](int64_t w0, int64_t w1) {
      for (int64_t wi = w0; wi < w1; ++wi) {
        int64_t n = wi / (gh * gw);
        int64_t wy = (wi / gw) % gh;
        int64_t wx = wi % gw;
        T* dst = gw_ + wi * tokens * C;
        for (int64_t r = 0; r < m; ++r)
          for (int64_t col = 0; col < m; ++col) {
            int64_t t = r * m + col;
            int64_t sy = wy * m + r, sx = wx * m + col;
            for (int64_t ch = 0; ch < C; ++ch)
              dst[t * C + ch] += go[((n * C + ch) * H + sy) * W + sx];
          }
      }
    }, 8);
  });
  return result;
}

#define VFI_INSTANTIATE(T)                                             \
  template struct WindowGrid<T>;                                       \
  template WindowGrid<T> partition_windows<T>(const Tensor<T>&, int);  \
  template WindowGrid<T> partition_overlapping<T>(const Tensor<T>&, int); \
  template Tensor<T> merge_windows<T>(const WindowGrid<T>&);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
