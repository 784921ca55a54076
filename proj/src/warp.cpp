#include "vfi/warp.hpp"

#include <algorithm>
#include <cmath>

namespace vfi {

namespace {

template <typename T>
using Node = std::shared_ptr<TensorData<T>>;

template <typename T>
bool rec_for(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::get().recording()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->tracked()) return true;
  return false;
}

template <typename T>
void push_step(bool rec, Tensor<T>& out, std::function<void()> fn) {
  if (!rec) return;
  out.node()->tracked = true;
  Tape<T>::get().push(std::move(fn));
}

int64_t mirror_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_warp(const Tensor<T>& src, const Tensor<T>& flow) {
  if (src.ndim() != 4 || flow.ndim() != 4)
    throw DimError("bilinear_warp: expected NCHW tensors");
  int64_t N = src.shape()[0], C = src.shape()[1], H = src.shape()[2], W = src.shape()[3];
  if (flow.shape()[0] != N || flow.shape()[1] != 2 || flow.shape()[2] != H ||
      flow.shape()[3] != W)
    throw DimError("bilinear_warp: flow " + format_shape(flow.shape()) +
                   " does not match source " + format_shape(src.shape()));

  Tensor<T> out({N, C, H, W});
  const T* ps = src.data();
  const T* pf = flow.data();
  T* po = out.data();
  int64_t hw = H * W;
  parallel_for(N * H, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      int64_t n = r / H, y = r % H;
      const T* u = pf + n * 2 * hw + y * W;
      const T* v = u + hw;
      for (int64_t x = 0; x < W; ++x) {
        T sx = static_cast<T>(x) + u[x];
        T sy = static_cast<T>(y) + v[x];
        sx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
        sy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
        int64_t x0 = std::min(static_cast<int64_t>(sx), W - 1);
        int64_t y0 = std::min(static_cast<int64_t>(sy), H - 1);
        int64_t x1 = std::min(x0 + 1, W - 1);
        int64_t y1 = std::min(y0 + 1, H - 1);
        T fx = sx - static_cast<T>(x0);
        T fy = sy - static_cast<T>(y0);
        for (int64_t c = 0; c < C; ++c) {
          const T* plane = ps + (n * C + c) * hw;
          T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
          T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
          po[(n * C + c) * hw + y * W + x] =
              (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
              fy * ((T(1) - fx) * v10 + fx * v11);
        }
      }
    }
  }, 64);

  bool rec = rec_for<T>({&src, &flow});
  push_step(rec, out, [sn = src.node(), fn = flow.node(), on = out.node(), N, C, H, W]() {
    if (on->g.empty()) return;
    const T* ps = sn->v.data();
    const T* pf = fn->v.data();
    const T* go = on->g.data();
    bool gs_on = sn->tracked, gf_on = fn->tracked;
    if (gs_on) sn->ensure_grad();
    if (gf_on) fn->ensure_grad();
    T* gs = gs_on ? sn->g.data() : nullptr;
    T* gf = gf_on ? fn->g.data() : nullptr;
    int64_t hw = H * W;
    // per-sample: source-grad scatters stay within the sample's planes
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n) {
        for (int64_t y = 0; y < H; ++y) {
          const T* u = pf + n * 2 * hw + y * W;
          const T* v = u + hw;
          for (int64_t x = 0; x < W; ++x) {
            T sx = static_cast<T>(x) + u[x];
            T sy = static_cast<T>(y) + v[x];
            bool in_x = sx > T(0) && sx < static_cast<T>(W - 1);
            bool in_y = sy > T(0) && sy < static_cast<T>(H - 1);
            sx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
            sy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
            int64_t x0 = std::min(static_cast<int64_t>(sx), W - 1);
            int64_t y0 = std::min(static_cast<int64_t>(sy), H - 1);
            int64_t x1 = std::min(x0 + 1, W - 1);
            int64_t y1 = std::min(y0 + 1, H - 1);
            T fx = sx - static_cast<T>(x0);
            T fy = sy - static_cast<T>(y0);
            T du = T(0), dv = T(0);
            for (int64_t c = 0; c < C; ++c) {
              const T* plane = ps + (n * C + c) * hw;
              T g = go[(n * C + c) * hw + y * W + x];
              if (gs_on) {
                T* gplane = gs + (n * C + c) * hw;
                gplane[y0 * W + x0] += g * (T(1) - fy) * (T(1) - fx);
                gplane[y0 * W + x1] += g * (T(1) - fy) * fx;
                gplane[y1 * W + x0] += g * fy * (T(1) - fx);
                gplane[y1 * W + x1] += g * fy * fx;
              }
              if (gf_on) {
                T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
                T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
                // d(out)/d(sx), d(out)/d(sy); zero where the clamp is active
                if (in_x) du += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                if (in_y) dv += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
            }
            if (gf_on) {
              gf[n * 2 * hw + y * W + x] += du;
              gf[n * 2 * hw + hw + y * W + x] += dv;
            }
          }
        }
      }
    }, 1);
  });
  return out;
}

template <typename T>
Tensor<T> reflection_pad(const Tensor<T>& x, int left, int right, int top, int bottom) {
  if (x.ndim() != 4) throw DimError("reflection_pad: expected NCHW input");
  if (left < 0 || right < 0 || top < 0 || bottom < 0)
    throw DimError("reflection_pad: negative padding");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (left >= W || right >= W || top >= H || bottom >= H)
    throw DimError("reflection_pad: pad (" + std::to_string(std::max({left, right, top, bottom})) +
                   ") must be smaller than the spatial extent of " + format_shape(x.shape()));
  int64_t OH = H + top + bottom, OW = W + left + right;
  std::vector<int64_t> ymap(OH), xmap(OW);
  for (int64_t y = 0; y < OH; ++y) ymap[y] = mirror_index(y - top, H);
  for (int64_t xx = 0; xx < OW; ++xx) xmap[xx] = mirror_index(xx - left, W);

  Tensor<T> out({N, C, OH, OW});
  const T* px = x.data();
  T* po = out.data();
  parallel_for(N * C, [&](int64_t p0, int64_t p1) {
    for (int64_t pl = p0; pl < p1; ++pl) {
      const T* sp = px + pl * H * W;
      T* dp = po + pl * OH * OW;
      for (int64_t y = 0; y < OH; ++y) {
        const T* srow = sp + ymap[y] * W;
        T* drow = dp + y * OW;
        for (int64_t xx = 0; xx < OW; ++xx) drow[xx] = srow[xmap[xx]];
      }
    }
  }, 1);

  bool rec = rec_for<T>({&x});
  push_step(rec, out, [xn = x.node(), on = out.node(), ymap, xmap, N, C, H, W, OH, OW]() {
    if (on->g.empty()) return;
    xn->ensure_grad();
    const T* go = on->g.data();
    T* gx = xn->g.data();
    parallel_for(N * C, [&](int64_t p0, int64_t p1) {
      for (int64_t pl = p0; pl < p1; ++pl) {
        const T* gp = go + pl * OH * OW;
        T* gxp = gx + pl * H * W;
        for (int64_t y = 0; y < OH; ++y)
          for (int64_t xx = 0; xx < OW; ++xx) gxp[ymap[y] * W + xmap[xx]] += gp[y * OW + xx];
      }
    }, 1);
  });
  return out;
}

template <typename T>
Tensor<T> rescale_flow(const Tensor<T>& flow, double factor) {
  if (flow.ndim() != 4 || flow.shape()[1] != 2)
    throw DimError("rescale_flow: expected [N,2,H,W] flow, got " + format_shape(flow.shape()));
  if (!(factor > 0.0)) throw DimError("rescale_flow: factor must be positive");
  if (factor == 1.0) return flow;
  int64_t oh = static_cast<int64_t>(std::llround(flow.shape()[2] * factor));
  int64_t ow = static_cast<int64_t>(std::llround(flow.shape()[3] * factor));
  if (oh < 1 || ow < 1) throw DimError("rescale_flow: factor collapses the field");
  return mul_scalar(resize_bilinear(flow, oh, ow), static_cast<T>(factor));
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  return slice(slice(x, 2, y0, h), 3, x0, w);
}

#define VFI_INSTANTIATE(T)                                                                   \
  template Tensor<T> bilinear_warp<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> reflection_pad<T>(const Tensor<T>&, int, int, int, int);                \
  template Tensor<T> rescale_flow<T>(const Tensor<T>&, double);                              \
  template Tensor<T> crop2d<T>(const Tensor<T>&, int64_t, int64_t, int64_t, int64_t);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
