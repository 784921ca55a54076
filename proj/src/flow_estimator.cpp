#include "vfi/flow_estimator.hpp"

#include <cmath>

namespace vfi {

namespace {

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

}  // namespace

template <typename T>
Tensor<T> correlation_volume(const Tensor<T>& f_t, const Tensor<T>& f_src,
                             const Tensor<T>& flow, int radius, double eps) {
  if (f_t.ndim() != 4 || f_src.ndim() != 4 || flow.ndim() != 4)
    throw DimError("correlation_volume: expected NCHW tensors");
  int64_t N = f_t.shape()[0], C = f_t.shape()[1], H = f_t.shape()[2], W = f_t.shape()[3];
  if (f_src.shape() != f_t.shape() || flow.shape()[0] != N || flow.shape()[1] != 2 ||
      flow.shape()[2] != H || flow.shape()[3] != W)
    throw DimError("correlation_volume: spatial sizes must all agree: " +
                   format_shape(f_t.shape()) + " / " + format_shape(f_src.shape()) + " / " +
                   format_shape(flow.shape()));
  int side = 2 * radius + 1;
  int64_t O = static_cast<int64_t>(side) * side;
  Tensor<T> out({N, O, H, W});

  const T* pt = f_t.data();
  const T* ps = f_src.data();
  const T* pf = flow.data();
  T* po = out.data();
  int64_t hw = H * W;
  const T teps = static_cast<T>(eps);

  auto sample = [&](const T* plane, T sy, T sx) -> T {
    sx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
    sy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
    int64_t x0 = std::min(static_cast<int64_t>(sx), W - 1);
    int64_t y0 = std::min(static_cast<int64_t>(sy), H - 1);
    int64_t x1 = std::min(x0 + 1, W - 1);
    int64_t y1 = std::min(y0 + 1, H - 1);
    T fx = sx - static_cast<T>(x0), fy = sy - static_cast<T>(y0);
    return (T(1) - fy) * ((T(1) - fx) * plane[y0 * W + x0] + fx * plane[y0 * W + x1]) +
           fy * ((T(1) - fx) * plane[y1 * W + x0] + fx * plane[y1 * W + x1]);
  };

  parallel_for(N * H, [&](int64_t r0, int64_t r1) {
    std::vector<T> b(static_cast<size_t>(C));
    for (int64_t r = r0; r < r1; ++r) {
      int64_t n = r / H, y = r % H;
      for (int64_t x = 0; x < W; ++x) {
        T u = pf[n * 2 * hw + y * W + x];
        T v = pf[n * 2 * hw + hw + y * W + x];
        T na2 = T(0);
        for (int64_t c = 0; c < C; ++c) {
          T a = pt[(n * C + c) * hw + y * W + x];
          na2 += a * a;
        }
        T na = std::sqrt(na2) + teps;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            T sy = static_cast<T>(y) + v + static_cast<T>(dy);
            T sx = static_cast<T>(x) + u + static_cast<T>(dx);
            T dot = T(0), nb2 = T(0);
            for (int64_t c = 0; c < C; ++c) {
              T bv = sample(ps + (n * C + c) * hw, sy, sx);
              b[static_cast<size_t>(c)] = bv;
              nb2 += bv * bv;
              dot += bv * pt[(n * C + c) * hw + y * W + x];
            }
            T nb = std::sqrt(nb2) + teps;
            int64_t o = static_cast<int64_t>(dy + radius) * side + (dx + radius);
            po[(n * O + o) * hw + y * W + x] = dot / (na * nb);
          }
      }
    }
  }, 16);

  bool rec = rec_for<T>({&f_t, &f_src, &flow});
  push_step(rec, out,
            [tn = f_t.node(), sn = f_src.node(), fn = flow.node(), on = out.node(), N, C, H, W,
             radius, teps]() {
              if (on->g.empty()) return;
              int side = 2 * radius + 1;
              int64_t O = static_cast<int64_t>(side) * side;
              int64_t hw = H * W;
              bool gt_on = tn->tracked, gs_on = sn->tracked, gf_on = fn->tracked;
              if (gt_on) tn->ensure_grad();
              if (gs_on) sn->ensure_grad();
              if (gf_on) fn->ensure_grad();
              const T* pt = tn->v.data();
              const T* ps = sn->v.data();
              const T* pf = fn->v.data();
              const T* go = on->g.data();
              T* gt = gt_on ? tn->g.data() : nullptr;
              T* gs = gs_on ? sn->g.data() : nullptr;
              T* gf = gf_on ? fn->g.data() : nullptr;
              // scatters into f_src stay within one sample: parallel over n
              parallel_for(N, [&](int64_t n0, int64_t n1) {
                std::vector<T> a(static_cast<size_t>(C)), b(static_cast<size_t>(C)),
                    db(static_cast<size_t>(C));
                for (int64_t n = n0; n < n1; ++n)
                  for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x) {
                      T u = pf[n * 2 * hw + y * W + x];
                      T v = pf[n * 2 * hw + hw + y * W + x];
                      T na2 = T(0);
                      for (int64_t c = 0; c < C; ++c) {
                        a[static_cast<size_t>(c)] = pt[(n * C + c) * hw + y * W + x];
                        na2 += a[static_cast<size_t>(c)] * a[static_cast<size_t>(c)];
                      }
                      T norm_a = std::sqrt(na2);
                      T na = norm_a + teps;
                      T du_acc = T(0), dv_acc = T(0);
                      for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                          int64_t o = static_cast<int64_t>(dy + radius) * side + (dx + radius);
                          T g = go[(n * O + o) * hw + y * W + x];
                          if (g == T(0)) continue;
                          T sy = static_cast<T>(y) + v + static_cast<T>(dy);
                          T sx = static_cast<T>(x) + u + static_cast<T>(dx);
                          bool in_x = sx > T(0) && sx < static_cast<T>(W - 1);
                          bool in_y = sy > T(0) && sy < static_cast<T>(H - 1);
                          T csy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
                          T csx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
                          int64_t x0 = std::min(static_cast<int64_t>(csx), W - 1);
                          int64_t y0 = std::min(static_cast<int64_t>(csy), H - 1);
                          int64_t x1 = std::min(x0 + 1, W - 1);
                          int64_t y1 = std::min(y0 + 1, H - 1);
                          T fx = csx - static_cast<T>(x0), fy = csy - static_cast<T>(y0);
                          T dot = T(0), nb2 = T(0);
                          for (int64_t c = 0; c < C; ++c) {
                            const T* plane = ps + (n * C + c) * hw;
                            T bv = (T(1) - fy) * ((T(1) - fx) * plane[y0 * W + x0] +
                                                  fx * plane[y0 * W + x1]) +
                                   fy * ((T(1) - fx) * plane[y1 * W + x0] +
                                         fx * plane[y1 * W + x1]);
                            b[static_cast<size_t>(c)] = bv;
                            nb2 += bv * bv;
                            dot += bv * a[static_cast<size_t>(c)];
                          }
                          T norm_b = std::sqrt(nb2);
                          T nb = norm_b + teps;
                          T inv = T(1) / (na * nb);
                          T cval = dot * inv;
                          if (gt_on) {
                            // d c / d a = b/(na nb) - c * a/(|a| na)
                            for (int64_t c = 0; c < C; ++c) {
                              T term = b[static_cast<size_t>(c)] * inv;
                              if (norm_a > T(0))
                                term -= cval * a[static_cast<size_t>(c)] / (norm_a * na);
                              gt[(n * C + c) * hw + y * W + x] += g * term;
                            }
                          }
                          if (gs_on || gf_on) {
                            for (int64_t c = 0; c < C; ++c) {
                              T term = a[static_cast<size_t>(c)] * inv;
                              if (norm_b > T(0))
                                term -= cval * b[static_cast<size_t>(c)] / (norm_b * nb);
                              db[static_cast<size_t>(c)] = g * term;
                            }
                            if (gs_on) {
                              for (int64_t c = 0; c < C; ++c) {
                                T* gplane = gs + (n * C + c) * hw;
                                T d = db[static_cast<size_t>(c)];
                                gplane[y0 * W + x0] += d * (T(1) - fy) * (T(1) - fx);
                                gplane[y0 * W + x1] += d * (T(1) - fy) * fx;
                                gplane[y1 * W + x0] += d * fy * (T(1) - fx);
                                gplane[y1 * W + x1] += d * fy * fx;
                              }
                            }
                            if (gf_on && (in_x || in_y)) {
                              for (int64_t c = 0; c < C; ++c) {
                                const T* plane = ps + (n * C + c) * hw;
                                T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
                                T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
                                T d = db[static_cast<size_t>(c)];
                                if (in_x)
                                  du_acc += d * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                                if (in_y)
                                  dv_acc += d * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                              }
                            }
                          }
                        }
                      if (gf_on) {
                        gf[n * 2 * hw + y * W + x] += du_acc;
                        gf[n * 2 * hw + hw + y * W + x] += dv_acc;
                      }
                    }
              }, 1);
            });
  return out;
}

template <typename T>
void CoarseFlowNet<T>::init(const std::array<int, 3>& widths, Rng& rng) {
  c1.init(6, widths[0], 3, 2, 1, rng);
  c2.init(widths[0], widths[1], 3, 2, 1, rng);
  c3.init(widths[1], widths[2], 3, 2, 1, rng);
  c4.init(widths[2], widths[2], 3, 1, 1, rng);
  r1.init(widths[2], widths[2], 3, 1, 1, rng);
  r2.init(widths[2], widths[2], 3, 1, 1, rng);
  head.init(widths[2], 4, 3, 1, 1, rng, /*zero_init=*/true);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CoarseFlowNet<T>::forward(const Tensor<T>& i0,
                                                          const Tensor<T>& i1) {
  if (i0.shape() != i1.shape())
    throw DimError("coarse_flow: frames must share a shape, got " + format_shape(i0.shape()) +
                   " and " + format_shape(i1.shape()));
  Tensor<T> z = concat<T>({i0, i1}, 1);
  z = leaky_relu(c1.forward(z), leaky);
  z = leaky_relu(c2.forward(z), leaky);
  z = leaky_relu(c3.forward(z), leaky);
  z = leaky_relu(c4.forward(z), leaky);
  z = leaky_relu(r1.forward(z), leaky);
  z = leaky_relu(r2.forward(z), leaky);
  Tensor<T> f = head.forward(z);
  return {slice(f, 1, 0, 2), slice(f, 1, 2, 2)};
}

template <typename T>
void CoarseFlowNet<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  c1.collect(out, prefix + ".c1");
  c2.collect(out, prefix + ".c2");
  c3.collect(out, prefix + ".c3");
  c4.collect(out, prefix + ".c4");
  r1.collect(out, prefix + ".r1");
  r2.collect(out, prefix + ".r2");
  head.collect(out, prefix + ".head");
}

template <typename T>
void Blrb<T>::init(int feat_c, int width, Rng& rng) {
  mask1.init(2 * feat_c, width, 3, 1, 1, rng);
  mask2.init(width, 1, 3, 1, 1, rng);
  for (auto& s : sides) {
    int corr_ch = (2 * radius + 1) * (2 * radius + 1);
    s.corr1.init(corr_ch, width, 3, 1, 1, rng);
    s.corr2.init(width, width, 3, 1, 1, rng);
    s.flow1.init(2, width, 3, 1, 1, rng);
    s.flow2.init(width, width, 3, 1, 1, rng);
    s.res1.init(2 * width + 2 * feat_c, width, 3, 1, 1, rng);
    s.res2.init(width, width, 3, 1, 1, rng);
    s.res3.init(width, width, 3, 1, 1, rng);
    s.res4.init(width, 2, 3, 1, 1, rng, /*zero_init=*/true);
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Blrb<T>::forward(const Tensor<T>& flow0_prev,
                                                 const Tensor<T>& flow1_prev,
                                                 const Tensor<T>& f0, const Tensor<T>& f1) {
  if (f0.shape() != f1.shape())
    throw DimError("blrb: per-frame features disagree: " + format_shape(f0.shape()) + " vs " +
                   format_shape(f1.shape()));
  Tensor<T> fl0 = rescale_flow<T>(flow0_prev, 2.0);
  Tensor<T> fl1 = rescale_flow<T>(flow1_prev, 2.0);
  if (fl0.shape()[2] != f0.shape()[2] || fl0.shape()[3] != f0.shape()[3])
    throw DimError("blrb: rescaled flow " + format_shape(fl0.shape()) +
                   " does not match feature scale " + format_shape(f0.shape()));
  Tensor<T> wf0 = bilinear_warp(f0, fl0);
  Tensor<T> wf1 = bilinear_warp(f1, fl1);
  Tensor<T> d =
      sigmoid(mask2.forward(leaky_relu(mask1.forward(concat<T>({wf0, wf1}, 1)), leaky)));
  Tensor<T> ft = add(mul(d, wf0), mul(add_scalar(neg(d), T(1)), wf1));

  auto refine = [&](const Side& s, const Tensor<T>& fsrc, const Tensor<T>& fl) {
    Tensor<T> corr = correlation_volume(ft, fsrc, fl, radius, corr_eps);
    Tensor<T> cfeat = leaky_relu(s.corr2.forward(leaky_relu(s.corr1.forward(corr), leaky)), leaky);
    Tensor<T> ffeat =
        leaky_relu(s.flow2.forward(leaky_relu(s.flow1.forward(fl), leaky)), leaky);
    Tensor<T> h = concat<T>({cfeat, ffeat, fsrc, ft}, 1);
    h = leaky_relu(s.res1.forward(h), leaky);
    h = leaky_relu(s.res2.forward(h), leaky);
    h = leaky_relu(s.res3.forward(h), leaky);
    Tensor<T> resid = s.res4.forward(h);
    return add(resid, fl);
  };
  return {refine(sides[0], f0, fl0), refine(sides[1], f1, fl1)};
}

template <typename T>
void Blrb<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  mask1.collect(out, prefix + ".mask1");
  mask2.collect(out, prefix + ".mask2");
  const char* names[2] = {".to0", ".to1"};
  for (int i = 0; i < 2; ++i) {
    Side& s = sides[static_cast<size_t>(i)];
    std::string p = prefix + names[i];
    s.corr1.collect(out, p + ".corr1");
    s.corr2.collect(out, p + ".corr2");
    s.flow1.collect(out, p + ".flow1");
    s.flow2.collect(out, p + ".flow2");
    s.res1.collect(out, p + ".res1");
    s.res2.collect(out, p + ".res2");
    s.res3.collect(out, p + ".res3");
    s.res4.collect(out, p + ".res4");
  }
}

template <typename T>
void FlowEstimator<T>::init(const std::array<int, 4>& enc_widths, Rng& rng) {
  // the coarse net regresses the whole motion range: give it twice the
  // encoder widths (it runs at 1/2..1/8 resolution, so this is cheap)
  coarse.init({2 * enc_widths[0], 2 * enc_widths[1], 2 * enc_widths[2]}, rng);
  stem1.init(3, enc_widths[0], 3, 1, 1, rng);
  stem2.init(enc_widths[0], enc_widths[0], 3, 1, 1, rng);
  blocks[0].init(enc_widths[1], enc_widths[1], rng);  // 1/4
  blocks[1].init(enc_widths[0], enc_widths[0], rng);  // 1/2
  blocks[2].init(enc_widths[0], enc_widths[0], rng);  // 1/1 (stem features)
}

template <typename T>
Tensor<T> FlowEstimator<T>::stem(const Tensor<T>& frame) {
  return leaky_relu(stem2.forward(leaky_relu(stem1.forward(frame), leaky)), leaky);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> FlowEstimator<T>::forward(const Tensor<T>& i0,
                                                          const Tensor<T>& i1,
                                                          const std::vector<Tensor<T>>& enc0,
                                                          const std::vector<Tensor<T>>& enc1,
                                                          FlowPyramid<T>* pyramid) {
  if (enc0.size() < 2 || enc1.size() < 2)
    throw DimError("estimate_flow: need encoder features at 1/2 and 1/4 scale");
  auto [o0, o1] = coarse.forward(i0, i1);
  if (pyramid) pyramid->push_back({o0, o1});
  std::tie(o0, o1) = blocks[0].forward(o0, o1, enc0[1], enc1[1]);
  if (pyramid) pyramid->push_back({o0, o1});
  std::tie(o0, o1) = blocks[1].forward(o0, o1, enc0[0], enc1[0]);
  if (pyramid) pyramid->push_back({o0, o1});
  Tensor<T> s0 = stem(i0);
  Tensor<T> s1 = stem(i1);
  std::tie(o0, o1) = blocks[2].forward(o0, o1, s0, s1);
  if (pyramid) pyramid->push_back({o0, o1});
  return {o0, o1};
}

template <typename T>
void FlowEstimator<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  coarse.collect(out, prefix + ".coarse");
  stem1.collect(out, prefix + ".stem1");
  stem2.collect(out, prefix + ".stem2");
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(out, prefix + ".blrb" + std::to_string(i));
}

#define VFI_INSTANTIATE(T)                                                                 \
  template Tensor<T> correlation_volume<T>(const Tensor<T>&, const Tensor<T>&,            \
                                           const Tensor<T>&, int, double);                \
  template struct CoarseFlowNet<T>;                                                       \
  template struct Blrb<T>;                                                                \
  template struct FlowEstimator<T>;

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
