#include "vfi/attention.hpp"

#include <cmath>

#include "vfi/warp.hpp"

namespace vfi {

std::vector<int64_t> fine_bias_indices(int m) {
  int64_t t = static_cast<int64_t>(m) * m;
  int64_t span = 2 * m - 1;
  std::vector<int64_t> idx(static_cast<size_t>(t * t));
  for (int64_t a = 0; a < t; ++a) {
    int64_t ry = a / m, rx = a % m;
    for (int64_t b = 0; b < t; ++b) {
      int64_t cy = b / m, cx = b % m;
      int64_t dy = ry - cy + m - 1;
      int64_t dx = rx - cx + m - 1;
      idx[static_cast<size_t>(a * t + b)] = dy * span + dx;
    }
  }
  return idx;
}

std::vector<int64_t> cross_bias_indices(int m) {
  // coarse token (cy,cx) sits at fine offset (2*c - m/2) within the window
  int64_t t = static_cast<int64_t>(m) * m;
  int64_t span = 4 * m - 1;
  int64_t shift = 2 * m - 1;
  std::vector<int64_t> idx(static_cast<size_t>(t * t));
  for (int64_t a = 0; a < t; ++a) {
    int64_t ry = a / m, rx = a % m;
    for (int64_t b = 0; b < t; ++b) {
      int64_t cy = 2 * (b / m) - m / 2;
      int64_t cx = 2 * (b % m) - m / 2;
      int64_t dy = ry - cy + shift;
      int64_t dx = rx - cx + shift;
      idx[static_cast<size_t>(a * t + b)] = dy * span + dx;
    }
  }
  return idx;
}

template <typename T>
void AttentionParams<T>::init(int channels_, int m_, int heads_, Rng& rng, bool with_cross) {
  if (channels_ % heads_ != 0)
    throw ConfigError("attention: width " + std::to_string(channels_) +
                      " not divisible by head count " + std::to_string(heads_));
  channels = channels_;
  m = m_;
  heads = heads_;
  wq.init(channels, channels, rng, false);
  wkx.init(channels, channels, rng, false);
  wvx.init(channels, channels, rng, false);
  wo.init(channels, channels, rng, false);
  int64_t fine_bins = static_cast<int64_t>(2 * m - 1) * (2 * m - 1);
  p_fine.reset(Tensor<T>::zeros({heads, fine_bins}));
  fine_idx = fine_bias_indices(m);
  if (with_cross) {
    wky.init(channels, channels, rng, false);
    wvy.init(channels, channels, rng, false);
    int64_t cross_bins = static_cast<int64_t>(4 * m - 1) * (4 * m - 1);
    p_cross.reset(Tensor<T>::zeros({heads, cross_bins}));
    cross_idx = cross_bias_indices(m);
  }
}

template <typename T>
void AttentionParams<T>::collect(ParamMap<T>& out, const std::string& prefix, bool with_cross) {
  wq.collect(out, prefix + ".wq");
  wkx.collect(out, prefix + ".wkx");
  wvx.collect(out, prefix + ".wvx");
  wo.collect(out, prefix + ".wo");
  out.emplace_back(prefix + ".p_fine", &p_fine);
  if (with_cross) {
    wky.collect(out, prefix + ".wky");
    wvy.collect(out, prefix + ".wvy");
    out.emplace_back(prefix + ".p_cross", &p_cross);
  }
}

namespace {

// q [B,T,C], k/v [B,S,C] already projected; returns [B,T,C]
template <typename T>
Tensor<T> multihead(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const Tensor<T>& bias_table, const std::vector<int64_t>& idx, int heads) {
  int64_t B = q.shape()[0], Tt = q.shape()[1], C = q.shape()[2];
  int64_t S = k.shape()[1];
  int64_t d = C / heads;
  auto split = [&](const Tensor<T>& t, int64_t L) {
    return reshape(permute(reshape(t, {B, L, heads, d}), {0, 2, 1, 3}), {B * heads, L, d});
  };
  Tensor<T> qh = split(q, Tt);
  Tensor<T> kh = split(k, S);
  Tensor<T> vh = split(v, S);
  Tensor<T> logits =
      mul_scalar(matmul(qh, permute(kh, {0, 2, 1})), static_cast<T>(1.0 / std::sqrt(double(d))));
  Tensor<T> bias = reshape(take(bias_table, idx), {heads, Tt, S});
  Tensor<T> att = softmax(add(reshape(logits, {B, heads, Tt, S}), bias), -1);
  Tensor<T> out = matmul(reshape(att, {B * heads, Tt, S}), vh);
  return reshape(permute(reshape(out, {B, heads, Tt, d}), {0, 2, 1, 3}), {B, Tt, C});
}

template <typename T>
Tensor<T> project_tokens(const Tensor<T>& windows, const LinearLayer<T>& lin) {
  int64_t B = windows.shape()[0], Tt = windows.shape()[1], C = windows.shape()[2];
  return reshape(lin.forward(reshape(windows, {B * Tt, C})), {B, Tt, -1});
}

}  // namespace

template <typename T>
WindowGrid<T> wa_forward(const WindowGrid<T>& x_windows, AttentionParams<T>& params) {
  if (x_windows.c != params.channels)
    throw ConfigError("wa_forward: token dim " + std::to_string(x_windows.c) +
                      " does not match params width " + std::to_string(params.channels));
  if (x_windows.m != params.m)
    throw ConfigError("wa_forward: window size mismatch");
  Tensor<T> q = project_tokens(x_windows.windows, params.wq);
  Tensor<T> k = project_tokens(x_windows.windows, params.wkx);
  Tensor<T> v = project_tokens(x_windows.windows, params.wvx);
  Tensor<T> att = multihead(q, k, v, params.p_fine.t, params.fine_idx, params.heads);
  WindowGrid<T> out = x_windows;
  out.windows = project_tokens(att, params.wo);
  return out;
}

template <typename T>
void CswaBlock<T>::init(int channels, int m, int heads, Rng& rng) {
  attn.init(channels, m, heads, rng, true);
  fuse1.init(2 * channels, channels, 3, 1, 1, rng);
  fuse2.init(channels, channels, 3, 1, 1, rng);
}

template <typename T>
void CswaBlock<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  attn.collect(out, prefix + ".attn", true);
  fuse1.collect(out, prefix + ".fuse1");
  fuse2.collect(out, prefix + ".fuse2");
}

template <typename T>
Tensor<T> cswa_forward_map(const WindowGrid<T>& x_windows, const WindowGrid<T>& y_windows,
                           CswaBlock<T>& blk) {
  AttentionParams<T>& p = blk.attn;
  if (x_windows.num_windows() != y_windows.num_windows() ||
      x_windows.n != y_windows.n)
    throw DimError("cswa: window count mismatch: fine " +
                   std::to_string(x_windows.num_windows()) + ", coarse " +
                   std::to_string(y_windows.num_windows()));
  if (x_windows.windows.shape()[1] != y_windows.windows.shape()[1])
    throw DimError("cswa: token count mismatch between fine and coarse windows");
  Tensor<T> q = project_tokens(x_windows.windows, p.wq);
  Tensor<T> kx = project_tokens(x_windows.windows, p.wkx);
  Tensor<T> vx = project_tokens(x_windows.windows, p.wvx);
  Tensor<T> ky = project_tokens(y_windows.windows, p.wky);
  Tensor<T> vy = project_tokens(y_windows.windows, p.wvy);

  Tensor<T> xx = multihead(q, kx, vx, p.p_fine.t, p.fine_idx, p.heads);
  Tensor<T> xy = multihead(q, ky, vy, p.p_cross.t, p.cross_idx, p.heads);

  WindowGrid<T> gx = x_windows;
  gx.windows = project_tokens(xx, p.wo);
  WindowGrid<T> gy = x_windows;  // X_Y tokens are aligned with the fine grid
  gy.windows = project_tokens(xy, p.wo);
  Tensor<T> map_xx = merge_windows(gx);
  Tensor<T> map_xy = merge_windows(gy);
  Tensor<T> fused =
      blk.fuse2.forward(leaky_relu(blk.fuse1.forward(concat<T>({map_xx, map_xy}, 1)), blk.leaky));
  return add(map_xx, fused);
}

template <typename T>
WindowGrid<T> cswa_forward(const WindowGrid<T>& x_windows, const WindowGrid<T>& y_windows,
                           CswaBlock<T>& blk) {
  return partition_windows(cswa_forward_map(x_windows, y_windows, blk), x_windows.m);
}

template <typename T>
void Tfl<T>::init(int channels, int m_, int heads, int mlp_ratio, Rng& rng, bool use_cross_) {
  m = m_;
  use_cross = use_cross_;
  ln1.init(channels);
  ln2.init(channels);
  if (use_cross) {
    attn.init(channels, m, heads, rng);
  } else {
    attn.attn.init(channels, m, heads, rng, false);
  }
  mlp1.init(channels, channels * mlp_ratio, rng);
  mlp2.init(channels * mlp_ratio, channels, rng);
}

template <typename T>
Tensor<T> Tfl<T>::forward(const Tensor<T>& z) {
  int64_t N = z.shape()[0], C = z.shape()[1], H = z.shape()[2], W = z.shape()[3];
  Tensor<T> y = layer_norm_nchw(z, ln1);
  int64_t ph = (m - H % m) % m, pw = (m - W % m) % m;
  if (ph || pw) y = reflection_pad(y, 0, static_cast<int>(pw), 0, static_cast<int>(ph));

  Tensor<T> att_map;
  WindowGrid<T> xg = partition_windows(y, m);
  if (use_cross) {
    WindowGrid<T> yg = partition_overlapping(downsample2x(y), m);
    att_map = cswa_forward_map(xg, yg, attn);
  } else {
    att_map = merge_windows(wa_forward(xg, attn.attn));
  }
  if (ph || pw) att_map = crop2d(att_map, 0, 0, H, W);
  Tensor<T> zhat = add(att_map, z);

  Tensor<T> t = reshape(permute(layer_norm_nchw(zhat, ln2), {0, 2, 3, 1}), {N * H * W, C});
  Tensor<T> h = mlp2.forward(gelu(mlp1.forward(t)));
  Tensor<T> mlp_map = permute(reshape(h, {N, H, W, C}), {0, 3, 1, 2});
  return add(mlp_map, zhat);
}

template <typename T>
void Tfl<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  if (use_cross) {
    attn.collect(out, prefix + ".cswa");
  } else {
    attn.attn.collect(out, prefix + ".wa", false);
  }
  mlp1.collect(out, prefix + ".mlp1");
  mlp2.collect(out, prefix + ".mlp2");
}

template <typename T>
void Tfb<T>::init(int in_channels, int channels, int n_layers, int m, int heads, int mlp_ratio,
                  Rng& rng, bool use_cross) {
  entry.init(in_channels, channels, 3, 1, 1, rng);
  exit.init(channels, channels, 3, 1, 1, rng);
  layers.resize(static_cast<size_t>(n_layers));
  for (auto& l : layers) l.init(channels, m, heads, mlp_ratio, rng, use_cross);
}

template <typename T>
Tensor<T> Tfb<T>::forward(const Tensor<T>& x_cat) {
  Tensor<T> z = leaky_relu(entry.forward(x_cat), leaky);
  for (auto& l : layers) z = l.forward(z);
  return leaky_relu(exit.forward(z), leaky);
}

template <typename T>
Tensor<T> Tfb<T>::forward(const Tensor<T>& f_prev, const Tensor<T>& warped0,
                          const Tensor<T>& warped1) {
  const auto& a = f_prev.shape();
  const auto& b = warped0.shape();
  const auto& c = warped1.shape();
  if (a[2] != b[2] || a[3] != b[3] || a[2] != c[2] || a[3] != c[3])
    throw DimError("tfb: inputs must share spatial size, got " + format_shape(a) + ", " +
                   format_shape(b) + ", " + format_shape(c));
  return forward(concat<T>({f_prev, warped0, warped1}, 1));
}

template <typename T>
void Tfb<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  entry.collect(out, prefix + ".entry");
  exit.collect(out, prefix + ".exit");
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(out, prefix + ".tfl" + std::to_string(i));
}

int64_t attention_macs(int64_t n, int64_t c, int64_t h, int64_t w, int m, int heads,
                       bool cross) {
  (void)heads;  // head splitting does not change the MAC count
  int64_t hw = h * w;
  int64_t proj = n * hw * c * c;           // one C->C projection over all tokens
  int64_t attn = n * hw * m * m * c;       // one QK^T or AV pass
  if (cross) {
    // q,kx,ky,vx,vy + two output projections; two logit and two AV passes;
    // two 3x3 fusion convs (2C->C, C->C)
    return 7 * proj + 4 * attn + 27 * n * c * c * hw;
  }
  return 4 * proj + 2 * attn;
}

#define VFI_INSTANTIATE(T)                                                                    \
  template struct AttentionParams<T>;                                                        \
  template WindowGrid<T> wa_forward<T>(const WindowGrid<T>&, AttentionParams<T>&);            \
  template struct CswaBlock<T>;                                                              \
  template Tensor<T> cswa_forward_map<T>(const WindowGrid<T>&, const WindowGrid<T>&,         \
                                         CswaBlock<T>&);                                     \
  template WindowGrid<T> cswa_forward<T>(const WindowGrid<T>&, const WindowGrid<T>&,         \
                                         CswaBlock<T>&);                                     \
  template struct Tfl<T>;                                                                    \
  template struct Tfb<T>;

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
