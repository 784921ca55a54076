#include "vfi/layers.hpp"

#include <cmath>

namespace vfi {

template <typename T>
Tensor<T> trunc_normal_init(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    p[i] = static_cast<T>(rng.trunc_normal(stddev, 2.0));
  return t;
}

template <typename T>
Tensor<T> kaiming_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng,
                       double leaky_slope) {
  double gain2 = 2.0 / (1.0 + leaky_slope * leaky_slope);
  double stddev = std::sqrt(gain2 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
void Conv2dLayer<T>::init(int64_t in_c, int64_t out_c, int k, int stride_, int pad_, Rng& rng,
                          bool zero_init) {
  stride = stride_;
  pad = pad_;
  if (zero_init) {
    w.reset(Tensor<T>::zeros({out_c, in_c, k, k}));
  } else {
    w.reset(kaiming_init<T>({out_c, in_c, k, k}, in_c * k * k, rng));
  }
  b.reset(Tensor<T>::zeros({out_c}));
}

template <typename T>
void ConvT2dLayer<T>::init(int64_t in_c, int64_t out_c, int k, int stride_, Rng& rng) {
  stride = stride_;
  w.reset(kaiming_init<T>({in_c, out_c, k, k}, in_c * k * k, rng));
  b.reset(Tensor<T>::zeros({out_c}));
}

template <typename T>
void LinearLayer<T>::init(int64_t in_c, int64_t out_c, Rng& rng, bool bias) {
  has_bias = bias;
  w.reset(trunc_normal_init<T>({in_c, out_c}, rng));
  if (bias) b.reset(Tensor<T>::zeros({out_c}));
}

template <typename T>
void LayerNormLayer<T>::init(int64_t c) {
  gamma.reset(Tensor<T>::full({c}, T(1)));
  beta.reset(Tensor<T>::zeros({c}));
}

template <typename T>
Tensor<T> layer_norm_nchw(const Tensor<T>& x, const LayerNormLayer<T>& ln) {
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor<T> rows = reshape(permute(x, {0, 2, 3, 1}), {N * H * W, C});
  Tensor<T> y = layer_norm(rows, ln.gamma.t, ln.beta.t);
  return permute(reshape(y, {N, H, W, C}), {0, 3, 1, 2});
}

#define VFI_INSTANTIATE(T)                                                              \
  template Tensor<T> trunc_normal_init<T>(std::vector<int64_t>, Rng&, double);          \
  template Tensor<T> kaiming_init<T>(std::vector<int64_t>, int64_t, Rng&, double);      \
  template struct Conv2dLayer<T>;                                                       \
  template struct ConvT2dLayer<T>;                                                      \
  template struct LinearLayer<T>;                                                       \
  template struct LayerNormLayer<T>;                                                    \
  template Tensor<T> layer_norm_nchw<T>(const Tensor<T>&, const LayerNormLayer<T>&);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
