#pragma once

#include <string>

#include "vfi/optim.hpp"
#include "vfi/tensor.hpp"

namespace vfi {

// Weight init: truncated normal (std 0.02) for token-mixing weights,
// Kaiming fan-in scaling (LeakyReLU 0.1 gain) for convolutions, zeros for
// biases and positional tables.

template <typename T>
Tensor<T> trunc_normal_init(std::vector<int64_t> shape, Rng& rng, double stddev = 0.02);

template <typename T>
Tensor<T> kaiming_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng,
                       double leaky_slope = 0.1);

template <typename T>
struct Conv2dLayer {
  Parameter<T> w, b;
  int stride = 1, pad = 0;

  void init(int64_t in_c, int64_t out_c, int k, int stride_, int pad_, Rng& rng,
            bool zero_init = false);
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w.t, b.t, stride, pad); }
  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

template <typename T>
struct ConvT2dLayer {
  Parameter<T> w, b;
  int stride = 2;

  void init(int64_t in_c, int64_t out_c, int k, int stride_, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const {
    return conv_transpose2d(x, w.t, b.t, stride);
  }
  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

template <typename T>
struct LinearLayer {
  Parameter<T> w, b;  // y = x W + b; W [in, out]
  bool has_bias = true;

  void init(int64_t in_c, int64_t out_c, Rng& rng, bool bias = true);
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, w.t);
    return has_bias ? add(y, b.t) : y;
  }
  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    if (has_bias) out.emplace_back(prefix + ".b", &b);
  }
};

template <typename T>
struct LayerNormLayer {
  Parameter<T> gamma, beta;

  void init(int64_t c);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma.t, beta.t); }
  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

// channel layer norm on an NCHW map (tokens are pixels, features are channels)
template <typename T>
Tensor<T> layer_norm_nchw(const Tensor<T>& x, const LayerNormLayer<T>& ln);

}  // namespace vfi
