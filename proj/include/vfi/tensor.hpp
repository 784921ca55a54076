#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "vfi/common.hpp"

namespace vfi {

// Dense row-major tensor participating in a thread-local reverse-mode tape.
// Values are T (float for training, double for the gradient-check mode);
// every op is instantiated for both.
//
// Ops record a backward closure onto the tape when grad recording is on and
// any input is tracked. backward(loss) replays the tape in reverse and then
// clears it (the tape is rebuilt on the next forward pass).

template <typename T>
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<T> v;  // values
  std::vector<T> g;  // grad; empty until touched by backward
  bool requires_grad = false;  // leaf flag
  bool tracked = false;        // reachable from a requires_grad leaf

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, T fill = T(0));
  Tensor(std::vector<int64_t> shape, std::vector<T> values);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1));
  static Tensor uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int64_t>& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int64_t size(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }

  T* data() { return d_->v.data(); }
  const T* data() const { return d_->v.data(); }
  std::vector<T>& values() { return d_->v; }
  const std::vector<T>& values() const { return d_->v; }

  T item() const;

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool b = true);
  bool tracked() const { return d_ && d_->tracked; }

  bool has_grad() const { return d_ && !d_->g.empty(); }
  const std::vector<T>& grad() const;
  std::vector<T>& grad_mut();
  void zero_grad() {
    if (d_) d_->g.clear();
  }

  std::shared_ptr<TensorData<T>> node() const { return d_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape());
    const T* s = data();
    U* o = out.data();
    for (int64_t i = 0; i < numel(); ++i) o[i] = static_cast<U>(s[i]);
    return out;
  }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
class Tape {
 public:
  static Tape& get();

  bool recording() const { return nograd_depth == 0; }
  void push(std::function<void()> step) { steps.push_back(std::move(step)); }
  void clear() { steps.clear(); }
  size_t size() const { return steps.size(); }

  std::vector<std::function<void()>> steps;
  int nograd_depth = 0;
};

// Disables grad recording (both precisions) for the current thread.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
};

template <typename T>
void backward(const Tensor<T>& loss);

// MAC counter, used by the bench command. Counts matmul and conv
// multiply-accumulates while enabled (thread-local).
struct MacCounter {
  static void reset();
  static void enable(bool on);
  static int64_t count();
  static void add(int64_t macs);
};

// ---- elementwise / shape ops ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
// x^p for strictly positive x
template <typename T> Tensor<T> pow_scalar(const Tensor<T>& a, T p);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> sum(const Tensor<T>& a);   // -> scalar [1]
template <typename T> Tensor<T> mean(const Tensor<T>& a);  // -> scalar [1]
template <typename T> Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len);
template <typename T> Tensor<T> stop_gradient(const Tensor<T>& a);

// table [R, NB], indices in [0, NB) -> out [R, indices.size()]
template <typename T>
Tensor<T> take(const Tensor<T>& table, const std::vector<int64_t>& indices);

// ---- dense linear algebra ----
// a [.., m, k] x b [.., k, n]; batch dims must match, or b may be 2-d
// (shared weight applied to every row block of a).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);
// normalizes over the last axis
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// ---- convolutions (NCHW; cross-correlation semantics) ----
// w [OC, IC, KH, KW]; b [OC] or undefined
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding);
// w [IC, OC, KH, KW]; out spatial (H-1)*stride + K - 2*padding, or the
// explicit override (needed when acting as the adjoint of a strided conv
// whose flooring dropped rows).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           int stride, int padding = 0, int out_h = -1, int out_w = -1);

// ---- spatial ----
template <typename T> Tensor<T> downsample2x(const Tensor<T>& x);  // 2x2 box mean
template <typename T> Tensor<T> resize_bilinear(const Tensor<T>& x, int64_t oh, int64_t ow);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace vfi
