#include "vfi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>

namespace vfi {

namespace {

int64_t shape_numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

template <typename T>
void check_finite_shape(const std::vector<int64_t>& s) {
  for (int64_t d : s)
    if (d <= 0) throw DimError("non-positive extent in shape " + format_shape(s));
}

}  // namespace

// ---------------- Tensor basics ----------------

template <typename T>
Tensor<T>::Tensor(std::vector<int64_t> shape, T fill) {
  check_finite_shape<T>(shape);
  d_ = std::make_shared<TensorData<T>>();
  d_->shape = std::move(shape);
  d_->v.assign(shape_numel(d_->shape), fill);
}

template <typename T>
Tensor<T>::Tensor(std::vector<int64_t> shape, std::vector<T> values) {
  check_finite_shape<T>(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw DimError("value count " + std::to_string(values.size()) + " does not match shape " +
                   format_shape(shape));
  d_ = std::make_shared<TensorData<T>>();
  d_->shape = std::move(shape);
  d_->v = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::randn(std::vector<int64_t> shape, Rng& rng, T stddev) {
  Tensor out(std::move(shape));
  T* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] = static_cast<T>(rng.normal()) * stddev;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi) {
  Tensor out(std::move(shape));
  T* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    p[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return out;
}

template <typename T>
int64_t Tensor<T>::size(int axis) const {
  int nd = ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimError("axis out of range for shape " + format_shape(shape()));
  return d_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (!d_ || numel() != 1) throw UsageError("item() requires a 1-element tensor");
  return d_->v[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool b) {
  d_->requires_grad = b;
  d_->tracked = b;
  return *this;
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient (run backward first)");
  return d_->g;
}

template <typename T>
std::vector<T>& Tensor<T>::grad_mut() {
  d_->ensure_grad();
  return d_->g;
}

// ---------------- Tape ----------------

template <typename T>
Tape<T>& Tape<T>::get() {
  thread_local Tape<T> tape;
  return tape;
}

NoGradGuard::NoGradGuard() {
  ++Tape<float>::get().nograd_depth;
  ++Tape<double>::get().nograd_depth;
}

NoGradGuard::~NoGradGuard() {
  --Tape<float>::get().nograd_depth;
  --Tape<double>::get().nograd_depth;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar tensor");
  auto& tape = Tape<T>::get();
  if (tape.steps.empty() && !loss.requires_grad())
    throw UsageError("backward: tape is empty");
  loss.node()->ensure_grad();
  loss.node()->g[0] += T(1);
  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) (*it)();
  tape.clear();
}

// ---------------- MAC counter ----------------

namespace {
thread_local int64_t g_macs = 0;
thread_local bool g_macs_on = false;
}  // namespace

void MacCounter::reset() { g_macs = 0; }
void MacCounter::enable(bool on) { g_macs_on = on; }
int64_t MacCounter::count() { return g_macs; }
void MacCounter::add(int64_t macs) {
  if (g_macs_on) g_macs += macs;
}

// ---------------- op plumbing ----------------

namespace {

template <typename T>
bool want_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::get().recording()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->tracked()) return true;
  return false;
}

template <typename T>
void record(bool rec, Tensor<T>& out, std::function<void()> step) {
  if (!rec) return;
  out.node()->tracked = true;
  Tape<T>::get().push(std::move(step));
}

template <typename T>
using Node = std::shared_ptr<TensorData<T>>;

template <typename T>
bool grad_ready(const Node<T>& out) {
  return !out->g.empty();
}

// ---------------- broadcasting ----------------

struct BCast {
  std::vector<int64_t> oshape;
  std::vector<int64_t> astr, bstr;  // element strides, 0 on broadcast axes
  bool same = false;
};

BCast broadcast_shapes(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                       const char* opname) {
  BCast r;
  size_t nd = std::max(a.size(), b.size());
  r.oshape.resize(nd);
  std::vector<int64_t> ash(nd, 1), bsh(nd, 1);
  std::copy(a.begin(), a.end(), ash.begin() + (nd - a.size()));
  std::copy(b.begin(), b.end(), bsh.begin() + (nd - b.size()));
  for (size_t i = 0; i < nd; ++i) {
    if (ash[i] == bsh[i]) {
      r.oshape[i] = ash[i];
    } else if (ash[i] == 1 || bsh[i] == 1) {
      r.oshape[i] = std::max(ash[i], bsh[i]);
    } else {
      throw DimError(std::string(opname) + ": incompatible shapes " + format_shape(a) + " and " +
                     format_shape(b));
    }
  }
  r.astr.assign(nd, 0);
  r.bstr.assign(nd, 0);
  int64_t sa = 1, sb = 1;
  for (size_t i = nd; i-- > 0;) {
    r.astr[i] = (ash[i] == 1) ? 0 : sa;
    r.bstr[i] = (bsh[i] == 1) ? 0 : sb;
    sa *= ash[i];
    sb *= bsh[i];
  }
  r.same = (ash == bsh);
  return r;
}

// Applies fn(out_index, a_index, b_index) over the broadcast domain.
template <typename F>
void bcast_iterate(const BCast& bc, F&& fn) {
  size_t nd = bc.oshape.size();
  std::vector<int64_t> idx(nd, 0);
  int64_t total = 1;
  for (int64_t d : bc.oshape) total *= d;
  int64_t ai = 0, bi = 0;
  for (int64_t o = 0; o < total; ++o) {
    fn(o, ai, bi);
    for (size_t i = nd; i-- > 0;) {
      ++idx[i];
      ai += bc.astr[i];
      bi += bc.bstr[i];
      if (idx[i] < bc.oshape[i]) break;
      idx[i] = 0;
      ai -= bc.astr[i] * bc.oshape[i];
      bi -= bc.bstr[i] * bc.oshape[i];
    }
  }
}

template <typename T, typename FwdSame, typename Fwd, typename Bwd>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdSame fwd_same,
                    Fwd fwd, Bwd bwd) {
  BCast bc = broadcast_shapes(a.shape(), b.shape(), name);
  Tensor<T> out(bc.oshape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (bc.same) {
    parallel_for(out.numel(), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) po[i] = fwd_same(pa[i], pb[i]);
    });
  } else {
    bcast_iterate(bc, [&](int64_t o, int64_t ai, int64_t bi) { po[o] = fwd(pa[ai], pb[bi]); });
  }
  bool rec = want_grad<T>({&a, &b});
  record(rec, out, [an = a.node(), bn = b.node(), on = out.node(), bc, bwd]() {
    if (!grad_ready(on)) return;
    bool ga = an->tracked, gb = bn->tracked;
    if (ga) an->ensure_grad();
    if (gb) bn->ensure_grad();
    const T* pa = an->v.data();
    const T* pb = bn->v.data();
    const T* go = on->g.data();
    T* gaP = ga ? an->g.data() : nullptr;
    T* gbP = gb ? bn->g.data() : nullptr;
    bcast_iterate(bc, [&](int64_t o, int64_t ai, int64_t bi) {
      bwd(go[o], pa[ai], pb[bi], ga ? gaP + ai : nullptr, gb ? gbP + bi : nullptr);
    });
  });
  return out;
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  parallel_for(a.numel(), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = fwd(pa[i]);
  });
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node(), bwd]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    const T* pa = an->v.data();
    const T* po = on->v.data();
    const T* go = on->g.data();
    T* ga = an->g.data();
    int64_t n = static_cast<int64_t>(an->v.size());
    parallel_for(n, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) ga[i] += bwd(go[i], pa[i], po[i]);
    });
  });
  return out;
}

}  // namespace

// ---------------- elementwise ----------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T x, T y) { return x + y; },
      [](T g, T, T, T* ga, T* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T x, T y) { return x - y; },
      [](T g, T, T, T* ga, T* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return x * y; },
      [](T g, T x, T y, T* ga, T* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T x, T y) { return x / y; },
      [](T g, T x, T y, T* ga, T* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x * s; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return -x; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return x < T(0) ? -x : x; },
      [](T g, T x, T) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return std::sqrt(x); }, [](T g, T, T y) { return g * T(0.5) / y; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return unary_op(
      a, [p](T x) { return std::pow(x, p); },
      [p](T g, T x, T y) { return g * p * y / x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      a,
      [](T x) {
        return static_cast<T>(0.5 * static_cast<double>(x) *
                              (1.0 + std::erf(static_cast<double>(x) * kInvSqrt2)));
      },
      [](T g, T x, T) {
        double xd = static_cast<double>(x);
        double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(static_cast<double>(g) * (cdf + xd * pdf));
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary_op(
      a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T g, T x, T) { return x > T(0) ? g : slope * g; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out({1});
  const T* p = a.data();
  T acc = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) acc += p[i];
  out.data()[0] = acc;
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node()]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    T g = on->g[0];
    T* ga = an->g.data();
    int64_t n = static_cast<int64_t>(an->v.size());
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  Tensor<T> out({1});
  const T* p = a.data();
  T acc = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) acc += p[i];
  T inv = T(1) / static_cast<T>(a.numel());
  out.data()[0] = acc * inv;
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node(), inv]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    T g = on->g[0] * inv;
    T* ga = an->g.data();
    int64_t n = static_cast<int64_t>(an->v.size());
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimError("reshape: more than one -1 extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0)
      throw DimError("reshape: cannot infer extent for " + format_shape(a.shape()));
    shape[infer] = a.numel() / known;
  }
  if (shape_numel(shape) != a.numel())
    throw DimError("reshape: element count mismatch " + format_shape(a.shape()) + " -> " +
                   format_shape(shape));
  Tensor<T> out(shape, a.values());
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node()]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    const T* go = on->g.data();
    T* ga = an->g.data();
    int64_t n = static_cast<int64_t>(an->v.size());
    parallel_for(n, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) ga[i] += go[i];
    });
  });
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
  int nd = a.ndim();
  if (static_cast<int>(perm.size()) != nd) throw DimError("permute: axes count mismatch");
  std::vector<bool> seen(nd, false);
  std::vector<int64_t> oshape(nd);
  for (int i = 0; i < nd; ++i) {
    int p = perm[i];
    if (p < 0 || p >= nd || seen[p]) throw DimError("permute: invalid axes");
    seen[p] = true;
    oshape[i] = a.shape()[p];
  }
  std::vector<int64_t> astr(nd, 1);
  for (int i = nd - 2; i >= 0; --i) astr[i] = astr[i + 1] * a.shape()[i + 1];
  // stride of output axis i in the input layout
  std::vector<int64_t> map(nd);
  for (int i = 0; i < nd; ++i) map[i] = astr[perm[i]];
  std::vector<int64_t> ostr(nd, 1);
  for (int i = nd - 2; i >= 0; --i) ostr[i] = ostr[i + 1] * oshape[i + 1];

  Tensor<T> out(oshape);
  const T* pa = a.data();
  T* po = out.data();
  parallel_for(out.numel(), [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      int64_t rem = o, ai = 0;
      for (int i = 0; i < nd; ++i) {
        int64_t c = rem / ostr[i];
        rem -= c * ostr[i];
        ai += c * map[i];
      }
      po[o] = pa[ai];
    }
  });
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node(), ostr, map, nd]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    const T* go = on->g.data();
    T* ga = an->g.data();
    int64_t n = static_cast<int64_t>(on->v.size());
    parallel_for(n, [&](int64_t o0, int64_t o1) {
      for (int64_t o = o0; o < o1; ++o) {
        int64_t rem = o, ai = 0;
        for (int i = 0; i < nd; ++i) {
          int64_t c = rem / ostr[i];
          rem -= c * ostr[i];
          ai += c * map[i];
        }
        ga[ai] += go[o];  // bijection: no write races across chunks
      }
    });
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw UsageError("concat: empty input list");
  int nd = xs[0].ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimError("concat: axis out of range");
  int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw DimError("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && x.shape()[i] != xs[0].shape()[i])
        throw DimError("concat: shape mismatch " + format_shape(x.shape()) + " vs " +
                       format_shape(xs[0].shape()));
    axis_total += x.shape()[axis];
  }
  std::vector<int64_t> oshape = xs[0].shape();
  oshape[axis] = axis_total;
  Tensor<T> out(oshape);

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= oshape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= oshape[i];

  T* po = out.data();
  int64_t offset = 0;
  for (const auto& x : xs) {
    int64_t ax = x.shape()[axis];
    const T* px = x.data();
    parallel_for(outer, [&](int64_t o0, int64_t o1) {
      for (int64_t o = o0; o < o1; ++o)
        std::memcpy(po + (o * axis_total + offset) * inner, px + o * ax * inner,
                    sizeof(T) * ax * inner);
    }, 1);
    offset += ax;
  }

  bool rec = false;
  for (const auto& x : xs)
    if (want_grad<T>({&x})) rec = true;
  std::vector<Node<T>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  record(rec, out, [nodes, on = out.node(), outer, inner, axis_total, axis]() {
    if (!grad_ready(on)) return;
    const T* go = on->g.data();
    int64_t offset = 0;
    for (auto& node : nodes) {
      int64_t ax = node->shape[static_cast<size_t>(axis)];
      if (node->tracked) {
        node->ensure_grad();
        T* gx = node->g.data();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = go + (o * axis_total + offset) * inner;
          T* dst = gx + o * ax * inner;
          for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
        }
      }
      offset += ax;
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
  int nd = a.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimError("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > a.shape()[axis])
    throw DimError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                   ") exceeds extent " + std::to_string(a.shape()[axis]));
  std::vector<int64_t> oshape = a.shape();
  oshape[axis] = len;
  Tensor<T> out(oshape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int i = axis + 1; i < nd; ++i) inner *= a.shape()[i];
  int64_t ax = a.shape()[axis];
  const T* pa = a.data();
  T* po = out.data();
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o)
      std::memcpy(po + o * len * inner, pa + (o * ax + start) * inner, sizeof(T) * len * inner);
  }, 1);
  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node(), outer, inner, ax, len, start]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    const T* go = on->g.data();
    T* ga = an->g.data();
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = go + o * len * inner;
      T* dst = ga + (o * ax + start) * inner;
      for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return Tensor<T>(a.shape(), a.values());
}

template <typename T>
Tensor<T> take(const Tensor<T>& table, const std::vector<int64_t>& indices) {
  if (table.ndim() != 2) throw DimError("take: table must be 2-d");
  int64_t rows = table.shape()[0], nb = table.shape()[1];
  int64_t n = static_cast<int64_t>(indices.size());
  for (int64_t idx : indices)
    if (idx < 0 || idx >= nb) throw DimError("take: index out of range");
  Tensor<T> out({rows, n});
  const T* pt = table.data();
  T* po = out.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < n; ++i) po[r * n + i] = pt[r * nb + indices[i]];
  bool rec = want_grad<T>({&table});
  record(rec, out, [tn = table.node(), on = out.node(), indices, rows, nb, n]() {
    if (!grad_ready(on)) return;
    tn->ensure_grad();
    const T* go = on->g.data();
    T* gt = tn->g.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < n; ++i) gt[r * nb + indices[i]] += go[r * n + i];
  });
  return out;
}

// ---------------- GEMM ----------------

namespace {

// C[m,n] = (acc ? C : 0) + A[m,k]*B[k,n]; k ascends per element regardless
// of tiling or threading, so results are bitwise reproducible.
template <typename T>
void gemm_nn_span(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, int64_t j0,
                  int64_t j1, bool acc) {
  int64_t w = j1 - j0;
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n + j0;
    if (!acc) std::fill(c, c + w, T(0));
    int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
      T a0 = a[p], a1 = a[p + 1], a2 = a[p + 2], a3 = a[p + 3];
      const T* b0 = B + p * n + j0;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (int64_t j = 0; j < w; ++j) {
        T t = c[j];
        t += a0 * b0[j];
        t += a1 * b1[j];
        t += a2 * b2[j];
        t += a3 * b3[j];
        c[j] = t;
      }
    }
    for (; p < k; ++p) {
      T av = a[p];
      const T* b = B + p * n + j0;
      for (int64_t j = 0; j < w; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool acc) {
  MacCounter::add(m * k * n);
  // column tiles keep the C stripe cache-resident so B streams once
  constexpr int64_t kTile = 512;
  int64_t ntiles = (n + kTile - 1) / kTile;
  if (ntiles > 1) {
    parallel_for(
        ntiles,
        [&](int64_t t0, int64_t t1) {
          for (int64_t t = t0; t < t1; ++t) {
            int64_t j0 = t * kTile, j1 = std::min(n, j0 + kTile);
            gemm_nn_span(A, B, C, m, k, n, j0, j1, acc);
          }
        },
        1);
  } else {
    parallel_for(
        m,
        [&](int64_t i0, int64_t i1) {
          gemm_nn_span(A + i0 * k, B, C + i0 * n, i1 - i0, k, n, 0, n, acc);
        },
        std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * n)));
  }
}

// uninitialized scratch: these buffers are fully overwritten before use
template <typename T>
struct Scratch {
  std::unique_ptr<T[]> p;
  explicit Scratch(int64_t n) : p(new T[static_cast<size_t>(n)]) {}
  T* data() { return p.get(); }
};

template <typename T>
void transpose2d(const T* src, T* dst, int64_t rows, int64_t cols) {
  constexpr int64_t B = 32;
  parallel_for(
      (rows + B - 1) / B,
      [&](int64_t t0, int64_t t1) {
        for (int64_t tb = t0; tb < t1; ++tb) {
          int64_t r0 = tb * B, r1 = std::min(rows, r0 + B);
          for (int64_t c0 = 0; c0 < cols; c0 += B) {
            int64_t c1 = std::min(cols, c0 + B);
            for (int64_t r = r0; r < r1; ++r)
              for (int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
          }
        }
      },
      4);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw DimError("matmul: operands must be at least 2-d, got " + format_shape(a.shape()) +
                   " and " + format_shape(b.shape()));
  int64_t m = a.shape()[a.ndim() - 2], k = a.shape()[a.ndim() - 1];
  int64_t kb = b.shape()[b.ndim() - 2], n = b.shape()[b.ndim() - 1];
  if (k != kb)
    throw DimError("matmul: inner extents disagree: " + format_shape(a.shape()) + " x " +
                   format_shape(b.shape()));

  bool shared_b = (b.ndim() == 2 && a.ndim() >= 2);
  int64_t batch = 1;
  std::vector<int64_t> oshape;
  if (shared_b) {
    oshape = a.shape();
    oshape.back() = n;
    batch = a.numel() / (m * k);
  } else {
    if (a.ndim() != b.ndim())
      throw DimError("matmul: batch ranks disagree: " + format_shape(a.shape()) + " x " +
                     format_shape(b.shape()));
    for (int i = 0; i < a.ndim() - 2; ++i) {
      if (a.shape()[i] != b.shape()[i])
        throw DimError("matmul: batch extents disagree: " + format_shape(a.shape()) + " x " +
                       format_shape(b.shape()));
      batch *= a.shape()[i];
    }
    oshape = a.shape();
    oshape.back() = n;
  }
  Tensor<T> out(oshape);

  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (shared_b) {
    // collapse batch into rows: [batch*m, k] x [k, n]
    gemm_nn(pa, pb, po, batch * m, k, n, false);
  } else if (batch == 1) {
    gemm_nn(pa, pb, po, m, k, n, false);
  } else {
    // many small matrices: one parallel chunking over (batch, row)
    MacCounter::add(batch * m * k * n);
    parallel_for(
        batch * m,
        [&](int64_t r0, int64_t r1) {
          for (int64_t r = r0; r < r1; ++r) {
            int64_t bi = r / m, i = r % m;
            const T* A = pa + bi * m * k + i * k;
            const T* B = pb + bi * k * n;
            T* C = po + bi * m * n + i * n;
            std::fill(C, C + n, T(0));
            for (int64_t p = 0; p < k; ++p) {
              T av = A[p];
              const T* brow = B + p * n;
              for (int64_t j = 0; j < n; ++j) C[j] += av * brow[j];
            }
          }
        },
        std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * n)));
  }

  bool rec = want_grad<T>({&a, &b});
  record(rec, out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n, batch, shared_b]() {
    if (!grad_ready(on)) return;
    const T* pa = an->v.data();
    const T* pb = bn->v.data();
    const T* go = on->g.data();
    if (shared_b) {
      int64_t rows = batch * m;
      if (an->tracked) {
        an->ensure_grad();
        std::vector<T> bt(static_cast<size_t>(k * n));
        transpose2d(pb, bt.data(), k, n);
        gemm_nn(go, bt.data(), an->g.data(), rows, n, k, true);
      }
      if (bn->tracked) {
        bn->ensure_grad();
        std::vector<T> at(static_cast<size_t>(rows * k));
        transpose2d(pa, at.data(), rows, k);
        gemm_nn(at.data(), go, bn->g.data(), k, rows, n, true);
      }
    } else {
      if (an->tracked) {
        an->ensure_grad();
        std::vector<T> bt(static_cast<size_t>(k * n));
        for (int64_t bi = 0; bi < batch; ++bi) {
          transpose2d(pb + bi * k * n, bt.data(), k, n);
          gemm_nn(go + bi * m * n, bt.data(), an->g.data() + bi * m * k, m, n, k, true);
        }
      }
      if (bn->tracked) {
        bn->ensure_grad();
        std::vector<T> at(static_cast<size_t>(m * k));
        for (int64_t bi = 0; bi < batch; ++bi) {
          transpose2d(pa + bi * m * k, at.data(), m, k);
          gemm_nn(at.data(), go + bi * m * n, bn->g.data() + bi * k * n, k, m, n, true);
        }
      }
    }
  });
  return out;
}

// ---------------- softmax / layer_norm ----------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  int nd = a.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimError("softmax: axis out of range");
  int64_t L = a.shape()[axis];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int i = axis + 1; i < nd; ++i) inner *= a.shape()[i];

  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  parallel_for(outer * inner, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      int64_t o = r / inner, in = r % inner;
      const T* x = pa + o * L * inner + in;
      T* y = po + o * L * inner + in;
      T mx = x[0];
      for (int64_t i = 1; i < L; ++i) mx = std::max(mx, x[i * inner]);
      T denom = T(0);
      for (int64_t i = 0; i < L; ++i) {
        T e = std::exp(x[i * inner] - mx);
        y[i * inner] = e;
        denom += e;
      }
      T invd = T(1) / denom;
      for (int64_t i = 0; i < L; ++i) y[i * inner] *= invd;
    }
  }, 512);

  bool rec = want_grad<T>({&a});
  record(rec, out, [an = a.node(), on = out.node(), L, outer, inner]() {
    if (!grad_ready(on)) return;
    an->ensure_grad();
    const T* y = on->v.data();
    const T* gy = on->g.data();
    T* gx = an->g.data();
    parallel_for(outer * inner, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        int64_t o = r / inner, in = r % inner;
        const T* yr = y + o * L * inner + in;
        const T* gr = gy + o * L * inner + in;
        T* gxr = gx + o * L * inner + in;
        T dot = T(0);
        for (int64_t i = 0; i < L; ++i) dot += gr[i * inner] * yr[i * inner];
        for (int64_t i = 0; i < L; ++i)
          gxr[i * inner] += yr[i * inner] * (gr[i * inner] - dot);
      }
    }, 512);
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  int64_t C = x.shape().back();
  if (gamma.numel() != C || beta.numel() != C)
    throw DimError("layer_norm: affine parameters must have " + std::to_string(C) + " elements");
  int64_t rows = x.numel() / C;
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<size_t>(rows)), mean_row(static_cast<size_t>(rows));
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pbta = beta.data();
  T* po = out.data();
  T* pinv = inv_std.data();
  T* pmean = mean_row.data();
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const T* xr = px + r * C;
      T* yr = po + r * C;
      T mu = T(0);
      for (int64_t c = 0; c < C; ++c) mu += xr[c];
      mu /= static_cast<T>(C);
      T var = T(0);
      for (int64_t c = 0; c < C; ++c) {
        T d = xr[c] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      T inv = T(1) / std::sqrt(var + eps);
      pmean[r] = mu;
      pinv[r] = inv;
      for (int64_t c = 0; c < C; ++c) yr[c] = (xr[c] - mu) * inv * pg[c] + pbta[c];
    }
  }, 256);

  bool rec = want_grad<T>({&x, &gamma, &beta});
  record(rec, out,
         [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
          inv_std = std::move(inv_std), mean_row = std::move(mean_row), rows, C]() {
           if (!grad_ready(on)) return;
           const T* px = xn->v.data();
           const T* pg = gn->v.data();
           const T* gy = on->g.data();
           bool gx_on = xn->tracked, gg_on = gn->tracked, gb_on = bn->tracked;
           if (gx_on) xn->ensure_grad();
           if (gg_on) gn->ensure_grad();
           if (gb_on) bn->ensure_grad();
           T* gx = gx_on ? xn->g.data() : nullptr;
           T* gg = gg_on ? gn->g.data() : nullptr;
           T* gb = gb_on ? bn->g.data() : nullptr;
           // gamma/beta grads accumulate across rows: keep that loop serial
           for (int64_t r = 0; r < rows; ++r) {
             const T* xr = px + r * C;
             const T* gyr = gy + r * C;
             T mu = mean_row[static_cast<size_t>(r)];
             T inv = inv_std[static_cast<size_t>(r)];
             T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
             for (int64_t c = 0; c < C; ++c) {
               T xhat = (xr[c] - mu) * inv;
               T dxhat = gyr[c] * pg[c];
               sum_dxhat += dxhat;
               sum_dxhat_xhat += dxhat * xhat;
               if (gg_on) gg[c] += gyr[c] * xhat;
               if (gb_on) gb[c] += gyr[c];
             }
             if (gx_on) {
               T invC = T(1) / static_cast<T>(C);
               T* gxr = gx + r * C;
               for (int64_t c = 0; c < C; ++c) {
                 T xhat = (xr[c] - mu) * inv;
                 T dxhat = gyr[c] * pg[c];
                 gxr[c] += inv * (dxhat - invC * sum_dxhat - xhat * invC * sum_dxhat_xhat);
               }
             }
           }
         });
  return out;
}

// ---------------- convolutions ----------------

namespace {

// col [C*KH*KW, GH*GW]: col((c,ky,kx),(gy,gx)) = src(c, gy*s-p+ky, gx*s-p+kx)
template <typename T>
void im2col(const T* src, int64_t C, int64_t H, int64_t W, int kh, int kw, int s, int p,
            int64_t GH, int64_t GW, T* col) {
  parallel_for(C * kh * kw, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      int64_t c = r / (kh * kw);
      int ky = static_cast<int>((r / kw) % kh);
      int kx = static_cast<int>(r % kw);
      const T* plane = src + c * H * W;
      T* dst = col + r * GH * GW;
      for (int64_t gy = 0; gy < GH; ++gy) {
        int64_t sy = gy * s - p + ky;
        if (sy < 0 || sy >= H) {
          std::fill(dst + gy * GW, dst + (gy + 1) * GW, T(0));
          continue;
        }
        const T* srow = plane + sy * W;
        T* drow = dst + gy * GW;
        for (int64_t gx = 0; gx < GW; ++gx) {
          int64_t sx = gx * s - p + kx;
          drow[gx] = (sx >= 0 && sx < W) ? srow[sx] : T(0);
        }
      }
    }
  }, 1);
}

// dst (c,y,x) (+)= sum over (ky,kx,gy,gx) with y = gy*s-p+ky, x = gx*s-p+kx
// of col((c,ky,kx),(gy,gx)). Gather form: deterministic and race free.
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int kh, int kw, int s, int p,
            int64_t GH, int64_t GW, T* dst, bool acc) {
  parallel_for(C, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      T* plane = dst + c * H * W;
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
          T v = acc ? plane[y * W + x] : T(0);
          for (int ky = 0; ky < kh; ++ky) {
            int64_t ty = y + p - ky;
            if (ty < 0 || ty % s != 0) continue;
            int64_t gy = ty / s;
            if (gy >= GH) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int64_t tx = x + p - kx;
              if (tx < 0 || tx % s != 0) continue;
              int64_t gx = tx / s;
              if (gx >= GW) continue;
              v += col[((c * kh + ky) * kw + kx) * GH * GW + gy * GW + gx];
            }
          }
          plane[y * W + x] = v;
        }
      }
    }
  }, 1);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw DimError("conv2d: expected 4-d input and weight, got " + format_shape(x.shape()) +
                   " and " + format_shape(w.shape()));
  if (stride < 1) throw DimError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimError("conv2d: padding must be >= 0");
  int64_t N = x.shape()[0], IC = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t OC = w.shape()[0], KIC = w.shape()[1];
  int kh = static_cast<int>(w.shape()[2]), kw = static_cast<int>(w.shape()[3]);
  if (KIC != IC)
    throw DimError("conv2d: channel mismatch: input " + format_shape(x.shape()) + ", weight " +
                   format_shape(w.shape()));
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw DimError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                   " larger than padded input " + std::to_string(H + 2 * padding) + "x" +
                   std::to_string(W + 2 * padding));
  if (b.defined() && b.numel() != OC) throw DimError("conv2d: bias size must equal out channels");
  int64_t OH = (H + 2 * padding - kh) / stride + 1;
  int64_t OW = (W + 2 * padding - kw) / stride + 1;

  Tensor<T> out({N, OC, OH, OW});
  int64_t ckk = IC * kh * kw, ohw = OH * OW;
  Scratch<T> col(ckk * ohw);
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  for (int64_t n = 0; n < N; ++n) {
    im2col(px + n * IC * H * W, IC, H, W, kh, kw, stride, padding, OH, OW, col.data());
    gemm_nn(pw, col.data(), po + n * OC * ohw, OC, ckk, ohw, false);
  }
  if (b.defined()) {
    const T* pbias = b.data();
    parallel_for(N * OC, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        T bv = pbias[r % OC];
        T* row = po + r * ohw;
        for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
      }
    }, 4);
  }

  bool rec = b.defined() ? want_grad<T>({&x, &w, &b}) : want_grad<T>({&x, &w});
  record(rec, out,
         [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, on = out.node(), N,
          IC, H, W, OC, kh, kw, stride, padding, OH, OW]() {
           if (!grad_ready(on)) return;
           int64_t ckk = IC * kh * kw, ohw = OH * OW;
           const T* px = xn->v.data();
           const T* pw = wn->v.data();
           const T* go = on->g.data();
           if (bn && bn->tracked) {
             bn->ensure_grad();
             T* gb = bn->g.data();
             for (int64_t n = 0; n < N; ++n)
               for (int64_t oc = 0; oc < OC; ++oc) {
                 const T* row = go + (n * OC + oc) * ohw;
                 T acc = T(0);
                 for (int64_t i = 0; i < ohw; ++i) acc += row[i];
                 gb[oc] += acc;
               }
           }
           if (wn->tracked) {
             wn->ensure_grad();
             // dW^T = col . dOut^T: transposing dOut is far cheaper than
             // transposing the im2col matrix
             Scratch<T> col(ckk * ohw);
             Scratch<T> dout_t(ohw * OC);
             std::vector<T> dwt(static_cast<size_t>(ckk * OC), T(0));
             for (int64_t n = 0; n < N; ++n) {
               im2col(px + n * IC * H * W, IC, H, W, kh, kw, stride, padding, OH, OW, col.data());
               transpose2d(go + n * OC * ohw, dout_t.data(), OC, ohw);
               gemm_nn(col.data(), dout_t.data(), dwt.data(), ckk, ohw, OC, true);
             }
             T* gw = wn->g.data();
             for (int64_t r = 0; r < ckk; ++r)
               for (int64_t c = 0; c < OC; ++c) gw[c * ckk + r] += dwt[r * OC + c];
           }
           if (xn->tracked) {
             xn->ensure_grad();
             Scratch<T> wt(ckk * OC);
             transpose2d(pw, wt.data(), OC, ckk);
             Scratch<T> dcol(ckk * ohw);
             for (int64_t n = 0; n < N; ++n) {
               gemm_nn(wt.data(), go + n * OC * ohw, dcol.data(), ckk, OC, ohw, false);
               col2im(dcol.data(), IC, H, W, kh, kw, stride, padding, OH, OW,
                      xn->g.data() + n * IC * H * W, true);
             }
           }
         });
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int padding, int out_h, int out_w) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw DimError("conv_transpose2d: expected 4-d input and weight, got " +
                   format_shape(x.shape()) + " and " + format_shape(w.shape()));
  if (stride < 1) throw DimError("conv_transpose2d: stride must be >= 1");
  int64_t N = x.shape()[0], IC = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t WIC = w.shape()[0], OC = w.shape()[1];
  int kh = static_cast<int>(w.shape()[2]), kw = static_cast<int>(w.shape()[3]);
  if (WIC != IC)
    throw DimError("conv_transpose2d: channel mismatch: input " + format_shape(x.shape()) +
                   ", weight " + format_shape(w.shape()));
  int64_t OH = (out_h > 0) ? out_h : (H - 1) * stride + kh - 2 * padding;
  int64_t OW = (out_w > 0) ? out_w : (W - 1) * stride + kw - 2 * padding;
  if (OH < 1 || OW < 1) throw DimError("conv_transpose2d: empty output");
  if (b.defined() && b.numel() != OC)
    throw DimError("conv_transpose2d: bias size must equal out channels");

  int64_t ockk = OC * kh * kw, hw = H * W;
  Tensor<T> out({N, OC, OH, OW});
  // w [IC, OC*kh*kw] -> wt [OC*kh*kw, IC]
  Scratch<T> wt(ockk * IC);
  transpose2d(w.data(), wt.data(), IC, ockk);
  Scratch<T> cols(ockk * hw);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t n = 0; n < N; ++n) {
    gemm_nn(wt.data(), px + n * IC * hw, cols.data(), ockk, IC, hw, false);
    col2im(cols.data(), OC, OH, OW, kh, kw, stride, padding, H, W, po + n * OC * OH * OW, false);
  }
  if (b.defined()) {
    const T* pbias = b.data();
    int64_t ohw = OH * OW;
    parallel_for(N * OC, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        T bv = pbias[r % OC];
        T* row = po + r * ohw;
        for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
      }
    }, 4);
  }

  bool rec = b.defined() ? want_grad<T>({&x, &w, &b}) : want_grad<T>({&x, &w});
  record(rec, out,
         [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, on = out.node(), N,
          IC, H, W, OC, kh, kw, stride, padding, OH, OW]() {
           if (!grad_ready(on)) return;
           int64_t ockk = OC * kh * kw, hw = H * W, ohw = OH * OW;
           const T* px = xn->v.data();
           const T* pw = wn->v.data();
           const T* go = on->g.data();
           if (bn && bn->tracked) {
             bn->ensure_grad();
             T* gb = bn->g.data();
             for (int64_t n = 0; n < N; ++n)
               for (int64_t oc = 0; oc < OC; ++oc) {
                 const T* row = go + (n * OC + oc) * ohw;
                 T acc = T(0);
                 for (int64_t i = 0; i < ohw; ++i) acc += row[i];
                 gb[oc] += acc;
               }
           }
           Scratch<T> dcols(ockk * hw);
           Scratch<T> xt(wn->tracked ? hw * IC : 1);
           if (wn->tracked) wn->ensure_grad();
           std::vector<T> dwt(wn->tracked ? static_cast<size_t>(ockk * IC) : 0, T(0));
           for (int64_t n = 0; n < N; ++n) {
             im2col(go + n * OC * ohw, OC, OH, OW, kh, kw, stride, padding, H, W, dcols.data());
             if (xn->tracked) {
               xn->ensure_grad();
               gemm_nn(pw, dcols.data(), xn->g.data() + n * IC * hw, IC, ockk, hw, true);
             }
             if (wn->tracked) {
               transpose2d(px + n * IC * hw, xt.data(), IC, hw);
               gemm_nn(dcols.data(), xt.data(), dwt.data(), ockk, hw, IC, true);
             }
           }
           if (wn->tracked) {
             // dwt [OC*kh*kw, IC] -> accumulate into w grad [IC, OC*kh*kw]
             T* gw = wn->g.data();
             for (int64_t r = 0; r < ockk; ++r)
               for (int64_t c = 0; c < IC; ++c) gw[c * ockk + r] += dwt[r * IC + c];
           }
         });
  return out;
}

// ---------------- spatial ----------------

template <typename T>
Tensor<T> downsample2x(const Tensor<T>& x) {
  if (x.ndim() != 4) throw DimError("downsample2x: expected NCHW input");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw DimError("downsample2x: spatial extents must be even, got " + format_shape(x.shape()));
  int64_t OH = H / 2, OW = W / 2;
  Tensor<T> out({N, C, OH, OW});
  const T* px = x.data();
  T* po = out.data();
  parallel_for(N * C, [&](int64_t p0, int64_t p1) {
    for (int64_t pl = p0; pl < p1; ++pl) {
      const T* sp = px + pl * H * W;
      T* dp = po + pl * OH * OW;
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t x2 = 0; x2 < OW; ++x2) {
          const T* q = sp + (2 * y) * W + 2 * x2;
          dp[y * OW + x2] = (q[0] + q[1] + q[W] + q[W + 1]) * T(0.25);
        }
    }
  }, 1);
  bool rec = want_grad<T>({&x});
  record(rec, out, [xn = x.node(), on = out.node(), N, C, H, W, OH, OW]() {
    if (!grad_ready(on)) return;
    xn->ensure_grad();
    const T* go = on->g.data();
    T* gx = xn->g.data();
    parallel_for(N * C, [&](int64_t p0, int64_t p1) {
      for (int64_t pl = p0; pl < p1; ++pl) {
        const T* gp = go + pl * OH * OW;
        T* gxp = gx + pl * H * W;
        for (int64_t y = 0; y < OH; ++y)
          for (int64_t x2 = 0; x2 < OW; ++x2) {
            T g = gp[y * OW + x2] * T(0.25);
            T* q = gxp + (2 * y) * W + 2 * x2;
            q[0] += g;
            q[1] += g;
            q[W] += g;
            q[W + 1] += g;
          }
      }
    }, 1);
  });
  return out;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int64_t oh, int64_t ow) {
  if (x.ndim() != 4) throw DimError("resize_bilinear: expected NCHW input");
  if (oh < 1 || ow < 1) throw DimError("resize_bilinear: empty output");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor<T> out({N, C, oh, ow});

  // pixel-center mapping; precompute per-axis sample positions
  std::vector<int64_t> y0s(oh), x0s(ow);
  std::vector<T> fys(oh), fxs(ow);
  double sy = static_cast<double>(H) / static_cast<double>(oh);
  double sx = static_cast<double>(W) / static_cast<double>(ow);
  for (int64_t y = 0; y < oh; ++y) {
    double p = (y + 0.5) * sy - 0.5;
    p = std::min(std::max(p, 0.0), static_cast<double>(H - 1));
    int64_t y0 = std::min(static_cast<int64_t>(p), H - 1);
    y0s[y] = y0;
    fys[y] = static_cast<T>(p - y0);
  }
  for (int64_t x2 = 0; x2 < ow; ++x2) {
    double p = (x2 + 0.5) * sx - 0.5;
    p = std::min(std::max(p, 0.0), static_cast<double>(W - 1));
    int64_t x0 = std::min(static_cast<int64_t>(p), W - 1);
    x0s[x2] = x0;
    fxs[x2] = static_cast<T>(p - x0);
  }

  const T* px = x.data();
  T* po = out.data();
  parallel_for(N * C, [&](int64_t p0, int64_t p1) {
    for (int64_t pl = p0; pl < p1; ++pl) {
      const T* sp = px + pl * H * W;
      T* dp = po + pl * oh * ow;
      for (int64_t y = 0; y < oh; ++y) {
        int64_t y0 = y0s[y], y1 = std::min(y0 + 1, H - 1);
        T fy = fys[y];
        for (int64_t x2 = 0; x2 < ow; ++x2) {
          int64_t x0 = x0s[x2], x1 = std::min(x0 + 1, W - 1);
          T fx = fxs[x2];
          T v00 = sp[y0 * W + x0], v01 = sp[y0 * W + x1];
          T v10 = sp[y1 * W + x0], v11 = sp[y1 * W + x1];
          dp[y * ow + x2] = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                            fy * ((T(1) - fx) * v10 + fx * v11);
        }
      }
    }
  }, 1);

  bool rec = want_grad<T>({&x});
  record(rec, out,
         [xn = x.node(), on = out.node(), y0s, x0s, fys, fxs, N, C, H, W, oh, ow]() {
           if (!grad_ready(on)) return;
           xn->ensure_grad();
           const T* go = on->g.data();
           T* gx = xn->g.data();
           parallel_for(N * C, [&](int64_t p0, int64_t p1) {
             for (int64_t pl = p0; pl < p1; ++pl) {
               const T* gp = go + pl * oh * ow;
               T* gxp = gx + pl * H * W;
               for (int64_t y = 0; y < oh; ++y) {
                 int64_t y0 = y0s[y], y1 = std::min(y0 + 1, H - 1);
                 T fy = fys[y];
                 for (int64_t x2 = 0; x2 < ow; ++x2) {
                   int64_t x0 = x0s[x2], x1 = std::min(x0 + 1, W - 1);
                   T fx = fxs[x2];
                   T g = gp[y * ow + x2];
                   gxp[y0 * W + x0] += g * (T(1) - fy) * (T(1) - fx);
                   gxp[y0 * W + x1] += g * (T(1) - fy) * fx;
                   gxp[y1 * W + x0] += g * fy * (T(1) - fx);
                   gxp[y1 * W + x1] += g * fy * fx;
                 }
               }
             }
           }, 1);
         });
  return out;
}

// ---------------- explicit instantiation ----------------

#define VFI_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                      \
  template class Tape<T>;                                                                        \
  template void backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                   \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                   \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                  \
  template Tensor<T> pow_scalar<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<int64_t>);                         \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                      \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                              \
  template Tensor<T> slice<T>(const Tensor<T>&, int, int64_t, int64_t);                          \
  template Tensor<T> stop_gradient<T>(const Tensor<T>&);                                         \
  template Tensor<T> take<T>(const Tensor<T>&, const std::vector<int64_t>&);                     \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);  \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                         int, int, int, int);                                    \
  template Tensor<T> downsample2x<T>(const Tensor<T>&);                                          \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, int64_t, int64_t);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
