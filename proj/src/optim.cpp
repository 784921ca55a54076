#include "vfi/optim.hpp"

#include <cmath>

namespace vfi {

template <typename T>
void adamw_step(const std::vector<Parameter<T>*>& params, const AdamWOptions& opt) {
  for (Parameter<T>* p : params) {
    if (!p->t.has_grad())
      throw UsageError("adamw_step: parameter has no gradient (run backward first)");
    int64_t n = p->t.numel();
    if (p->m.empty()) {
      p->m.assign(static_cast<size_t>(n), T(0));
      p->v.assign(static_cast<size_t>(n), T(0));
    }
    ++p->steps;
    const double b1 = opt.beta1, b2 = opt.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(p->steps));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(p->steps));
    T* w = p->t.data();
    T* g = p->t.grad_mut().data();
    T* m = p->m.data();
    T* v = p->v.data();
    const T lr = static_cast<T>(opt.lr);
    const T wd = static_cast<T>(opt.weight_decay);
    const T eps = static_cast<T>(opt.eps);
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    const T ibc1 = static_cast<T>(1.0 / bc1), ibc2 = static_cast<T>(1.0 / bc2);
    for (int64_t i = 0; i < n; ++i) {
      T gi = g[i];
      m[i] = tb1 * m[i] + (T(1) - tb1) * gi;
      v[i] = tb2 * v[i] + (T(1) - tb2) * gi * gi;
      T mhat = m[i] * ibc1;
      T vhat = v[i] * ibc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
    }
    p->t.zero_grad();
  }
}

template <typename T>
std::vector<Parameter<T>*> values(const ParamMap<T>& map) {
  std::vector<Parameter<T>*> out;
  out.reserve(map.size());
  for (const auto& kv : map) out.push_back(kv.second);
  return out;
}

template <typename T>
int64_t param_count(const ParamMap<T>& map) {
  int64_t n = 0;
  for (const auto& kv : map) n += kv.second->t.numel();
  return n;
}

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (Parameter<T>* p : params) p->t.zero_grad();
}

#define VFI_INSTANTIATE(T)                                                      \
  template struct Parameter<T>;                                                 \
  template void adamw_step<T>(const std::vector<Parameter<T>*>&, const AdamWOptions&); \
  template std::vector<Parameter<T>*> values<T>(const ParamMap<T>&);            \
  template int64_t param_count<T>(const ParamMap<T>&);                          \
  template void zero_grads<T>(const std::vector<Parameter<T>*>&);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
