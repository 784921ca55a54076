#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vfi/common.hpp"
#include "vfi/tensor.hpp"

// Central-finite-difference gradient oracle, independent of the backward
// implementations it checks. fn() must rebuild the forward pass from the
// given leaf tensors each call and return a scalar.
//
// Returns max over inputs of ||g_fd - g_bw||_2 / max(||g_fd||, ||g_bw||, tiny).
namespace vfitest {

template <typename T>
struct GradCheckOptions {
  double h = 1e-4;
  // if >0, check only this many randomly chosen elements per input
  int64_t sample = 0;
  uint64_t sample_seed = 7;
};

template <typename T>
double gradcheck(const std::function<vfi::Tensor<T>()>& fn,
                 const std::vector<vfi::Tensor<T>*>& inputs,
                 GradCheckOptions<T> opt = {}) {
  for (auto* in : inputs) {
    in->set_requires_grad(true);
    in->zero_grad();  // drop grads accumulated by earlier backward passes
  }
  vfi::Tape<T>::get().clear();
  vfi::Tensor<T> loss = fn();
  vfi::backward(loss);

  std::vector<std::vector<T>> analytic;
  for (auto* in : inputs) {
    analytic.push_back(in->has_grad() ? in->grad()
                                      : std::vector<T>(static_cast<size_t>(in->numel()), T(0)));
    in->zero_grad();
  }

  double worst = 0.0;
  vfi::Rng pick(opt.sample_seed);
  for (size_t k = 0; k < inputs.size(); ++k) {
    vfi::Tensor<T>& x = *inputs[k];
    int64_t n = x.numel();
    std::vector<int64_t> idxs;
    if (opt.sample > 0 && opt.sample < n) {
      for (int64_t i = 0; i < opt.sample; ++i) idxs.push_back(pick.randint(0, n));
    } else {
      idxs.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idxs[static_cast<size_t>(i)] = i;
    }
    double num2 = 0.0, ana2 = 0.0, diff2 = 0.0;
    {
      vfi::NoGradGuard ng;
      T* p = x.data();
      const T h = static_cast<T>(opt.h);
      for (int64_t i : idxs) {
        T saved = p[i];
        p[i] = saved + h;
        double lp = static_cast<double>(fn().item());
        p[i] = saved - h;
        double lm = static_cast<double>(fn().item());
        p[i] = saved;
        double fd = (lp - lm) / (2.0 * static_cast<double>(h));
        double an = static_cast<double>(analytic[k][static_cast<size_t>(i)]);
        num2 += fd * fd;
        ana2 += an * an;
        diff2 += (fd - an) * (fd - an);
      }
    }
    double denom = std::max(std::sqrt(num2), std::sqrt(ana2));
    double err = std::sqrt(diff2) / std::max(denom, 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vfitest
