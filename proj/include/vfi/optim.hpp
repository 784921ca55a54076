#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vfi/tensor.hpp"

namespace vfi {

// A trainable tensor plus its AdamW state. Moment buffers are allocated on
// the first optimizer step and always match the parameter shape.
template <typename T>
struct Parameter {
  Tensor<T> t;
  std::vector<T> m, v;  // first/second moment accumulators
  int64_t steps = 0;

  Parameter() = default;
  explicit Parameter(Tensor<T> tensor) : t(std::move(tensor)) { t.set_requires_grad(true); }

  void reset(Tensor<T> tensor) {
    t = std::move(tensor);
    t.set_requires_grad(true);
    m.clear();
    v.clear();
    steps = 0;
  }
};

// name -> parameter, in registration order (the checkpoint order)
template <typename T>
using ParamMap = std::vector<std::pair<std::string, Parameter<T>*>>;

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam step over every parameter; consumes (zeroes)
// the gradients. Missing gradient is a usage error.
template <typename T>
void adamw_step(const std::vector<Parameter<T>*>& params, const AdamWOptions& opt);

template <typename T>
std::vector<Parameter<T>*> values(const ParamMap<T>& map);

template <typename T>
int64_t param_count(const ParamMap<T>& map);

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params);

}  // namespace vfi
