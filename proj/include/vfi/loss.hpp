#pragma once

#include <utility>

#include "vfi/tensor.hpp"

namespace vfi {

// Census-loss constants (soft binarization, per-bit saturation, generalized
// Charbonnier aggregation). Kept in one place so tests and the training
// config agree.
struct CensusConfig {
  int patch = 7;
  double binarize_eps = 1e-4;      // d / sqrt(eps + d^2)
  double rho_eps = 0.1;            // rho(d) = d^2 / (rho_eps + d^2)
  double charbonnier_alpha = 0.45; // (x^2 + eps^2)^alpha
  double charbonnier_eps = 1e-3;
};

template <typename T>
struct LossReport {
  Tensor<T> rec, census, distill, total;
};

// mean absolute error over all pixels/channels
template <typename T>
Tensor<T> recon_loss(const Tensor<T>& pred, const Tensor<T>& gt);

// soft Hamming distance between census-transformed patches: grayscale ->
// 7x7 signed differences to the patch center, soft-binarized, per-bit
// saturating distance, Charbonnier aggregation, averaged over pixels with a
// full patch (non-border).
template <typename T>
Tensor<T> census_loss(const Tensor<T>& pred, const Tensor<T>& gt, const CensusConfig& cfg = {});

// mean over pixels of |du|+|dv| per flow pair, summed over the two pairs;
// the teacher is a constant (no gradient).
template <typename T>
Tensor<T> distill_loss(const std::pair<Tensor<T>, Tensor<T>>& flows,
                       const std::pair<Tensor<T>, Tensor<T>>& teacher);

template <typename T>
LossReport<T> total_loss(const Tensor<T>& rec, const Tensor<T>& census,
                         const Tensor<T>& distill, double lambda_rec, double lambda_css,
                         double lambda_dis);

}  // namespace vfi
