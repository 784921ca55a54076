#include "vfi/loss.hpp"
#include <cmath>

#include "vfi/warp.hpp"

namespace vfi {

template <typename T>
Tensor<T> recon_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw DimError("recon_loss: shape mismatch " + format_shape(pred.shape()) + " vs " +
                   format_shape(gt.shape()));
  return mean(abs(sub(pred, gt)));
}

namespace {

template <typename T>
Tensor<T> to_gray(const Tensor<T>& img) {
  if (img.shape()[1] == 1) return img;
  if (img.shape()[1] != 3)
    throw DimError("census_loss: expected 1 or 3 channels, got " + format_shape(img.shape()));
  Tensor<T> r = slice(img, 1, 0, 1);
  Tensor<T> g = slice(img, 1, 1, 1);
  Tensor<T> b = slice(img, 1, 2, 1);
  return add(add(mul_scalar(r, T(0.299)), mul_scalar(g, T(0.587))), mul_scalar(b, T(0.114)));
}

// soft census responses for the (2k+1)^2 patch offsets, on the valid
// interior [k, H-k) x [k, W-k)
template <typename T>
std::vector<Tensor<T>> census_responses(const Tensor<T>& gray, int k, T bin_eps) {
  int64_t H = gray.shape()[2], W = gray.shape()[3];
  int64_t vh = H - 2 * k, vw = W - 2 * k;
  Tensor<T> center = crop2d(gray, k, k, vh, vw);
  std::vector<Tensor<T>> out;
  out.reserve(static_cast<size_t>((2 * k + 1) * (2 * k + 1)));
  for (int dy = -k; dy <= k; ++dy)
    for (int dx = -k; dx <= k; ++dx) {
      if (dy == 0 && dx == 0) continue;  // zero by definition
      Tensor<T> nb = crop2d(gray, k + dy, k + dx, vh, vw);
      Tensor<T> d = sub(nb, center);
      out.push_back(div(d, sqrt(add_scalar(mul(d, d), bin_eps))));
    }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> census_loss(const Tensor<T>& pred, const Tensor<T>& gt, const CensusConfig& cfg) {
  if (pred.shape() != gt.shape())
    throw DimError("census_loss: shape mismatch " + format_shape(pred.shape()) + " vs " +
                   format_shape(gt.shape()));
  int k = cfg.patch / 2;
  if (pred.shape()[2] < cfg.patch || pred.shape()[3] < cfg.patch)
    throw InputError("census_loss: image " + format_shape(pred.shape()) +
                     " smaller than the " + std::to_string(cfg.patch) + "x" +
                     std::to_string(cfg.patch) + " patch");
  Tensor<T> ga = to_gray(pred);
  Tensor<T> gb = to_gray(gt);
  std::vector<Tensor<T>> ra = census_responses(ga, k, static_cast<T>(cfg.binarize_eps));
  std::vector<Tensor<T>> rb = census_responses(gb, k, static_cast<T>(cfg.binarize_eps));

  Tensor<T> dist;
  for (size_t i = 0; i < ra.size(); ++i) {
    Tensor<T> d = sub(ra[i], rb[i]);
    Tensor<T> d2 = mul(d, d);
    Tensor<T> bit = div(d2, add_scalar(d2, static_cast<T>(cfg.rho_eps)));
    dist = dist.defined() ? add(dist, bit) : bit;
  }
  // Charbonnier with its zero-point floor removed, so identical inputs give
  // an exact 0 while the gradient matches the stabilized form.
  T eps2 = static_cast<T>(cfg.charbonnier_eps * cfg.charbonnier_eps);
  T alpha = static_cast<T>(cfg.charbonnier_alpha);
  T floor = std::pow(eps2, alpha);
  Tensor<T> charb = add_scalar(pow_scalar(add_scalar(mul(dist, dist), eps2), alpha), -floor);
  return mean(charb);
}

template <typename T>
Tensor<T> distill_loss(const std::pair<Tensor<T>, Tensor<T>>& flows,
                       const std::pair<Tensor<T>, Tensor<T>>& teacher) {
  auto term = [](const Tensor<T>& o, const Tensor<T>& t) {
    if (o.shape() != t.shape())
      throw DimError("distill_loss: shape mismatch " + format_shape(o.shape()) + " vs " +
                     format_shape(t.shape()));
    // mean over pixels of |du|+|dv| == 2 * mean over elements
    return mul_scalar(mean(abs(sub(o, stop_gradient(t)))), T(2));
  };
  return add(term(flows.first, teacher.first), term(flows.second, teacher.second));
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& rec, const Tensor<T>& census,
                         const Tensor<T>& distill, double lambda_rec, double lambda_css,
                         double lambda_dis) {
  LossReport<T> r;
  r.rec = rec;
  r.census = census;
  r.distill = distill;
  r.total = add(add(mul_scalar(rec, static_cast<T>(lambda_rec)),
                    mul_scalar(census, static_cast<T>(lambda_css))),
                mul_scalar(distill, static_cast<T>(lambda_dis)));
  return r;
}

#define VFI_INSTANTIATE(T)                                                                 \
  template struct LossReport<T>;                                                           \
  template Tensor<T> recon_loss<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> census_loss<T>(const Tensor<T>&, const Tensor<T>&, const CensusConfig&); \
  template Tensor<T> distill_loss<T>(const std::pair<Tensor<T>, Tensor<T>>&,               \
                                     const std::pair<Tensor<T>, Tensor<T>>&);              \
  template LossReport<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                       double, double, double);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
