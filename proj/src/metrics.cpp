#include "vfi/metrics.hpp"

#include <cmath>

#include "vfi/common.hpp"

namespace vfi {

namespace {

double mse(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw DimError("metrics: frame sizes differ");
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

double psnr(const std::vector<float>& a, const std::vector<float>& b) {
  double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

double interp_error(const std::vector<float>& a, const std::vector<float>& b) {
  return 255.0 * std::sqrt(mse(a, b));
}

double ssim(const std::vector<float>& a, const std::vector<float>& b, int64_t channels,
            int64_t h, int64_t w) {
  if (a.size() != b.size() ||
      static_cast<int64_t>(a.size()) != channels * h * w)
    throw DimError("ssim: frame layout mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
  constexpr double kC2 = 0.03 * 0.03;
  if (h < kWin || w < kWin) throw DimError("ssim: image smaller than the 11x11 window");

  double win[kWin][kWin];
  double norm = 0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      double dy = i - 5, dx = j - 5;
      win[i][j] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      norm += win[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) win[i][j] /= norm;

  double total = 0;
  for (int64_t c = 0; c < channels; ++c) {
    const float* pa = a.data() + c * h * w;
    const float* pb = b.data() + c * h * w;
    double acc = 0;
    int64_t count = 0;
    for (int64_t y = 0; y + kWin <= h; ++y)
      for (int64_t x = 0; x + kWin <= w; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            ma += win[i][j] * pa[(y + i) * w + x + j];
            mb += win[i][j] * pb[(y + i) * w + x + j];
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            double da = pa[(y + i) * w + x + j] - ma;
            double db = pb[(y + i) * w + x + j] - mb;
            va += win[i][j] * da * da;
            vb += win[i][j] * db * db;
            cov += win[i][j] * da * db;
          }
        double s = ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        acc += s;
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(channels);
}

double flow_epe(const std::vector<float>& a, const std::vector<float>& b, int64_t h, int64_t w) {
  if (a.size() != b.size() || static_cast<int64_t>(a.size()) != 2 * h * w)
    throw DimError("flow_epe: field layout mismatch");
  double s = 0;
  for (int64_t i = 0; i < h * w; ++i) {
    double du = static_cast<double>(a[i]) - b[i];
    double dv = static_cast<double>(a[h * w + i]) - b[h * w + i];
    s += std::sqrt(du * du + dv * dv);
  }
  return s / static_cast<double>(h * w);
}

}  // namespace vfi
