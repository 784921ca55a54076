#pragma once

#include <cstdint>
#include <vector>

namespace vfi {

// Image quality metrics on CHW float frames in [0,1].
// psnr: 10*log10(1/MSE), capped at 99 dB for identical frames.
// ssim: 11x11 Gaussian window (sigma 1.5), K1=0.01 K2=0.03 L=1, averaged
// over channels and valid window positions.
// interp_error: root-mean-square error in 8-bit units, 255*sqrt(MSE).
double psnr(const std::vector<float>& a, const std::vector<float>& b);
double ssim(const std::vector<float>& a, const std::vector<float>& b, int64_t channels,
            int64_t h, int64_t w);
double interp_error(const std::vector<float>& a, const std::vector<float>& b);

// mean endpoint error between two [2,h,w] flow fields, in pixels
double flow_epe(const std::vector<float>& a, const std::vector<float>& b, int64_t h, int64_t w);

}  // namespace vfi
