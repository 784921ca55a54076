#include "vfi/erf.hpp"

#include <algorithm>
#include <cmath>

#include "vfi/io.hpp"
#include "vfi/warp.hpp"

namespace vfi {

template <typename T>
ErfMap compute_erf(const BlockFactory<T>& factory, int64_t c, int64_t h, int64_t w, int samples,
                   Rng& rng) {
  ErfMap out;
  out.h = h;
  out.w = w;
  out.map.assign(static_cast<size_t>(h * w), 0.0);

  for (int s = 0; s < samples; ++s) {
    auto block = factory(rng);
    Tensor<T> x = Tensor<T>::randn({1, c, h, w}, rng);
    x.set_requires_grad(true);
    Tape<T>::get().clear();
    Tensor<T> y = block(x);
    if (y.shape()[2] != h || y.shape()[3] != w)
      throw DimError("compute_erf: block changed the spatial size");
    Tensor<T> center = crop2d(y, h / 2, w / 2, 1, 1);
    backward(sum(center));
    if (x.has_grad()) {
      const auto& g = x.grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h * w; ++i)
          out.map[static_cast<size_t>(i)] +=
              std::fabs(static_cast<double>(g[static_cast<size_t>(ch * h * w + i)]));
    }
    x.zero_grad();
  }

  double mx = 0.0;
  for (double v : out.map) mx = std::max(mx, v);
  if (mx > 0.0)
    for (double& v : out.map) v /= mx;
  return out;
}

int64_t erf_area(const ErfMap& map, double threshold) {
  int64_t count = 0;
  for (double v : map.map)
    if (v > threshold) ++count;
  return count;
}

void write_erf_png(const std::string& path, const ErfMap& map) {
  std::vector<uint8_t> gray(map.map.size());
  for (size_t i = 0; i < map.map.size(); ++i)
    gray[i] = static_cast<uint8_t>(std::clamp(map.map[i], 0.0, 1.0) * 255.0 + 0.5);
  write_png_gray(path, map.w, map.h, gray);
}

template ErfMap compute_erf<float>(const BlockFactory<float>&, int64_t, int64_t, int64_t, int,
                                   Rng&);
template ErfMap compute_erf<double>(const BlockFactory<double>&, int64_t, int64_t, int64_t, int,
                                    Rng&);

}  // namespace vfi
