#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vfi/warp.hpp"

using namespace vfi;
using vfitest::gradcheck;

TEST_CASE("bilinear_warp: zero flow is the identity, bitwise") {
  Rng rng(5);
  TensorD src = TensorD::randn({2, 3, 6, 7}, rng);
  TensorD flow({2, 2, 6, 7});
  TensorD out = bilinear_warp(src, flow);
  for (int64_t i = 0; i < src.numel(); ++i) CHECK(out.data()[i] == src.data()[i]);
}

TEST_CASE("bilinear_warp: ramp shifted by integer flow") {
  // f(x,y) = x, u = 1 everywhere: out(x) = x+1 away from the right border
  const int64_t H = 5, W = 8;
  TensorD src({1, 1, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) src.data()[y * W + x] = static_cast<double>(x);
  TensorD flow({1, 2, H, W});
  for (int64_t i = 0; i < H * W; ++i) flow.data()[i] = 1.0;  // u channel
  TensorD out = bilinear_warp(src, flow);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x + 1 < W; ++x)
      CHECK(out.data()[y * W + x] == doctest::Approx(static_cast<double>(x + 1)));
}

TEST_CASE("bilinear_warp: size mismatch is a dimension error") {
  TensorD src({1, 1, 4, 4});
  TensorD flow({1, 2, 4, 5});
  CHECK_THROWS_AS(bilinear_warp(src, flow), DimError);
}

TEST_CASE("bilinear_warp: gradient w.r.t. flow and src") {
  Rng rng(17);
  TensorD src = TensorD::randn({1, 2, 6, 6}, rng);
  // interior, off-grid flow keeps the sampler away from clamp corners and
  // integer-coordinate kinks
  TensorD flow = TensorD::uniform({1, 2, 6, 6}, rng, 0.2, 0.7);
  TensorD cot = TensorD::randn({1, 2, 6, 6}, rng);
  double err = gradcheck<double>(
      [&]() { return sum(mul(bilinear_warp(src, flow), cot)); }, {&src, &flow});
  CHECK(err < 1e-4);
}

TEST_CASE("bilinear_warp: linear in the source") {
  Rng rng(23);
  TensorD x = TensorD::randn({1, 2, 5, 5}, rng);
  TensorD y = TensorD::randn({1, 2, 5, 5}, rng);
  TensorD flow = TensorD::uniform({1, 2, 5, 5}, rng, -1.5, 1.5);
  const double a = 0.7, b = -1.3;
  TensorD lhs = bilinear_warp(add(mul_scalar(x, a), mul_scalar(y, b)), flow);
  TensorD rhs = add(mul_scalar(bilinear_warp(x, flow), a), mul_scalar(bilinear_warp(y, flow), b));
  for (int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(std::fabs(lhs.data()[i] - rhs.data()[i]) < 1e-6);
}

TEST_CASE("bilinear_warp: far out-of-frame flow replicates the border, no NaN") {
  Rng rng(29);
  TensorD src = TensorD::randn({1, 1, 4, 6}, rng);
  TensorD flow({1, 2, 4, 6});
  for (int64_t i = 0; i < 24; ++i) flow.data()[i] = 10.0;       // u: 10 px right
  for (int64_t i = 24; i < 48; ++i) flow.data()[i] = 0.0;
  TensorD out = bilinear_warp(src, flow);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 6; ++x) {
      double v = out.data()[y * 6 + x];
      CHECK(std::isfinite(v));
      CHECK(v == doctest::Approx(src.data()[y * 6 + 5]));  // right edge value
    }
}

TEST_CASE("reflection_pad: 1-d row and identity") {
  TensorD row({1, 1, 1, 3}, {1.0, 2.0, 3.0});  // [a,b,c]
  TensorD padded = reflection_pad(row, 1, 1, 0, 0);
  const double want[5] = {2, 1, 2, 3, 2};  // [b,a,b,c,b]
  for (int i = 0; i < 5; ++i) CHECK(padded.data()[i] == doctest::Approx(want[i]));

  TensorD same = reflection_pad(row, 0, 0, 0, 0);
  for (int i = 0; i < 3; ++i) CHECK(same.data()[i] == row.data()[i]);
}

TEST_CASE("reflection_pad: mirrored corner block matches index oracle") {
  Rng rng(31);
  TensorD x = TensorD::randn({1, 1, 4, 4}, rng);
  TensorD p = reflection_pad(x, 2);
  auto mirror = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t xx = 0; xx < 8; ++xx) {
      double want = x.data()[mirror(y - 2, 4) * 4 + mirror(xx - 2, 4)];
      CHECK(p.data()[y * 8 + xx] == doctest::Approx(want));
    }
}

TEST_CASE("reflection_pad: pad >= extent is a dimension error") {
  TensorD x({1, 1, 3, 3});
  CHECK_THROWS_AS(reflection_pad(x, 3), DimError);
}

TEST_CASE("reflection_pad: gradient") {
  Rng rng(37);
  TensorD x = TensorD::randn({1, 2, 5, 5}, rng);
  TensorD cot = TensorD::randn({1, 2, 9, 9}, rng);
  double err = gradcheck<double>(
      [&]() { return sum(mul(reflection_pad(x, 2), cot)); }, {&x});
  CHECK(err < 1e-4);
}

TEST_CASE("rescale_flow: identity, constant halving, round trip") {
  Rng rng(41);
  TensorD flow = TensorD::randn({1, 2, 8, 8}, rng);
  TensorD same = rescale_flow(flow, 1.0);
  for (int64_t i = 0; i < flow.numel(); ++i) CHECK(same.data()[i] == flow.data()[i]);

  TensorD cflow({1, 2, 8, 8});
  for (int64_t i = 0; i < 64; ++i) cflow.data()[i] = 4.0;
  for (int64_t i = 64; i < 128; ++i) cflow.data()[i] = -2.0;
  TensorD half = rescale_flow(cflow, 0.5);
  CHECK(half.shape() == std::vector<int64_t>{1, 2, 4, 4});
  for (int64_t i = 0; i < 16; ++i) CHECK(half.data()[i] == doctest::Approx(2.0));
  for (int64_t i = 16; i < 32; ++i) CHECK(half.data()[i] == doctest::Approx(-1.0));

  // smooth field (gradients well below 0.1 px/px): down then up stays
  // within 0.05 px
  const int64_t H = 16, W = 16;
  TensorD smooth({1, 2, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double fy = static_cast<double>(y) / H, fx = static_cast<double>(x) / W;
      smooth.data()[y * W + x] = 1.5 + 0.3 * std::sin(2.0 * fx) + 0.4 * fy;
      smooth.data()[H * W + y * W + x] = -2.0 + 0.2 * std::cos(1.5 * fy) - 0.3 * fx;
    }
  TensorD rt = rescale_flow(rescale_flow(smooth, 0.5), 2.0);
  double worst = 0;
  for (int64_t i = 0; i < smooth.numel(); ++i)
    worst = std::max(worst, std::fabs(rt.data()[i] - smooth.data()[i]));
  CHECK(worst < 0.05);
}

TEST_CASE("rescale_flow: invalid factor") {
  TensorD flow({1, 2, 4, 4});
  CHECK_THROWS_AS(rescale_flow(flow, 0.0), DimError);
}
