#include <cmath>

#include "doctest.h"
#include "vfi/attention.hpp"
#include "vfi/erf.hpp"
#include "vfi/layers.hpp"

using namespace vfi;

namespace {

BlockFactory<double> conv3_factory() {
  return [](Rng& rng) {
    auto conv = std::make_shared<Conv2dLayer<double>>();
    conv->init(2, 2, 3, 1, 1, rng);
    return [conv](const TensorD& x) { return conv->forward(x); };
  };
}

// attention blocks without the residual shortcut: the probe sees the
// attention path itself, not the identity map around it
BlockFactory<double> attn_factory(bool use_cross, int m) {
  return [use_cross, m](Rng& rng) {
    auto blk = std::make_shared<CswaBlock<double>>();
    if (use_cross) {
      blk->init(32, m, 2, rng);
    } else {
      blk->attn.init(32, m, 2, rng, false);
    }
    return [blk, use_cross, m](const TensorD& x) {
      WindowGrid<double> xg = partition_windows(x, m);
      if (!use_cross) return merge_windows(wa_forward(xg, blk->attn));
      WindowGrid<double> yg = partition_overlapping(downsample2x(x), m);
      return cswa_forward_map(xg, yg, *blk);
    };
  };
}

}  // namespace

TEST_CASE("erf: single 3x3 conv has exactly a 3x3 support") {
  Rng rng(3);
  ErfMap map = compute_erf<double>(conv3_factory(), 2, 9, 9, 4, rng);
  int64_t cy = 4, cx = 4;
  for (int64_t y = 0; y < 9; ++y)
    for (int64_t x = 0; x < 9; ++x) {
      bool inside = std::llabs(y - cy) <= 1 && std::llabs(x - cx) <= 1;
      double v = map.map[static_cast<size_t>(y * 9 + x)];
      if (inside)
        CHECK(v > 0.0);
      else
        CHECK(v == 0.0);
    }
  CHECK(erf_area(map) <= 9);
}

TEST_CASE("erf: all-zero gradient field reports area 0") {
  BlockFactory<double> zero_block = [](Rng&) {
    return [](const TensorD& x) { return mul_scalar(x, 0.0); };
  };
  Rng rng(5);
  ErfMap map = compute_erf<double>(zero_block, 1, 8, 8, 2, rng);
  for (double v : map.map) CHECK(v == 0.0);
  CHECK(erf_area(map) == 0);
}

TEST_CASE("erf: WA support confined to the center window; CSWA strictly larger") {
  const int m = 8;
  const int64_t S = 32;
  int64_t wy = (S / 2) / m * m, wx = (S / 2) / m * m;  // window containing the center
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 7919);
    ErfMap wa = compute_erf<double>(attn_factory(false, m), 32, S, S, 4, rng);
    // exact zeros outside the center window
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        bool inside = y >= wy && y < wy + m && x >= wx && x < wx + m;
        if (!inside) CHECK(wa.map[static_cast<size_t>(y * S + x)] == 0.0);
      }
    CHECK(erf_area(wa) <= m * m);

    ErfMap cs = compute_erf<double>(attn_factory(true, m), 32, S, S, 4, rng);
    // support reaches outside the fine window (into the coarse footprint)
    double outside_mass = 0.0;
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        bool inside = y >= wy && y < wy + m && x >= wx && x < wx + m;
        if (!inside) outside_mass += cs.map[static_cast<size_t>(y * S + x)];
      }
    CHECK(outside_mass > 0.0);
    CHECK(erf_area(cs) > erf_area(wa));
  }
}
