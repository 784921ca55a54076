#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "testutil.hpp"
#include "vfi/attention.hpp"
#include "vfi/warp.hpp"

using namespace vfi;
using vfitest::gradcheck;

namespace {

void zero_all(ParamMap<double>& params) {
  for (auto& kv : params) {
    double* p = kv.second->t.data();
    std::fill(p, p + kv.second->t.numel(), 0.0);
  }
}

void set_identity(LinearLayer<double>& lin) {
  int64_t n = lin.w.t.shape()[0];
  double* p = lin.w.t.data();
  std::fill(p, p + lin.w.t.numel(), 0.0);
  for (int64_t i = 0; i < n; ++i) p[i * n + i] = 1.0;
}

// Loop-level CSWA oracle: explicit loops over windows, tokens, heads and the
// fusion convolutions, in double precision. Mirrors the declared contract,
// not the implementation's tensor plumbing.
std::vector<double> cswa_bruteforce(const std::vector<double>& x, int64_t C, int64_t H,
                                    int64_t W, int m, int heads, CswaBlock<double>& blk) {
  auto at = [&](const std::vector<double>& v, int64_t c, int64_t y, int64_t xx) {
    return v[(c * H + y) * W + xx];
  };
  int64_t HD = H / 2, WD = W / 2;
  // 2x2 box downsample
  std::vector<double> down(static_cast<size_t>(C * HD * WD));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < HD; ++y)
      for (int64_t xx = 0; xx < WD; ++xx)
        down[(c * HD + y) * WD + xx] =
            0.25 * (at(x, c, 2 * y, 2 * xx) + at(x, c, 2 * y, 2 * xx + 1) +
                    at(x, c, 2 * y + 1, 2 * xx) + at(x, c, 2 * y + 1, 2 * xx + 1));
  // reflection pad by m/4
  int pad = m / 4;
  int64_t PH = HD + 2 * pad, PW = WD + 2 * pad;
  auto mirror = [](int64_t i, int64_t n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  std::vector<double> padded(static_cast<size_t>(C * PH * PW));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < PH; ++y)
      for (int64_t xx = 0; xx < PW; ++xx)
        padded[(c * PH + y) * PW + xx] =
            down[(c * HD + mirror(y - pad, HD)) * WD + mirror(xx - pad, WD)];

  int64_t gh = H / m, gw = W / m;
  int64_t T = static_cast<int64_t>(m) * m;
  int64_t d = C / heads;
  const double* wq = blk.attn.wq.w.t.data();
  const double* wkx = blk.attn.wkx.w.t.data();
  const double* wky = blk.attn.wky.w.t.data();
  const double* wvx = blk.attn.wvx.w.t.data();
  const double* wvy = blk.attn.wvy.w.t.data();
  const double* wo = blk.attn.wo.w.t.data();
  const double* pf = blk.attn.p_fine.t.data();
  const double* pc = blk.attn.p_cross.t.data();
  int64_t fine_span = 2 * m - 1, cross_span = 4 * m - 1;

  std::vector<double> map_xx(static_cast<size_t>(C * H * W)),
      map_xy(static_cast<size_t>(C * H * W));
  std::vector<double> tokx(static_cast<size_t>(T * C)), toky(static_cast<size_t>(T * C));
  std::vector<double> q(static_cast<size_t>(T * C)), kx(static_cast<size_t>(T * C)),
      ky(static_cast<size_t>(T * C)), vx(static_cast<size_t>(T * C)),
      vy(static_cast<size_t>(T * C));
  for (int64_t wy = 0; wy < gh; ++wy)
    for (int64_t wx = 0; wx < gw; ++wx) {
      for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < C; ++c) {
          tokx[t * C + c] = at(x, c, wy * m + t / m, wx * m + t % m);
          int64_t sy = wy * (m / 2) + t / m, sx = wx * (m / 2) + t % m;
          toky[t * C + c] = padded[(c * PH + sy) * PW + sx];
        }
      auto proj = [&](const std::vector<double>& tok, const double* wmat,
                      std::vector<double>& out) {
        for (int64_t t = 0; t < T; ++t)
          for (int64_t c = 0; c < C; ++c) {
            double s = 0;
            for (int64_t i = 0; i < C; ++i) s += tok[t * C + i] * wmat[i * C + c];
            out[t * C + c] = s;
          }
      };
      proj(tokx, wq, q);
      proj(tokx, wkx, kx);
      proj(toky, wky, ky);
      proj(tokx, wvx, vx);
      proj(toky, wvy, vy);

      auto attend = [&](const std::vector<double>& kk, const std::vector<double>& vv,
                        bool cross, int64_t t, int64_t h, double* out_c) {
        std::vector<double> logit(static_cast<size_t>(T));
        for (int64_t s = 0; s < T; ++s) {
          double dot = 0;
          for (int64_t j = 0; j < d; ++j)
            dot += q[t * C + h * d + j] * kk[s * C + h * d + j];
          int64_t ry = t / m, rx = t % m, bias_idx;
          if (!cross) {
            bias_idx = (ry - s / m + m - 1) * fine_span + (rx - s % m + m - 1);
            logit[s] = dot / std::sqrt(double(d)) + pf[h * fine_span * fine_span + bias_idx];
          } else {
            int64_t cy = 2 * (s / m) - m / 2, cx = 2 * (s % m) - m / 2;
            bias_idx = (ry - cy + 2 * m - 1) * cross_span + (rx - cx + 2 * m - 1);
            logit[s] = dot / std::sqrt(double(d)) + pc[h * cross_span * cross_span + bias_idx];
          }
        }
        double denom = 0;
        for (int64_t s = 0; s < T; ++s) denom += std::exp(logit[s]);
        for (int64_t j = 0; j < d; ++j) {
          double acc = 0;
          for (int64_t s = 0; s < T; ++s)
            acc += std::exp(logit[s]) / denom * vv[s * C + h * d + j];
          out_c[h * d + j] = acc;
        }
      };

      std::vector<double> ax(static_cast<size_t>(C)), ay(static_cast<size_t>(C));
      for (int64_t t = 0; t < T; ++t) {
        for (int h = 0; h < heads; ++h) {
          attend(kx, vx, false, t, h, ax.data());
          attend(ky, vy, true, t, h, ay.data());
        }
        for (int64_t c = 0; c < C; ++c) {
          double sx2 = 0, sy2 = 0;
          for (int64_t i = 0; i < C; ++i) {
            sx2 += ax[i] * wo[i * C + c];
            sy2 += ay[i] * wo[i * C + c];
          }
          int64_t py = wy * m + t / m, px = wx * m + t % m;
          map_xx[(c * H + py) * W + px] = sx2;
          map_xy[(c * H + py) * W + px] = sy2;
        }
      }
    }

  // fusion: two 3x3 convs with LeakyReLU(0.1) between, on concat(xx, xy)
  auto conv3 = [&](const std::vector<double>& in, int64_t ic, const double* wgt,
                   const double* bias, std::vector<double>& out) {
    out.assign(static_cast<size_t>(C * H * W), 0.0);
    for (int64_t oc = 0; oc < C; ++oc)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          double s = bias[oc];
          for (int64_t c = 0; c < ic; ++c)
            for (int ky2 = -1; ky2 <= 1; ++ky2)
              for (int kx2 = -1; kx2 <= 1; ++kx2) {
                int64_t yy = y + ky2, xq = xx + kx2;
                if (yy < 0 || yy >= H || xq < 0 || xq >= W) continue;
                s += in[(c * H + yy) * W + xq] *
                     wgt[((oc * ic + c) * 3 + ky2 + 1) * 3 + kx2 + 1];
              }
          out[(oc * H + y) * W + xx] = s;
        }
  };
  std::vector<double> catmap(static_cast<size_t>(2 * C * H * W));
  std::copy(map_xx.begin(), map_xx.end(), catmap.begin());
  std::copy(map_xy.begin(), map_xy.end(), catmap.begin() + C * H * W);
  std::vector<double> f1, f2;
  conv3(catmap, 2 * C, blk.fuse1.w.t.data(), blk.fuse1.b.t.data(), f1);
  for (double& v : f1) v = v > 0 ? v : 0.1 * v;
  conv3(f1, C, blk.fuse2.w.t.data(), blk.fuse2.b.t.data(), f2);
  std::vector<double> out(static_cast<size_t>(C * H * W));
  for (size_t i = 0; i < out.size(); ++i) out[i] = map_xx[i] + f2[i];
  return out;
}

}  // namespace

TEST_CASE("wa_forward: identical tokens give identical outputs") {
  Rng rng(7);
  AttentionParams<double> p;
  p.init(8, 4, 2, rng, false);
  TensorD x({1, 8, 4, 4});
  Rng r2(8);
  for (int64_t c = 0; c < 8; ++c) {
    double v = r2.normal();
    for (int64_t i = 0; i < 16; ++i) x.data()[c * 16 + i] = v;  // same token everywhere
  }
  WindowGrid<double> g = partition_windows(x, 4);
  WindowGrid<double> out = wa_forward(g, p);
  for (int64_t t = 1; t < 16; ++t)
    for (int64_t c = 0; c < 8; ++c)
      CHECK(out.windows.data()[t * 8 + c] ==
            doctest::Approx(out.windows.data()[c]).epsilon(1e-12));
}

TEST_CASE("wa_forward: single-token window reduces to projected value") {
  Rng rng(9);
  AttentionParams<double> p;
  p.init(4, 1, 1, rng, false);
  TensorD x = TensorD::randn({1, 4, 1, 1}, rng);
  WindowGrid<double> g = partition_windows(x, 1);
  WindowGrid<double> out = wa_forward(g, p);
  // attention over one logit is 1: out = (x Wv) Wo
  TensorD expect = matmul(matmul(reshape(x, {1, 4}), p.wvx.w.t), p.wo.w.t);
  for (int64_t c = 0; c < 4; ++c)
    CHECK(out.windows.data()[c] == doctest::Approx(expect.data()[c]).epsilon(1e-12));
}

TEST_CASE("wa_forward: M=2 identity projections match exact enumeration") {
  Rng rng(11);
  AttentionParams<double> p;
  p.init(1, 2, 1, rng, false);
  set_identity(p.wq);
  set_identity(p.wkx);
  set_identity(p.wvx);
  set_identity(p.wo);
  // P stays zero-initialized
  TensorD x({1, 1, 2, 2}, {0.3, -0.7, 1.1, 0.4});
  WindowGrid<double> g = partition_windows(x, 2);
  WindowGrid<double> out = wa_forward(g, p);
  // brute force: logits_ij = x_i x_j (d=1), softmax rows, weighted sum
  const double tok[4] = {0.3, -0.7, 1.1, 0.4};
  for (int i = 0; i < 4; ++i) {
    double denom = 0, acc = 0;
    for (int j = 0; j < 4; ++j) denom += std::exp(tok[i] * tok[j]);
    for (int j = 0; j < 4; ++j) acc += std::exp(tok[i] * tok[j]) / denom * tok[j];
    CHECK(out.windows.data()[i] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("wa_forward: width mismatch is a config error") {
  Rng rng(12);
  AttentionParams<double> p;
  p.init(8, 4, 2, rng, false);
  TensorD x({1, 6, 4, 4});
  WindowGrid<double> g = partition_windows(x, 4);
  CHECK_THROWS_AS(wa_forward(g, p), ConfigError);
}

TEST_CASE("cswa: degenerate coarse scale equals the fine path") {
  Rng rng(13);
  CswaBlock<double> blk;
  blk.init(8, 4, 2, rng);
  // share fine/coarse projections, zero fusion convs
  blk.attn.wky.w.t = TensorD(blk.attn.wkx.w.t.shape(), blk.attn.wkx.w.t.values());
  blk.attn.wvy.w.t = TensorD(blk.attn.wvx.w.t.shape(), blk.attn.wvx.w.t.values());
  std::fill(blk.fuse1.w.t.data(), blk.fuse1.w.t.data() + blk.fuse1.w.t.numel(), 0.0);
  std::fill(blk.fuse2.w.t.data(), blk.fuse2.w.t.data() + blk.fuse2.w.t.numel(), 0.0);

  TensorD x = TensorD::randn({1, 8, 8, 8}, rng);
  WindowGrid<double> xg = partition_windows(x, 4);
  WindowGrid<double> yg = xg;  // y identical to x, token for token
  Tensor<double> fused = cswa_forward_map(xg, yg, blk);
  // zero Convs: fused == X_X == plain WA with the same parameters
  WindowGrid<double> wa_out = wa_forward(xg, blk.attn);
  TensorD wa_map = merge_windows(wa_out);
  for (int64_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.data()[i] == doctest::Approx(wa_map.data()[i]).epsilon(1e-12));
}

TEST_CASE("cswa: window-count mismatch is caught") {
  Rng rng(14);
  CswaBlock<double> blk;
  blk.init(4, 4, 1, rng);
  TensorD x({1, 4, 8, 8});
  TensorD yd({1, 4, 2, 2});  // fine 4x4 -> 1 window, mismatching 4
  WindowGrid<double> xg = partition_windows(x, 4);
  WindowGrid<double> yg = partition_overlapping(yd, 4);
  CHECK_THROWS_AS(cswa_forward_map(xg, yg, blk), DimError);
}

TEST_CASE("cswa: matches the loop-level brute-force oracle") {
  Rng rng(15);
  const int C = 4, m = 4, heads = 2;
  const int64_t H = 8, W = 8;
  CswaBlock<double> blk;
  blk.init(C, m, heads, rng);
  // nonzero positional tables so both index paths are exercised
  for (auto* pt : {&blk.attn.p_fine, &blk.attn.p_cross}) {
    double* p = pt->t.data();
    for (int64_t i = 0; i < pt->t.numel(); ++i) p[i] = 0.1 * rng.normal();
  }
  TensorD x = TensorD::randn({1, C, H, W}, rng);

  WindowGrid<double> xg = partition_windows(x, m);
  WindowGrid<double> yg = partition_overlapping(downsample2x(x), m);
  Tensor<double> got = cswa_forward_map(xg, yg, blk);

  std::vector<double> want = cswa_bruteforce(x.values(), C, H, W, m, heads, blk);
  REQUIRE(got.numel() == static_cast<int64_t>(want.size()));
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("cswa grid variant preserves geometry metadata") {
  Rng rng(16);
  CswaBlock<double> blk;
  blk.init(4, 4, 1, rng);
  TensorD x = TensorD::randn({1, 4, 8, 8}, rng);
  WindowGrid<double> xg = partition_windows(x, 4);
  WindowGrid<double> yg = partition_overlapping(downsample2x(x), 4);
  WindowGrid<double> out = cswa_forward(xg, yg, blk);
  CHECK(out.num_windows() == xg.num_windows());
  CHECK(out.m == 4);
  CHECK_FALSE(out.overlapping);
}

TEST_CASE("attention weights invariant under Q,K scaling with logit compensation") {
  Rng rng(17);
  const double c = 7.3;
  AttentionParams<double> p1;
  p1.init(8, 4, 2, rng, false);
  AttentionParams<double> p2 = p1;
  // (cQ)(K/c)^T == QK^T: same attention weights, same values
  p2.wq.w.t = mul_scalar(TensorD(p1.wq.w.t.shape(), p1.wq.w.t.values()), c);
  p2.wkx.w.t = mul_scalar(TensorD(p1.wkx.w.t.shape(), p1.wkx.w.t.values()), 1.0 / c);
  TensorD x = TensorD::randn({1, 8, 8, 8}, rng);
  WindowGrid<double> g = partition_windows(x, 4);
  WindowGrid<double> o1 = wa_forward(g, p1);
  WindowGrid<double> o2 = wa_forward(g, p2);
  for (int64_t i = 0; i < o1.windows.numel(); ++i)
    CHECK(std::fabs(o1.windows.data()[i] - o2.windows.data()[i]) < 1e-6);
}

TEST_CASE("tfl: zero weights (except LN affine) is the identity") {
  Rng rng(19);
  Tfl<double> tfl;
  tfl.init(8, 4, 2, 2, rng, true);
  ParamMap<double> params;
  tfl.collect(params, "tfl");
  zero_all(params);
  for (auto& kv : params) {  // restore LN gamma
    if (kv.first.find("gamma") != std::string::npos) {
      double* p = kv.second->t.data();
      std::fill(p, p + kv.second->t.numel(), 1.0);
    }
  }
  TensorD z = TensorD::randn({1, 8, 8, 8}, rng);
  TensorD out = tfl.forward(z);
  for (int64_t i = 0; i < z.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-12));
}

TEST_CASE("tfl: shape preserved for non-divisible sizes via auto-padding") {
  Rng rng(21);
  Tfl<double> tfl;
  tfl.init(4, 4, 1, 2, rng, true);
  TensorD z = TensorD::randn({1, 4, 10, 14}, rng);
  TensorD out = tfl.forward(z);
  CHECK(out.shape() == z.shape());
}

TEST_CASE("tfl: batch permutation equivariance") {
  Rng rng(22);
  Tfl<double> tfl;
  tfl.init(4, 4, 1, 2, rng, true);
  TensorD a = TensorD::randn({1, 4, 8, 8}, rng);
  TensorD b = TensorD::randn({1, 4, 8, 8}, rng);
  TensorD ab = concat<double>({a, b}, 0);
  TensorD ba = concat<double>({b, a}, 0);
  TensorD oab = tfl.forward(ab);
  TensorD oba = tfl.forward(ba);
  int64_t half = oab.numel() / 2;
  for (int64_t i = 0; i < half; ++i) {
    CHECK(oab.data()[i] == doctest::Approx(oba.data()[half + i]).epsilon(1e-12));
    CHECK(oab.data()[half + i] == doctest::Approx(oba.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("tfl: gradient through one layer") {
  Rng rng(23);
  Tfl<double> tfl;
  tfl.init(4, 4, 2, 2, rng, true);
  TensorD z = TensorD::randn({1, 4, 8, 8}, rng);
  TensorD cot = TensorD::randn({1, 4, 8, 8}, rng);
  ParamMap<double> params;
  tfl.collect(params, "tfl");
  vfitest::condition_for_gradcheck(params, rng);
  std::vector<TensorD*> inputs{&z};
  for (auto& kv : params) inputs.push_back(&kv.second->t);
  vfitest::GradCheckOptions<double> opt;
  opt.h = 1e-5;
  opt.sample = 40;
  double err = gradcheck<double>(
      [&]() { return sum(mul(tfl.forward(z), cot)); }, inputs, opt);
  CHECK(err < 1e-3);
}

TEST_CASE("tfb: zeroed TFLs reduce to the two convolutions") {
  Rng rng(29);
  Tfb<double> tfb;
  tfb.init(6, 8, 2, 4, 2, 2, rng, true);
  ParamMap<double> params;
  tfb.collect(params, "tfb");
  for (auto& kv : params) {
    if (kv.first.find("tfl") == std::string::npos) continue;
    double* p = kv.second->t.data();
    std::fill(p, p + kv.second->t.numel(), 0.0);
    if (kv.first.find("gamma") != std::string::npos)
      std::fill(p, p + kv.second->t.numel(), 1.0);
  }
  TensorD x = TensorD::randn({1, 6, 8, 8}, rng);
  TensorD got = tfb.forward(x);
  TensorD want =
      leaky_relu(tfb.exit.forward(leaky_relu(tfb.entry.forward(x), 0.1)), 0.1);
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("tfb: spatial size preserved; mismatched inputs rejected") {
  Rng rng(31);
  Tfb<double> tfb;
  tfb.init(12, 8, 1, 4, 2, 2, rng, true);
  TensorD f({1, 4, 8, 8}), w0({1, 4, 8, 8}), w1({1, 4, 8, 8});
  CHECK(tfb.forward(f, w0, w1).shape() == std::vector<int64_t>{1, 8, 8, 8});
  TensorD bad({1, 4, 4, 4});
  CHECK_THROWS_AS(tfb.forward(f, w0, bad), DimError);
}

TEST_CASE("tfb: end-to-end gradient on a 2-TFL toy block") {
  Rng rng(37);
  Tfb<double> tfb;
  tfb.init(4, 4, 2, 4, 2, 2, rng, true);
  TensorD x = TensorD::randn({1, 4, 8, 8}, rng);
  TensorD cot = TensorD::randn({1, 4, 8, 8}, rng);
  ParamMap<double> params;
  tfb.collect(params, "tfb");
  vfitest::condition_for_gradcheck(params, rng);
  std::vector<TensorD*> inputs{&x};
  for (auto& kv : params) inputs.push_back(&kv.second->t);
  vfitest::GradCheckOptions<double> opt;
  opt.h = 1e-5;
  opt.sample = 25;
  double err = gradcheck<double>(
      [&]() { return sum(mul(tfb.forward(x), cot)); }, inputs, opt);
  CHECK(err < 1e-3);
}

TEST_CASE("wa locality: gradients vanish outside the query window, exactly") {
  Rng rng(41);
  Tfl<double> tfl;
  tfl.init(4, 8, 2, 2, rng, false);  // pure WA path
  TensorD z = TensorD::randn({1, 4, 32, 32}, rng);
  z.set_requires_grad(true);
  Tape<double>::get().clear();
  TensorD out = tfl.forward(z);
  // sum the center window's outputs (window containing pixel 16,16)
  TensorD win = crop2d(out, 16, 16, 8, 8);
  backward(sum(win));
  const auto& g = z.grad();
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t y = 0; y < 32; ++y)
      for (int64_t x = 0; x < 32; ++x) {
        bool inside = (y >= 16 && y < 24 && x >= 16 && x < 24);
        if (!inside) CHECK(g[(c * 32 + y) * 32 + x] == 0.0);
      }
  z.zero_grad();
}

TEST_CASE("cswa reach: fine pixels outside the window but in the coarse footprint matter") {
  Rng rng(43);
  Tfl<double> tfl;
  tfl.init(4, 8, 2, 2, rng, true);
  // nonzero tables; random weights already nonzero
  TensorD z = TensorD::randn({1, 4, 32, 32}, rng);
  z.set_requires_grad(true);
  Tape<double>::get().clear();
  TensorD out = tfl.forward(z);
  TensorD win = crop2d(out, 16, 16, 8, 8);
  backward(sum(win));
  const auto& g = z.grad();
  // probe a pixel outside the 8x8 window but inside its 16x16 coarse
  // footprint (window [16,24) -> footprint [12,28))
  double mag = 0;
  for (int64_t c = 0; c < 4; ++c) mag += std::fabs(g[(c * 32 + 13) * 32 + 13]);
  CHECK(mag > 0.0);
  z.zero_grad();
}

TEST_CASE("attention MAC formula matches the instrumented count") {
  Rng rng(47);
  for (int m : {4, 8}) {
    const int C = 8, heads = 2;
    const int64_t H = 16, W = 16;
    CswaBlock<double> blk;
    blk.init(C, m, heads, rng);
    TensorD x = TensorD::randn({1, C, H, W}, rng);
    NoGradGuard ng;
    WindowGrid<double> xg = partition_windows(x, m);
    WindowGrid<double> yg = partition_overlapping(downsample2x(x), m);
    MacCounter::reset();
    MacCounter::enable(true);
    cswa_forward_map(xg, yg, blk);
    MacCounter::enable(false);
    CHECK(MacCounter::count() == attention_macs(1, C, H, W, m, heads, true));

    MacCounter::reset();
    MacCounter::enable(true);
    wa_forward(xg, blk.attn);
    MacCounter::enable(false);
    CHECK(MacCounter::count() == attention_macs(1, C, H, W, m, heads, false));
  }
}
