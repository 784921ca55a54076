#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vfi/optim.hpp"
#include "vfi/tensor.hpp"

using namespace vfi;
using vfitest::gradcheck;

namespace {

TensorD randn(std::vector<int64_t> shape, uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return TensorD::randn(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("matmul: identity and 1x1") {
  TensorD eye({2, 2}, {1, 0, 0, 1});
  TensorD b({2, 2}, {3, 4, 5, 6});
  TensorD c = matmul(eye, b);
  for (int i = 0; i < 4; ++i) CHECK(c.data()[i] == b.data()[i]);

  TensorD s1({1, 1}, {2.0});
  TensorD s2({1, 1}, {3.0});
  CHECK(matmul(s1, s2).item() == doctest::Approx(6.0));
}

TEST_CASE("matmul: shape errors carry both shapes") {
  TensorD a({2, 3});
  TensorD b({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimError);
}

TEST_CASE("matmul: gradient vs central differences") {
  TensorD a = randn({3, 4}, 11);
  TensorD b = randn({4, 2}, 12);
  double err = gradcheck<double>([&]() { return sum(matmul(a, b)); }, {&a, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("matmul: batched gradient") {
  TensorD a = randn({2, 3, 4}, 21);
  TensorD b = randn({2, 4, 5}, 22);
  TensorD w = randn({2, 3, 5}, 23);
  double err = gradcheck<double>([&]() { return sum(mul(matmul(a, b), w)); }, {&a, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("softmax: symmetry, stability") {
  TensorD x({3}, {0, 0, 0});
  TensorD y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3.0));

  TensorD big({2}, {1000.0, 0.0});
  TensorD yb = softmax(big, 0);
  CHECK(std::fabs(yb.data()[0] - 1.0) < 1e-12);
  CHECK(std::fabs(yb.data()[1]) < 1e-12);
}

TEST_CASE("softmax: rows sum to 1 for any finite input") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    TensorD x = randn({4, 7}, seed, 30.0);
    TensorD y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax: gradient vs central differences") {
  TensorD x = randn({4}, 31);
  TensorD w = randn({4}, 32);
  double err =
      gradcheck<double>([&]() { return sum(mul(softmax(x, 0), w)); }, {&x});
  CHECK(err < 1e-4);
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity map") {
  TensorD x = randn({1, 1, 4, 4}, 41);
  TensorD w({1, 1, 1, 1}, {1.0});
  TensorD y = conv2d(x, w, TensorD(), 1, 0);
  for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: averaging kernel maps constant image to itself") {
  const double c = 0.37;
  TensorD x = TensorD::full({1, 1, 6, 6}, c);
  TensorD w = TensorD::full({1, 1, 3, 3}, 1.0 / 9.0);
  TensorD y = conv2d(x, w, TensorD(), 1, 0);
  CHECK(y.shape() == std::vector<int64_t>{1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(c));
}

TEST_CASE("conv2d: output size and kernel-fit error") {
  TensorD x({1, 1, 5, 5});
  TensorD w({2, 1, 3, 3});
  TensorD y = conv2d(x, w, TensorD(), 2, 1);
  CHECK(y.shape() == std::vector<int64_t>{1, 2, 3, 3});
  TensorD wbig({1, 1, 8, 8});
  CHECK_THROWS_AS(conv2d(x, wbig, TensorD(), 1, 1), DimError);
}

TEST_CASE("conv2d: gradient in w, x, b vs central differences") {
  TensorD x = randn({1, 2, 5, 5}, 51);
  TensorD w = randn({3, 2, 3, 3}, 52);
  TensorD b = randn({3}, 53);
  TensorD cot = randn({1, 3, 5, 5}, 54);
  double err = gradcheck<double>(
      [&]() { return sum(mul(conv2d(x, w, b, 1, 1), cot)); }, {&x, &w, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("conv2d: strided gradient") {
  TensorD x = randn({2, 2, 6, 6}, 55);
  TensorD w = randn({3, 2, 3, 3}, 56);
  TensorD b = randn({3}, 57);
  TensorD cot = randn({2, 3, 3, 3}, 58);
  double err = gradcheck<double>(
      [&]() { return sum(mul(conv2d(x, w, b, 2, 1), cot)); }, {&x, &w, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("conv_transpose2d: stride-2 of a 1x1 input paints the kernel") {
  TensorD x({1, 1, 1, 1}, {2.5});
  TensorD w({1, 1, 2, 2}, {1, 2, 3, 4});
  TensorD y = conv_transpose2d(x, w, TensorD(), 2);
  CHECK(y.shape() == std::vector<int64_t>{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(2.5 * w.data()[i]));
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convT(y)> with the shared weight tensor
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 97);
    int s = 1 + static_cast<int>(seed % 2);
    TensorD x = TensorD::randn({1, 3, 8, 8}, rng);
    TensorD w = TensorD::randn({4, 3, 3, 3}, rng);  // [OC, IC, k, k]
    TensorD cy = conv2d(x, w, TensorD(), s, 1);
    TensorD y = TensorD::randn(cy.shape(), rng);
    // adjoint consumes the same buffer viewed as [Cin=OC, Cout=IC, k, k]
    TensorD wT(std::vector<int64_t>{4, 3, 3, 3}, w.values());
    TensorD xt = conv_transpose2d(y, wT, TensorD(), s, 1, 8, 8);
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < cy.numel(); ++i) lhs += cy.data()[i] * y.data()[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * xt.data()[i];
    CHECK(std::fabs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("conv_transpose2d: gradient vs central differences") {
  TensorD x = randn({1, 2, 3, 3}, 61);
  TensorD w = randn({2, 3, 2, 2}, 62);
  TensorD b = randn({3}, 63);
  TensorD cot = randn({1, 3, 6, 6}, 64);
  double err = gradcheck<double>(
      [&]() { return sum(mul(conv_transpose2d(x, w, b, 2), cot)); }, {&x, &w, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("layer_norm: constant token maps to zeros") {
  TensorD x = TensorD::full({2, 5}, 3.25);
  TensorD g = TensorD::full({5}, 1.0);
  TensorD b({5});
  TensorD y = layer_norm(x, g, b);
  for (int i = 0; i < 10; ++i) CHECK(std::fabs(y.data()[i]) < 1e-9);
}

TEST_CASE("layer_norm: unit-variance token is preserved up to eps") {
  TensorD x({1, 2}, {1.0, -1.0});
  TensorD g = TensorD::full({2}, 1.0);
  TensorD b({2});
  TensorD y = layer_norm(x, g, b);
  CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: gradient vs central differences") {
  TensorD x = randn({3, 6}, 71);
  TensorD g = randn({6}, 72);
  TensorD b = randn({6}, 73);
  TensorD cot = randn({3, 6}, 74);
  double err = gradcheck<double>(
      [&]() { return sum(mul(layer_norm(x, g, b), cot)); }, {&x, &g, &b});
  CHECK(err < 1e-4);
}

TEST_CASE("elementwise: sigmoid, downsample, concat shapes") {
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5));

  TensorD blk({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(downsample2x(blk).item() == doctest::Approx(2.5));

  TensorD a({2, 3});
  TensorD b({2, 5});
  CHECK(concat<double>({a, b}, 1).shape() == std::vector<int64_t>{2, 8});
  TensorD c({3, 3});
  CHECK_THROWS_AS(concat<double>({a, c}, 1), DimError);
}

TEST_CASE("elementwise: broadcast mul/add and gradients") {
  TensorD mask = randn({2, 1, 3, 3}, 81);
  TensorD img = randn({2, 3, 3, 3}, 82);
  TensorD out = mul(mask, img);
  CHECK(out.shape() == std::vector<int64_t>{2, 3, 3, 3});
  double err = gradcheck<double>([&]() { return sum(mul(mask, img)); }, {&mask, &img});
  CHECK(err < 1e-4);
}

TEST_CASE("elementwise and shape ops: gradients") {
  TensorD x = randn({2, 3, 4}, 91);
  TensorD w = randn({2, 4, 3}, 92);
  auto scalarize = [&](Tensor<double> t) { return sum(mul(t, TensorD(t.shape(), w.values()))); };
  SUBCASE("permute") {
    double err = gradcheck<double>(
        [&]() { return sum(mul(permute(x, {0, 2, 1}), w)); }, {&x});
    CHECK(err < 1e-4);
  }
  SUBCASE("reshape+slice") {
    double err = gradcheck<double>(
        [&]() { return sum(abs(slice(reshape(x, {6, 4}), 0, 1, 3))); }, {&x});
    CHECK(err < 1e-4);
  }
  SUBCASE("unary chain") {
    TensorD y = randn({2, 3, 4}, 93);
    double err = gradcheck<double>(
        [&]() {
          return mean(mul(gelu(x), sigmoid(mul(leaky_relu(y, 0.1), x))));
        },
        {&x, &y});
    CHECK(err < 1e-4);
  }
  SUBCASE("sqrt/div/abs") {
    TensorD y = randn({2, 3, 4}, 94);
    double err = gradcheck<double>(
        [&]() {
          TensorD d = sub(x, y);
          return mean(div(d, sqrt(add_scalar(mul(d, d), 1e-2))));
        },
        {&x, &y});
    CHECK(err < 1e-4);
  }
  (void)scalarize;
}

TEST_CASE("take: forward and gradient") {
  TensorD table = randn({2, 5}, 95);
  std::vector<int64_t> idx{0, 3, 3, 1};
  TensorD out = take(table, idx);
  CHECK(out.shape() == std::vector<int64_t>{2, 4});
  CHECK(out.data()[1] == doctest::Approx(table.data()[3]));
  TensorD cot = randn({2, 4}, 96);
  double err = gradcheck<double>([&]() { return sum(mul(take(table, idx), cot)); }, {&table});
  CHECK(err < 1e-4);
}

TEST_CASE("resize_bilinear: gradient") {
  TensorD x = randn({1, 2, 4, 4}, 97);
  TensorD cot = randn({1, 2, 8, 8}, 98);
  double err =
      gradcheck<double>([&]() { return sum(mul(resize_bilinear(x, 8, 8), cot)); }, {&x});
  CHECK(err < 1e-4);
}

TEST_CASE("backward: grad of sum is ones; grad of sum(x*x) is 2x") {
  TensorD x = randn({2, 3}, 101);
  x.set_requires_grad(true);
  Tape<double>::get().clear();
  backward(sum(x));
  for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));
  x.zero_grad();

  backward(sum(mul(x, x)));
  for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
  x.zero_grad();
}

TEST_CASE("backward: non-scalar loss is a usage error; tape is cleared") {
  TensorD x = randn({2, 2}, 102);
  x.set_requires_grad(true);
  Tape<double>::get().clear();
  TensorD y = mul(x, x);
  CHECK_THROWS_AS(backward(y), UsageError);
  backward(sum(y));
  CHECK(Tape<double>::get().size() == 0);
  x.zero_grad();
}

TEST_CASE("backward: empty tape is a usage error") {
  Tape<double>::get().clear();
  TensorD loss = TensorD::scalar(1.0);
  CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("adamw: quadratic converges to the analytic minimum") {
  // f(p) = (p - 0.5)^2, minimum at 0.5
  Parameter<double> p(TensorD::scalar(0.0));
  AdamWOptions opt;
  opt.lr = 1e-2;
  for (int step = 0; step < 500; ++step) {
    Tape<double>::get().clear();
    TensorD d = add_scalar(p.t, -0.5);
    backward(sum(mul(d, d)));
    adamw_step<double>({&p}, opt);
  }
  CHECK(std::fabs(p.t.item() - 0.5) < 1e-3);
}

TEST_CASE("adamw: first step magnitude is ~lr; zero grad leaves param unchanged") {
  Parameter<double> p(TensorD::scalar(1.0));
  AdamWOptions opt;
  opt.lr = 1e-3;
  Tape<double>::get().clear();
  backward(mul_scalar(p.t, 0.77));
  adamw_step<double>({&p}, opt);
  CHECK(std::fabs((1.0 - p.t.item()) - opt.lr) < opt.lr * 1e-3);

  // zero grad, zero weight decay, fresh moments: no movement
  Parameter<double> q(TensorD::scalar(0.25));
  q.t.grad_mut();  // all-zero gradient
  adamw_step<double>({&q}, opt);
  CHECK(q.t.item() == doctest::Approx(0.25));

  // missing grad is a usage error
  CHECK_THROWS_AS(adamw_step<double>({&q}, opt), UsageError);
}

TEST_CASE("adamw: moments match parameter shape and steps increase") {
  Rng rng(1);
  Parameter<float> p(TensorF::randn({3, 4}, rng));
  Tape<float>::get().clear();
  backward(sum(p.t));
  adamw_step<float>({&p}, AdamWOptions{});
  CHECK(p.m.size() == 12);
  CHECK(p.v.size() == 12);
  CHECK(p.steps == 1);
}

TEST_CASE("gradcheck sweep: every differentiable op, 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 1009);
    TensorD a = TensorD::randn({2, 3, 4, 4}, rng);
    TensorD b = TensorD::randn({2, 3, 4, 4}, rng);
    TensorD w = TensorD::randn({3, 3, 3, 3}, rng);
    TensorD g = TensorD::randn({4}, rng);
    TensorD bt = TensorD::randn({4}, rng);
    TensorD cot = TensorD::randn({2, 3, 4, 4}, rng);
    double err = gradcheck<double>(
        [&]() {
          TensorD z = conv2d(add(a, mul(b, b)), w, TensorD(), 1, 1);
          z = leaky_relu(z, 0.1);
          TensorD t = layer_norm(reshape(permute(z, {0, 2, 3, 1}), {-1, 4}), g, bt);
          TensorD sm = softmax(t, 1);
          return add(mean(mul(sm, reshape(cot, {-1, 4}))),
                     mean(sigmoid(downsample2x(z))));
        },
        {&a, &b, &w, &g, &bt});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("determinism: identical seeds give bitwise-identical losses, 100 steps") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Parameter<float> w1(TensorF::randn({8, 8}, rng, 0.1f));
    Parameter<float> w2(TensorF::randn({8, 1}, rng, 0.1f));
    TensorF x = TensorF::randn({16, 8}, rng);
    TensorF y = TensorF::randn({16, 1}, rng);
    AdamWOptions opt;
    opt.lr = 1e-2;
    std::vector<float> losses;
    for (int step = 0; step < 100; ++step) {
      Tape<float>::get().clear();
      TensorF pred = matmul(gelu(matmul(x, w1.t)), w2.t);
      TensorF d = sub(pred, y);
      TensorF loss = mean(mul(d, d));
      losses.push_back(loss.item());
      backward(loss);
      adamw_step<float>({&w1, &w2}, opt);
    }
    return losses;
  };
  auto l1 = run(42), l2 = run(42);
  bool identical = true;
  for (size_t i = 0; i < l1.size(); ++i)
    if (l1[i] != l2[i]) identical = false;
  CHECK(identical);
}
