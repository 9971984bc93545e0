// Differentiable operations: forward values against direct loops, gradients
// against central finite differences (double precision).

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <tuple>

#include "firegan/ops.hpp"
#include "support/gradcheck.hpp"

using namespace firegan;
using Catch::Approx;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var<double> probe_loss(const Var<double>& y, std::uint64_t seed) {
  Var<double> w(random_tensor(y.shape(), seed));
  Var<double> weighted = Var<double>::make(
      [&] {
        Tensor<double> p(y.shape());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = y.value()[i] * w.value()[i];
        return p;
      }(),
      {y}, [y, w](const Tensor<double>& g) {
        Tensor<double> r(y.shape());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = g[i] * w.value()[i];
        y.node()->accumulate(r);
      });
  return ops::sum(weighted);
}

// Direct 7-loop convolution used as the forward oracle.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                          std::size_t pad) {
  const std::size_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  Tensor<double> y(Shape{N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                s += x.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                     w.at(o, c, ky, kx);
              }
          y.at(n, o, oy, ox) = s;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d forward matches direct loops", "[ops][conv]") {
  using Case = std::tuple<std::size_t, std::size_t, std::size_t>;
  for (auto [stride, pad, k] : std::array<Case, 4>{Case{1, 0, 3}, Case{2, 1, 4}, Case{2, 2, 5}, Case{1, 2, 5}}) {
    auto x = random_tensor({2, 3, 9, 8}, 1);
    auto w = random_tensor({4, 3, k, k}, 2);
    auto y = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(), stride, pad);
    auto ref = naive_conv(x, w, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(y.value()[i] == Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d", "[ops][conv]") {
  // <conv(x), y> == <x, convT(y)> for the same weights.
  auto x = random_tensor({2, 3, 8, 8}, 3);
  auto w = random_tensor({5, 3, 4, 4}, 4);  // conv: 3 -> 5
  auto cx = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(), 2, 1);
  auto y = random_tensor(cx.shape(), 5);
  auto ty = ops::conv_transpose2d(Var<double>(y), Var<double>(w), Var<double>(), 2, 1);
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx.value()[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty.value()[i];
  REQUIRE(lhs == Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gradients of layer ops match finite differences", "[ops][grad]") {
  Var<double> x(random_tensor({2, 3, 8, 8}, 10), true);
  Var<double> w(random_tensor({4, 3, 4, 4}, 11, 0.3), true);
  Var<double> b(random_tensor({4}, 12), true);
  Var<double> wt(random_tensor({3, 2, 4, 4}, 13, 0.3), true);
  Var<double> gamma(random_tensor({4}, 14), true);
  Var<double> beta(random_tensor({4}, 15), true);

  SECTION("conv2d") {
    auto probes = testing::check_gradients(
        [&] { return probe_loss(ops::conv2d(x, w, b, 2, 1), 99); }, {x, w, b}, 30, 1);
    REQUIRE(testing::max_rel_error(probes) < 1e-6);
  }
  SECTION("conv_transpose2d") {
    auto probes = testing::check_gradients(
        [&] { return probe_loss(ops::conv_transpose2d(x, wt, Var<double>(), 2, 1), 98); },
        {x, wt}, 30, 2);
    REQUIRE(testing::max_rel_error(probes) < 1e-6);
  }
  SECTION("batch_norm with batch statistics") {
    ops::BatchNormState<double> st{Tensor<double>({4}), Tensor<double>({4}, 1.0)};
    auto probes = testing::check_gradients(
        [&] {
          auto h = ops::conv2d(x, w, Var<double>(), 1, 1);
          return probe_loss(ops::batch_norm(h, gamma, beta, st, true, false), 97);
        },
        {x, w, gamma, beta}, 30, 3);
    REQUIRE(testing::max_rel_error(probes) < 1e-5);
  }
  SECTION("batch_norm with running statistics") {
    ops::BatchNormState<double> st{random_tensor({4}, 20), Tensor<double>({4}, 2.0)};
    auto probes = testing::check_gradients(
        [&] {
          auto h = ops::conv2d(x, w, Var<double>(), 1, 1);
          return probe_loss(ops::batch_norm(h, gamma, beta, st, false, false), 96);
        },
        {x, gamma, beta}, 20, 4);
    REQUIRE(testing::max_rel_error(probes) < 1e-6);
  }
  SECTION("activations, concat, slicing, reductions") {
    auto probes = testing::check_gradients(
        [&] {
          auto h = ops::conv2d(x, w, b, 1, 1);
          auto a = ops::leaky_relu(h, 0.2);
          auto t = ops::tanh(h);
          auto c = ops::concat_channels(a, t);
          auto s = ops::slice_batch(ops::concat_batch(c, c), 1, 2);
          auto m = ops::per_sample_mean(ops::square(s));
          return ops::add(ops::sum(ops::sqrt_eps(ops::square(m), 1e-6)),
                          probe_loss(ops::relu(ops::add_scalar(h, 0.1)), 95));
        },
        {x, w, b}, 30, 5);
    REQUIRE(testing::max_rel_error(probes) < 1e-5);
  }
  SECTION("stencil") {
    const std::array<double, 9> lap{0, 1, 0, 1, -4, 1, 0, 1, 0};
    auto probes = testing::check_gradients(
        [&] { return probe_loss(ops::stencil3x3(x, lap), 94); }, {x}, 30, 6);
    REQUIRE(testing::max_rel_error(probes) < 1e-6);
  }
  SECTION("spectral normalization") {
    Tensor<double> u = random_tensor({4}, 30);
    auto probes = testing::check_gradients(
        [&] {
          Tensor<double> uu = u;
          auto wn = ops::spectral_normalize(w, uu, 200, false);
          return probe_loss(ops::conv2d(x, wn, b, 2, 2), 93);
        },
        {w}, 30, 7);
    // The backward pass treats u, v as constants, which is exact once the
    // power iteration has converged.
    REQUIRE(testing::max_rel_error(probes) < 1e-4);
  }
}

TEST_CASE("batch_norm running statistics update", "[ops]") {
  Tensor<double> t(Shape{2, 1, 1, 2}, std::vector<double>{1, 3, 5, 7});
  ops::BatchNormState<double> st{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  Var<double> g(Tensor<double>({1}, 1.0)), b(Tensor<double>({1}));
  auto y = ops::batch_norm(Var<double>(t), g, b, st, true, true);
  // mean 4, unbiased var 20/3
  REQUIRE(st.running_mean[0] == Approx(0.4));
  REQUIRE(st.running_var[0] == Approx(0.9 + 0.1 * 20.0 / 3.0));
  double s = 0;
  for (double v : y.value().values()) s += v;
  REQUIRE(s == Approx(0.0).margin(1e-12));
}

TEST_CASE("no-grad mode records nothing", "[ops][autograd]") {
  Var<double> x(random_tensor({1, 1, 2, 2}, 1), true);
  NoGradGuard guard;
  auto y = ops::square(x);
  REQUIRE_FALSE(y.requires_grad());
}

TEST_CASE("gradients accumulate across shared inputs", "[ops][autograd]") {
  Var<double> x(Tensor<double>(Shape{1}, std::vector<double>{3.0}), true);
  auto y = ops::add(ops::square(x), ops::scale(x, 2.0));  // x^2 + 2x
  backward(y);
  REQUIRE(x.grad()[0] == Approx(8.0));
}
