// Training objectives: hand-computed values, term decomposition, properties
// and gradients through a two-layer toy network.

#include <catch2/catch_amalgamated.hpp>

#include "firegan/losses.hpp"
#include "support/gradcheck.hpp"

using namespace firegan;
using Catch::Approx;

namespace {

Tensor<double> filled(Shape s, double v) {
  Tensor<double> t(std::move(s));
  t.fill(v);
  return t;
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

using V = Var<double>;

// 4-neighbour Laplacian with edge replication, written out directly.
Tensor<double> laplacian(const Tensor<double>& x) {
  Tensor<double> y(x.shape());
  const auto H = static_cast<std::ptrdiff_t>(x.h()), W = static_cast<std::ptrdiff_t>(x.w());
  auto at = [&](std::size_t n, std::size_t c, std::ptrdiff_t r, std::ptrdiff_t q) {
    r = std::clamp<std::ptrdiff_t>(r, 0, H - 1);
    q = std::clamp<std::ptrdiff_t>(q, 0, W - 1);
    return x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
  };
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::ptrdiff_t r = 0; r < H; ++r)
        for (std::ptrdiff_t q = 0; q < W; ++q)
          y.at(n, c, r, q) = at(n, c, r - 1, q) + at(n, c, r + 1, q) + at(n, c, r, q - 1) + at(n, c, r, q + 1) -
                             4 * at(n, c, r, q);
  return y;
}

double sq_dist(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double score_term(const Tensor<double>& scores, double label) {
  const std::size_t n = scores.dim(0), per = scores.size() / n;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0;
    for (std::size_t k = 0; k < per; ++k) m += scores[i * per + k] / per;
    s += (m - label) * (m - label) / n;
  }
  return s;
}

// Two conv layers with a smooth hidden activation.
struct Toy {
  V w1, b1, w2, b2;
  std::size_t stride;
  Toy(std::size_t in, std::size_t hidden, std::size_t out, std::size_t stride, std::uint64_t seed)
      : w1(random_tensor({hidden, in, 3, 3}, seed, -0.4, 0.4), true),
        b1(random_tensor({hidden}, seed + 1, -0.1, 0.1), true),
        w2(random_tensor({out, hidden, 3, 3}, seed + 2, -0.4, 0.4), true),
        b2(random_tensor({out}, seed + 3, -0.1, 0.1), true),
        stride(stride) {}
  V operator()(const V& x) const {
    const V h = ops::tanh(ops::conv2d(x, w1, b1, stride, 1));
    return ops::conv2d(h, w2, b2, stride, 1);
  }
  std::vector<V> params() const { return {w1, b1, w2, b2}; }
};

std::vector<V> join(std::vector<V> a, const std::vector<V>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("gradient map of a constant image is zero", "[losses][gradient]") {
  for (auto op : {GradientOperator::laplacian, GradientOperator::sobel}) {
    const auto g = losses::gradient_map(V(filled({1, 3, 6, 6}, 0.3)), op);
    for (double v : g.value().values()) CHECK(v == Approx(0.0).margin(1e-6));
  }
}

TEST_CASE("laplacian of an impulse is the 4-neighbour stencil", "[losses][gradient]") {
  Tensor<double> x({1, 1, 5, 5});
  x.at(0, 0, 2, 2) = 1.0;
  const auto g = losses::gradient_map(V(x)).value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      double expect = 0;
      if (r == 2 && c == 2) expect = -4;
      else if ((r == 2 && (c == 1 || c == 3)) || (c == 2 && (r == 1 || r == 3))) expect = 1;
      CHECK(g.at(0, 0, r, c) == expect);
    }
}

TEST_CASE("laplacian of a linear ramp vanishes in the interior", "[losses][gradient]") {
  Tensor<double> x({1, 2, 7, 9});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t q = 0; q < 9; ++q) x.at(0, c, r, q) = 0.05 * r - 0.03 * q + 0.1 * c;
  const auto g = losses::gradient_map(V(x)).value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 1; r < 6; ++r)
      for (std::size_t q = 1; q < 8; ++q) CHECK(g.at(0, c, r, q) == Approx(0.0).margin(1e-12));
  const auto ref = laplacian(x);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(g[i] == Approx(ref[i]).margin(1e-12));
}

TEST_CASE("g2 loss on the hand-computed toy", "[losses][g2]") {
  LossWeights w;
  w.gamma = 4.5;
  w.lambda = 1;
  w.xi = 0;
  const V s1(filled({1, 1, 1, 1}, 0.5)), s2(filled({1, 1, 1, 1}, 1.0));
  const V ir(filled({1, 1, 2, 2}, 0.2)), fused(filled({1, 1, 2, 2}, 0.3)), vis(filled({1, 1, 2, 2}, 0.0));
  const auto t = losses::g2_loss(s1, s2, fused, ir, vis, w);
  CHECK(t.total.item() == Approx(1.135).margin(1e-6));
  CHECK(t.adv_d1.item() == Approx(0.25).margin(1e-12));
  CHECK(t.adv_d2.item() == 0.0);
  CHECK(t.content.item() == Approx(0.01).margin(1e-12));

  // The same toy with replicated 3-channel images: per-channel normalization keeps the value.
  const V ir3(filled({1, 3, 2, 2}, 0.2)), fused3(filled({1, 3, 2, 2}, 0.3)), vis3(filled({1, 3, 2, 2}, 0.0));
  CHECK(losses::g2_loss(s1, s2, fused3, ir3, vis3, w).total.item() == Approx(1.135).margin(1e-6));
  w.content_per_channel = false;
  CHECK(losses::g2_loss(s1, s2, fused3, ir3, vis3, w).content.item() == Approx(0.03).margin(1e-12));
}

TEST_CASE("g2 loss is zero when every residual is zero", "[losses][g2]") {
  const LossWeights w;
  const auto img = random_tensor({2, 3, 6, 6}, 5);
  const auto t = losses::g2_loss(V(filled({2, 1, 2, 2}, w.c1_label)), V(filled({2, 1, 2, 2}, w.c2_label)), V(img),
                                 V(img), V(img), w);
  CHECK(t.total.item() == 0.0);
}

TEST_CASE("g2 loss matches a direct computation and decomposes exactly", "[losses][g2]") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    LossWeights w;
    w.gamma = rng.uniform(0.1, 6.0);
    w.lambda = rng.uniform(0.0, 120.0);
    w.xi = rng.uniform(0.0, 2.0);
    w.c1_label = rng.uniform(0.5, 1.0);
    w.c2_label = rng.uniform(0.5, 1.0);
    const std::size_t N = 1 + rng.below(3), C = rng.coin() ? 3 : 1, H = 2 + rng.below(5), W = 2 + rng.below(5);
    const auto d1 = random_tensor({N, 1, 3, 3}, s * 7 + 1), d2 = random_tensor({N, 1, 2, 2}, s * 7 + 2);
    const auto f = random_tensor({N, C, H, W}, s * 7 + 3), r = random_tensor({N, C, H, W}, s * 7 + 4),
               v = random_tensor({N, C, H, W}, s * 7 + 5);
    const auto t = losses::g2_loss(V(d1), V(d2), V(f), V(r), V(v), w);
    const double denom = static_cast<double>(N * H * W * C);
    const double content = w.lambda * (sq_dist(f, r) + w.xi * sq_dist(laplacian(f), laplacian(v))) / denom;
    CHECK(t.adv_d1.item() == Approx(score_term(d1, w.c1_label)).epsilon(1e-9));
    CHECK(t.adv_d2.item() == Approx(score_term(d2, w.c2_label)).epsilon(1e-9));
    CHECK(t.content.item() == Approx(content).epsilon(1e-9).margin(1e-12));
    const double parts = w.gamma * t.adv_d1.item() + t.adv_d2.item() + t.content.item();
    CHECK(std::abs(t.total.item() - parts) <= 1e-6 * std::max(1.0, std::abs(parts)));
    for (const auto* term : {&t.adv_d1, &t.adv_d2, &t.content, &t.total}) CHECK(term->item() >= 0.0);
  }
}

TEST_CASE("g2 loss is linear and nondecreasing in gamma", "[losses][g2]") {
  const auto d1 = random_tensor({2, 1, 3, 3}, 1), d2 = random_tensor({2, 1, 3, 3}, 2);
  const auto f = random_tensor({2, 3, 4, 4}, 3), r = random_tensor({2, 3, 4, 4}, 4), v = random_tensor({2, 3, 4, 4}, 5);
  LossWeights w;
  w.gamma = 1.0;
  const auto t1 = losses::g2_loss(V(d1), V(d2), V(f), V(r), V(v), w);
  w.gamma = 4.5;
  const auto t45 = losses::g2_loss(V(d1), V(d2), V(f), V(r), V(v), w);
  CHECK(t1.total.item() == Approx(t45.total.item() - 3.5 * t45.adv_d1.item()).epsilon(1e-12));
  REQUIRE(t1.adv_d1.item() > 0);
  double last = -1;
  for (double g = 0.25; g < 10; g += 0.5) {
    w.gamma = g;
    const double total = losses::g2_loss(V(d1), V(d2), V(f), V(r), V(v), w).total.item();
    CHECK(total >= last);
    last = total;
  }
}

TEST_CASE("g2 loss rejects mismatched and non-finite inputs", "[losses][g2]") {
  const LossWeights w;
  const auto img = random_tensor({2, 3, 4, 4}, 1);
  const V s(filled({2, 1, 2, 2}, 0.5));
  CHECK_THROWS_AS(losses::g2_loss(V(filled({3, 1, 2, 2}, 0.5)), s, V(img), V(img), V(img), w), ShapeError);
  CHECK_THROWS_AS(losses::g2_loss(s, s, V(img), V(random_tensor({2, 3, 4, 5}, 2)), V(img), w), ShapeError);
  auto bad = img;
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(losses::g2_loss(s, s, V(bad), V(img), V(img), w), NumericError);
}

TEST_CASE("g1 loss values", "[losses][g1]") {
  LossWeights w;
  w.lambda = 1;
  const auto img = random_tensor({2, 3, 4, 4}, 7);
  CHECK(losses::g1_loss(V(filled({2, 1, 2, 2}, w.d2_real_label)), V(img), V(img), w).total.item() == 0.0);

  w.g1_adv_weight = 0;
  const V gen(filled({1, 1, 2, 2}, 0.5)), real(filled({1, 1, 2, 2}, 0.3));
  const auto t = losses::g1_loss(V(filled({1, 1, 1, 1}, 0.1)), gen, real, w);
  CHECK(t.total.item() == Approx(0.04).margin(1e-12));

  w.g1_adv_weight = 1;
  const auto a = losses::g1_loss(V(filled({1, 1, 1, 1}, 0.1)), gen, real, w);
  w.lambda = 2;
  const auto b = losses::g1_loss(V(filled({1, 1, 1, 1}, 0.1)), gen, real, w);
  CHECK(b.content.item() == 2 * a.content.item());
  CHECK(b.adv.item() == a.adv.item());
  CHECK(a.adv.item() == Approx(0.81).margin(1e-12));
  CHECK_THROWS_AS(losses::g1_loss(V(filled({2, 1, 1, 1}, 0.1)), gen, real, w), ShapeError);
}

TEST_CASE("discriminator loss values", "[losses][d]") {
  const LossWeights w;
  CHECK(losses::d1_loss(V(filled({2, 1, 3, 3}, 1.0)), V(filled({2, 1, 3, 3}, 0.0)), w).item() == 0.0);
  CHECK(losses::d1_loss(V(filled({1, 1, 1, 1}, 0.8)), V(filled({1, 1, 1, 1}, 0.3)), w).item() ==
        Approx(0.13).margin(1e-12));
  CHECK(losses::d2_loss(V(filled({1, 1, 1, 1}, 1.0)), V(filled({1, 1, 1, 1}, 0.0)), V(filled({1, 1, 1, 1}, 0.0)), w)
            .item() == 0.0);

  // Equal fake scores collapse d2 to the two-class form.
  const auto real = random_tensor({3, 1, 2, 2}, 8), fake = random_tensor({3, 1, 2, 2}, 9);
  CHECK(losses::d2_loss(V(real), V(fake), V(fake), w).item() ==
        Approx(losses::d1_loss(V(real), V(fake), w).item()).epsilon(1e-12));
  // Otherwise the two fake classes are averaged.
  const auto other = random_tensor({3, 1, 2, 2}, 10);
  const double expect = score_term(real, 1.0) + 0.5 * (score_term(fake, 0.0) + score_term(other, 0.0));
  CHECK(losses::d2_loss(V(real), V(fake), V(other), w).item() == Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(losses::d1_loss(V(real), V(random_tensor({2, 1, 2, 2}, 1)), w), ShapeError);
}

TEST_CASE("loss gradients through a two-layer toy network", "[losses][gradcheck]") {
  LossWeights w;
  w.gamma = 4.5;
  w.lambda = 10;
  const V vis(random_tensor({2, 3, 8, 8}, 21)), ir(random_tensor({2, 3, 8, 8}, 22));
  const Toy g1(3, 4, 3, 1, 100), g2(6, 4, 3, 1, 200), d1(3, 4, 1, 2, 300), d2(3, 4, 1, 2, 400);

  SECTION("g1") {
    auto loss = [&] {
      const V gen = ops::tanh(g1(vis));
      return losses::g1_loss(d2(gen), gen, ir, w).total;
    };
    CHECK(testing::max_rel_error(testing::check_gradients(loss, join(g1.params(), d2.params()), 10, 1)) < 1e-3);
  }
  SECTION("g2 with both operators") {
    for (auto op : {GradientOperator::laplacian, GradientOperator::sobel}) {
      w.gradient_operator = op;
      auto loss = [&] {
        const V fused = ops::tanh(g2(ops::concat_channels(vis, ir)));
        return losses::g2_loss(d1(fused), d2(fused), fused, ir, vis, w).total;
      };
      const auto params = join(g2.params(), join(d1.params(), d2.params()));
      CHECK(testing::max_rel_error(testing::check_gradients(loss, params, 10, 2)) < 1e-3);
    }
  }
  SECTION("d1") {
    const V fused = ops::tanh(g2(ops::concat_channels(vis, ir))).detach();
    auto loss = [&] { return losses::d1_loss(d1(vis), d1(fused), w); };
    CHECK(testing::max_rel_error(testing::check_gradients(loss, d1.params(), 10, 3)) < 1e-3);
  }
  SECTION("d2") {
    const V gen = ops::tanh(g1(vis)).detach();
    const V fused = ops::tanh(g2(ops::concat_channels(vis, gen))).detach();
    auto loss = [&] { return losses::d2_loss(d2(ir), d2(gen), d2(fused), w); };
    CHECK(testing::max_rel_error(testing::check_gradients(loss, d2.params(), 10, 4)) < 1e-3);
  }
}

TEST_CASE("loss weights validate", "[losses]") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  CHECK(w.lambda == 100);
  CHECK(w.xi == 0.5);
  CHECK(w.c1_label == 1.0);
  CHECK(w.c2_label == 1.0);
  CHECK(w.a_label == 0.0);
  w.gamma = 0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = {};
  w.lambda = -1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = {};
  w.c2_label = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(w.validate(), ValidationError);
  CHECK(parse_gradient_operator("sobel") == GradientOperator::sobel);
  CHECK_THROWS_AS(parse_gradient_operator("prewitt"), ValidationError);
}

TEST_CASE("loss report csv and finiteness", "[losses][report]") {
  LossReport r{1, 2, 0.5, 0.25, 1.25, 0.75, 0.125};
  CHECK(LossReport::csv_header() == "step,g1_total,g2_total,g2_adv_d1,g2_adv_d2,g2_content,d1_total,d2_total");
  CHECK(r.csv_row(7) == "7,1,2,0.5,0.25,1.25,0.75,0.125");
  CHECK_NOTHROW(r.check_finite(7));
  r.g2_adv_d2 = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH(r.check_finite(9), "non-finite loss term g2_adv_d2 at step 9");
}
