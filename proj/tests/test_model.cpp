// Network shapes, determinism, spectral normalization and checkpoints.

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <fstream>

#include "firegan/checkpoint.hpp"
#include "firegan/model.hpp"
#include "support/synthetic.hpp"

using namespace firegan;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

Tensor<float> random_input(Shape s, std::uint64_t seed, double scale = 1.0) {
  Tensor<float> t(std::move(s));
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

NetworkSpec small_g1(bool unet, int depth = 3) {
  NetworkSpec s = NetworkSpec::g1(unet);
  s.depth = depth;
  s.base_filters = 8;
  return s;
}

NetworkSpec small_g2() {
  NetworkSpec s = NetworkSpec::g2();
  s.base_filters = 4;
  return s;
}

NetworkSpec small_d() {
  NetworkSpec s = NetworkSpec::discriminator();
  s.base_filters = 4;
  return s;
}

Tensor<float> run(Network<float>& net, const Tensor<float>& x, ForwardOptions opt = ForwardOptions::eval()) {
  NoGradGuard guard;
  return net.forward(Var<float>(x), opt).value();
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Largest singular value of the weight viewed as out x (in * k * k).
double top_singular_value(const Tensor<float>& w) {
  const auto rows = static_cast<Eigen::Index>(w.dim(0));
  const auto cols = static_cast<Eigen::Index>(w.size() / w.dim(0));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = w[static_cast<std::size_t>(r * cols + c)];
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

TEST_CASE("generators preserve spatial size", "[model][shape]") {
  for (bool unet : {true, false}) {
    auto g1 = build_g1(small_g1(unet), 1);
    CHECK(run(g1, random_input({2, 3, 32, 24}, 2)).shape() == Shape{2, 3, 32, 24});
  }
  auto g2 = build_g2(small_g2(), 3);
  CHECK(run(g2, random_input({2, 6, 20, 26}, 4)).shape() == Shape{2, 3, 20, 26});
}

TEST_CASE("discriminator emits a patch score map", "[model][shape]") {
  auto d = build_discriminator(small_d(), 5);
  CHECK(run(d, random_input({3, 3, 32, 32}, 6)).shape() == Shape{3, 1, 2, 2});
  CHECK(run(d, random_input({1, 3, 64, 48}, 7)).shape() == Shape{1, 1, 4, 3});
}

TEST_CASE("inputs with the wrong channels or size are rejected", "[model][shape]") {
  auto g1 = build_g1(small_g1(true), 1);
  CHECK_THROWS_AS(run(g1, random_input({1, 3, 20, 32}, 1)), ShapeError);
  CHECK_THROWS_WITH(run(g1, random_input({1, 3, 32, 36}, 1)),
                    Catch::Matchers::ContainsSubstring("not divisible by 2^depth = 8"));
  CHECK_THROWS_AS(run(g1, random_input({1, 4, 32, 32}, 1)), ShapeError);
  auto g2 = build_g2(small_g2(), 1);
  CHECK_THROWS_AS(run(g2, random_input({1, 5, 16, 16}, 1)), ShapeError);
  CHECK_THROWS_AS(run(g2, random_input({3, 16, 16}, 1)), ShapeError);
  auto d = build_discriminator(small_d(), 1);
  CHECK_THROWS_AS(run(d, random_input({1, 6, 16, 16}, 1)), ShapeError);
}

TEST_CASE("network specs validate", "[model][spec]") {
  NetworkSpec s = NetworkSpec::g1();
  s.kernel_size = 5;
  CHECK_THROWS_AS(build_g1(s, 0), ValidationError);
  s = NetworkSpec::g2();
  s.kernel_size = 4;
  CHECK_THROWS_AS(build_g2(s, 0), ValidationError);
  s = NetworkSpec::discriminator();
  s.output_channels = 3;
  CHECK_THROWS_AS(build_discriminator(s, 0), ValidationError);
  CHECK_THROWS_AS(build_g2(NetworkSpec::g1(), 0), ValidationError);
  CHECK_THROWS_AS(build_g1(NetworkSpec::discriminator(), 0), ValidationError);
  s = NetworkSpec::g2();
  s.depth = 0;
  CHECK_THROWS_AS(build_g2(s, 0), ValidationError);
  CHECK(parse_kind("g1_encdec") == NetworkKind::g1_encdec);
  CHECK_THROWS_AS(parse_kind("resnet"), ValidationError);
}

TEST_CASE("default discriminator parameter count", "[model][spec]") {
  // conv k5: 3->32->64->128->256 with biases, then a 1x1 score layer.
  const std::size_t expect = (32 * 3 * 25 + 32) + (64 * 32 * 25 + 64) + (128 * 64 * 25 + 128) +
                             (256 * 128 * 25 + 256) + (256 + 1);
  CHECK(build_discriminator(NetworkSpec::discriminator(), 0).parameter_count() == expect);
}

TEST_CASE("generator outputs lie in [-1, 1]", "[model][range]") {
  auto g1 = build_g1(small_g1(true), 11);
  auto g2 = build_g2(small_g2(), 12);
  for (double scale : {1.0, 50.0}) {
    const auto a = run(g1, random_input({2, 3, 16, 16}, 13, scale), ForwardOptions::train());
    const auto b = run(g2, random_input({2, 6, 16, 16}, 14, scale));
    for (float v : a.values()) CHECK((v >= -1.0f && v <= 1.0f));
    for (float v : b.values()) CHECK((v >= -1.0f && v <= 1.0f));
  }
}

TEST_CASE("construction is deterministic in the seed", "[model][determinism]") {
  auto a = build_g2(small_g2(), 42), b = build_g2(small_g2(), 42), c = build_g2(small_g2(), 43);
  const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(same(pa[i].second.value(), pb[i].second.value()));
    any_diff = any_diff || !same(pa[i].second.value(), pc[i].second.value());
  }
  CHECK(any_diff);
}

TEST_CASE("evaluation forward is deterministic and stateless", "[model][determinism]") {
  auto g1 = build_g1(small_g1(true), 3);
  const auto x = random_input({2, 3, 16, 16}, 4);
  const auto y1 = run(g1, x);
  const auto y2 = run(g1, x);
  CHECK(same(y1, y2));
  // A frozen training pass leaves the running statistics untouched.
  run(g1, x, ForwardOptions::train_frozen());
  CHECK(same(run(g1, x), y1));
  // An updating pass moves them.
  run(g1, x, ForwardOptions::train());
  CHECK_FALSE(same(run(g1, x), y1));
}

TEST_CASE("u-net and encoder-decoder differ", "[model][unet]") {
  auto u = build_g1(small_g1(true), 9);
  auto e = build_g1(small_g1(false), 9);
  CHECK(u.parameter_count() > e.parameter_count());
  const auto x = random_input({1, 3, 16, 16}, 10);
  CHECK_FALSE(same(run(u, x), run(e, x)));
}

TEST_CASE("u-net skip connections reach the output", "[model][unet]") {
  auto u = build_g1(small_g1(true, 3), 9);
  const auto x = random_input({1, 3, 16, 16}, 10);
  const auto base = run(u, x);
  for (int j = 0; j < 2; ++j) {
    ForwardOptions opt = ForwardOptions::eval();
    opt.zeroed_skip = j;
    CHECK_FALSE(same(run(u, x, opt), base));
  }
  // Encoder-decoder has no skips to zero.
  auto e = build_g1(small_g1(false, 3), 9);
  ForwardOptions opt = ForwardOptions::eval();
  opt.zeroed_skip = 0;
  CHECK(same(run(e, x, opt), run(e, x)));
}

TEST_CASE("fusion generator depends on both inputs", "[model][g2]") {
  auto g2 = build_g2(small_g2(), 21);
  const Image vis = testing::random_model(16, 16, 3, 1);
  const Image ir_a = testing::random_model(16, 16, 1, 2), ir_b = testing::random_model(16, 16, 1, 3);
  const Image fa = fuse(g2, vis, ir_a), fb = fuse(g2, vis, ir_b);
  CHECK(fa.channels() == 3);
  CHECK(fa.domain() == Domain::model_signed);
  CHECK(fa.values() != fb.values());
  CHECK(fuse(g2, testing::random_model(16, 16, 3, 9), ir_a).values() != fa.values());

  // fuse replicates a 1-channel infrared image before concatenation.
  Tensor<float> x = ops::concat_channels(Var<float>(to_tensor<float>(vis)),
                                         Var<float>(to_tensor<float>(replicate_to_rgb(ir_a))))
                        .value();
  const Image direct = from_tensor(run(g2, x), 0, Domain::model_signed);
  CHECK(direct.values() == fa.values());

  CHECK_THROWS_AS(fuse(g2, vis, testing::random_model(8, 16, 1, 2)), ShapeError);
  CHECK_THROWS_AS(fuse(g2, testing::random_u8(16, 16, 3, 1), ir_a), DomainError);
}

TEST_CASE("generate_ir checks its input", "[model][g1]") {
  auto g1 = build_g1(small_g1(true, 2), 1);
  const Image out = generate_ir(g1, testing::random_model(8, 8, 3, 1));
  CHECK(out.height() == 8);
  CHECK(out.channels() == 3);
  CHECK_THROWS_AS(generate_ir(g1, testing::random_u8(8, 8, 3, 1)), DomainError);
  CHECK_THROWS_AS(generate_ir(g1, testing::random_model(8, 8, 1, 1)), ShapeError);
  CHECK_THROWS_AS(generate_ir(g1, testing::random_model(10, 8, 3, 1)), ShapeError);
}

TEST_CASE("spectral normalization bounds every discriminator layer", "[model][sn]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto d = build_discriminator(NetworkSpec::discriminator(), seed);
    for (std::size_t l = 0; l < d.layers().size(); ++l) {
      INFO("seed " << seed << " layer " << d.layers()[l].name);
      REQUIRE(d.layers()[l].spectral);
      const double s = top_singular_value(d.effective_weight(l, 5));
      CHECK(s >= 0.95);
      CHECK(s <= 1.05);
    }
  }
}

TEST_CASE("spectral normalization off returns the raw weight", "[model][sn]") {
  NetworkSpec s = small_d();
  s.use_spectral_norm = false;
  auto d = build_discriminator(s, 4);
  CHECK(d.named_buffers().empty());
  CHECK(same(d.effective_weight(0, 5), d.layers()[0].weight.value()));
  CHECK(top_singular_value(d.layers()[0].weight.value()) < 0.9);
}

TEST_CASE("training passes advance the singular vectors", "[model][sn]") {
  auto d = build_discriminator(small_d(), 8);
  const Tensor<float> u0 = *d.named_buffers()[0].second;
  run(d, random_input({1, 3, 16, 16}, 1), ForwardOptions::eval());
  CHECK(same(*d.named_buffers()[0].second, u0));
  run(d, random_input({1, 3, 16, 16}, 1), ForwardOptions::train());
  CHECK_FALSE(same(*d.named_buffers()[0].second, u0));
  const double s = top_singular_value(d.effective_weight(0, 5));
  CHECK(s == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("checkpoint round trip is bit-exact", "[model][checkpoint]") {
  TempDir dir("ckpt");
  for (auto spec : {small_g1(true), small_g1(false), small_g2(), small_d()}) {
    Network<float> net(spec, 77);
    const auto x = random_input({2, static_cast<std::size_t>(spec.input_channels()), 16, 16}, 5);
    run(net, x, ForwardOptions::train());  // move running stats and spectral vectors
    const auto path = dir / kind_name(spec.kind);
    checkpoint::save_network(path, net);
    auto back = checkpoint::load_network<float>(path);
    CHECK(back.spec() == spec);
    const auto pa = net.named_parameters(), pb = back.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same(pa[i].second.value(), pb[i].second.value()));
    const auto ba = net.named_buffers(), bb = back.named_buffers();
    REQUIRE(ba.size() == bb.size());
    for (std::size_t i = 0; i < ba.size(); ++i) CHECK(same(*ba[i].second, *bb[i].second));
    CHECK(same(run(net, x), run(back, x)));
  }
}

TEST_CASE("damaged checkpoints are rejected", "[model][checkpoint]") {
  TempDir dir("ckpt_bad");
  auto net = build_g2(small_g2(), 1);
  const auto path = dir / "g2";
  checkpoint::save_network(path, net);
  const auto blob = path / checkpoint::blob_file("conv1.weight");
  REQUIRE(fs::exists(blob));

  SECTION("missing directory") {
    CHECK_THROWS_AS(checkpoint::load_network<float>(dir / "nope"), IoError);
  }
  SECTION("truncated blob") {
    fs::resize_file(blob, fs::file_size(blob) - 4);
    CHECK_THROWS_AS(checkpoint::load_network<float>(path), DataError);
  }
  SECTION("overlong blob") {
    std::ofstream(blob, std::ios::app | std::ios::binary).put('x');
    CHECK_THROWS_AS(checkpoint::load_network<float>(path), DataError);
  }
  SECTION("non-finite value") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.write(reinterpret_cast<const char*>(&nan), sizeof nan);
    f.close();
    CHECK_THROWS_AS(checkpoint::load_network<float>(path), NumericError);
  }
  SECTION("spec mismatch") {
    NetworkSpec other = small_g2();
    other.base_filters = 8;
    Network<float> wider(other, 1);
    CHECK_THROWS_AS(checkpoint::load_into(path, wider), DataError);
  }
  SECTION("missing blob") {
    fs::remove(blob);
    CHECK_THROWS_AS(checkpoint::load_network<float>(path), IoError);
  }
}
