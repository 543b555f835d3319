#include "selfens/errors.hpp"
#include "selfens/network.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace selfens;

TEST_CASE("canonical stack reproduces the per-segment and total parameter counts") {
  const auto layers = canonical_layers(2);
  REQUIRE(layers.size() == 12);
  std::vector<std::int64_t> nonzero;
  std::int64_t total = 0;
  for (const auto &l : layers) {
    const auto n = parameter_count(l);
    total += n;
    if (n)
      nonzero.push_back(n);
  }
  CHECK(nonzero == std::vector<std::int64_t>{288, 9280, 55488, 221568, 295424, 295424, 256});
  CHECK(total == 877728);
  const Network<float> net(layers, 1);
  CHECK(net.count_parameters() == 877728);
  CHECK(count_parameters(net) == 877728);
}

TEST_CASE("parameter count follows the class count") {
  // only the dense layer grows: 128 weights per class
  CHECK(build_canonical(8, 0).count_parameters() == 877728 + 6 * 128);
  CHECK_THROWS_AS(canonical_layers(1), UsageError);
}

TEST_CASE("row descriptions") {
  const auto layers = canonical_layers(2);
  CHECK(describe(layers[0]) == "Conv 3x3, 32 filters");
  CHECK(describe(layers[3]) == "[BN, ReLU, Conv 3x3, 64 filters] x 2");
}

TEST_CASE("shape trace for a 128x128 input") {
  const Network<float> net = build_canonical(2, 0);
  const std::vector<Shape> expect{{2, 32, 128, 128}, {2, 32, 128, 128}, {2, 32, 64, 64},
                                  {2, 64, 64, 64},   {2, 64, 32, 32},   {2, 128, 32, 32},
                                  {2, 128, 16, 16},  {2, 128, 16, 16},  {2, 128, 8, 8},
                                  {2, 128, 8, 8},    {2, 128},          {2, 2}};
  CHECK(net.trace_shapes({2, 1, 128, 128}) == expect);
}

TEST_CASE("actual forward shapes on a small input") {
  const Network<float> net = build_canonical(3, 0);
  const auto shapes = net.forward_shapes(Tensor::zeros({1, 1, 32, 32}));
  REQUIRE(shapes.size() == 12);
  CHECK(shapes.back() == Shape{1, 3});
  CHECK(shapes[9] == Shape{1, 128, 2, 2});
}

TEST_CASE("input validation") {
  Network<float> net = build_canonical(2, 0);
  CHECK_THROWS_AS(net.predict(Tensor::zeros({1, 2, 32, 32})), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor::zeros({1, 1, 24, 24})), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor::zeros({1, 32, 32})), ShapeError);
}

TEST_CASE("initialization ranges") {
  const Network<float> net = build_canonical(2, 42);
  for (const auto &p : net.parameters()) {
    const auto d = p.tensor.data();
    if (p.name.find(".gamma") != std::string::npos) {
      for (float v : d)
        CHECK(v == 1.0f);
    } else if (p.name.find(".beta") != std::string::npos) {
      for (float v : d)
        CHECK(v == 0.0f);
    } else {
      const auto &s = p.tensor.shape();
      const double fan_in = s.size() == 4 ? static_cast<double>(s[1] * 9) : static_cast<double>(s[0]);
      const double bound = std::sqrt(6.0 / fan_in);
      for (float v : d)
        CHECK(std::abs(v) <= bound);
    }
  }
  for (const auto &st : net.batch_norm_stats()) {
    for (float v : st.running_mean)
      CHECK(v == 0.0f);
    for (float v : st.running_var)
      CHECK(v == 1.0f);
  }
}

TEST_CASE("same seed, same weights; copies are deep") {
  const Network<float> a = build_canonical(2, 5), b = build_canonical(2, 5), c = build_canonical(2, 6);
  CHECK(a.parameters()[0].tensor.data()[0] == b.parameters()[0].tensor.data()[0]);
  CHECK(a.parameters()[0].tensor.data()[0] != c.parameters()[0].tensor.data()[0]);
  Network<float> copy = a;
  copy.parameters()[0].tensor.mutable_data()[0] += 1.0f;
  CHECK(copy.parameters()[0].tensor.data()[0] != a.parameters()[0].tensor.data()[0]);
}

TEST_CASE("train-mode forward updates running statistics, eval does not") {
  Network<float> net(tiny_layers(2), 3);
  Rng rng(9);
  std::vector<float> px(2 * 64);
  for (auto &v : px)
    v = static_cast<float>(rng.uniform());
  const Tensor x({2, 1, 8, 8}, px);
  const auto before = net.batch_norm_stats()[0].running_mean;
  (void)net.forward(x, Mode::eval);
  CHECK(net.batch_norm_stats()[0].running_mean == before);
  (void)net.forward(x, Mode::train);
  CHECK(net.batch_norm_stats()[0].running_mean != before);
}

TEST_CASE("checkpoint round trip is exact") {
  testutil::TempDir dir;
  Network<float> net = build_canonical(2, 11);
  net.batch_norm_stats()[1].running_var[3] = 0.25f;
  net.metadata["crop_size"] = "32";
  save_checkpoint(net, dir / "a.ckpt");
  const Network<float> back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.layers() == net.layers());
  CHECK(back.metadata == net.metadata);
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == net.parameters()[i].name);
    const auto x = net.parameters()[i].tensor.data(), y = back.parameters()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
  CHECK(back.batch_norm_stats()[1].running_var[3] == 0.25f);
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(testutil::read_file(dir / "a.ckpt") == testutil::read_file(dir / "b.ckpt"));
}

TEST_CASE("damaged checkpoints are rejected with a named field") {
  testutil::TempDir dir;
  save_checkpoint(Network<float>(tiny_layers(2), 1), dir / "t.ckpt");
  const std::string good = testutil::read_file(dir / "t.ckpt");

  testutil::write_file(dir / "short.ckpt", good.substr(0, good.size() - 10));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "short.ckpt"),
                       doctest::Contains("length mismatch"), DataError);

  std::string flipped = good;
  flipped[flipped.size() / 2] ^= 0x40;
  testutil::write_file(dir / "flip.ckpt", flipped);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "flip.ckpt"), doctest::Contains("checksum"),
                       DataError);

  testutil::write_file(dir / "magic.ckpt", "NOTACKPT" + good.substr(8));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "magic.ckpt"), doctest::Contains("magic"),
                       DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}
