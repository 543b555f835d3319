#include "selfens/errors.hpp"
#include "selfens/ops.hpp"
#include "selfens/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace selfens;

namespace {

template <typename T> BasicTensor<T> random_tensor(Shape shape, Rng &rng, double lo = -1, double hi = 1) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto &x : v)
    x = static_cast<T>(rng.uniform(lo, hi));
  return BasicTensor<T>(std::move(shape), std::move(v));
}

// Direct 7-loop convolution with zero padding.
std::vector<double> naive_conv(const Tensor64 &x, const Tensor64 &w) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  std::vector<double> out(static_cast<std::size_t>(B * O * H * W), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t di = -1; di <= 1; ++di)
              for (int64_t dj = -1; dj <= 1; ++dj) {
                const int64_t y = i + di, xx = j + dj;
                if (y < 0 || y >= H || xx < 0 || xx >= W)
                  continue;
                acc += x[static_cast<std::size_t>(((b * C + c) * H + y) * W + xx)] *
                       w[static_cast<std::size_t>(((o * C + c) * 3 + di + 1) * 3 + dj + 1)];
              }
          out[static_cast<std::size_t>(((b * O + o) * H + i) * W + j)] = acc;
        }
  return out;
}

// Central differences of sum(f(x) * r) with respect to x.
template <typename F>
std::vector<double> numeric_grad(const Tensor64 &x, const std::vector<double> &r, F f) {
  std::vector<double> g(static_cast<std::size_t>(x.numel()));
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto eval = [&](double d) {
      std::vector<double> v(x.data().begin(), x.data().end());
      v[i] += d;
      const Tensor64 y = f(Tensor64(x.shape(), v));
      double s = 0.0;
      for (std::size_t k = 0; k < r.size(); ++k)
        s += y[k] * r[k];
      return s;
    };
    g[i] = (eval(h) - eval(-h)) / (2 * h);
  }
  return g;
}

} // namespace

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(1);
  const auto x = random_tensor<double>({2, 3, 6, 5}, rng);
  const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  const Tensor64 y = conv2d(x, w);
  CHECK(y.shape() == Shape{2, 4, 6, 5});
  const auto ref = naive_conv(x, w);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d float path agrees with double") {
  Rng rng(2);
  const auto x = random_tensor<double>({3, 2, 8, 8}, rng);
  const auto w = random_tensor<double>({5, 2, 3, 3}, rng);
  const Tensor xf(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  const Tensor wf(w.shape(), std::vector<float>(w.data().begin(), w.data().end()));
  const auto yd = conv2d(x, w);
  const auto yf = conv2d(xf, wf);
  for (std::size_t i = 0; i < static_cast<std::size_t>(yd.numel()); ++i)
    CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-5).scale(1.0));
}

TEST_CASE("conv2d rejects mismatched channels") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3})), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4}), Tensor::zeros({3, 2, 3, 3})), ShapeError);
}

TEST_CASE("conv2d weight gradient matches finite differences") {
  Rng rng(3);
  const auto x = random_tensor<double>({2, 2, 4, 4}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  w.set_requires_grad(true);
  std::vector<double> r(2 * 3 * 16);
  for (auto &v : r)
    v = rng.uniform(-1, 1);
  backward(sum(mul(conv2d(x, w), Tensor64({2, 3, 4, 4}, r))));
  const auto num = numeric_grad(w.detach(), r, [&](const Tensor64 &ww) { return conv2d(x, ww); });
  for (std::size_t i = 0; i < num.size(); ++i)
    CHECK(w.grad()[i] == doctest::Approx(num[i]).epsilon(1e-6));
}

TEST_CASE("batch norm train mode normalizes each channel") {
  Rng rng(4);
  const auto x = random_tensor<double>({4, 3, 5, 5}, rng, 2.0, 9.0);
  const Tensor64 gamma = Tensor64::full({3}, 1.0), beta = Tensor64::zeros({3});
  BatchNormStats<double> stats(3);
  const auto y = batch_norm_train(x, gamma, beta, stats);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    int n = 0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i, ++n)
        mean += y[static_cast<std::size_t>((b * 3 + c) * 25 + i)];
    mean /= n;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) {
        const double d = y[static_cast<std::size_t>((b * 3 + c) * 25 + i)] - mean;
        sq += d * d;
      }
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(sq / n - 1.0) < 1e-4);
  }
}

TEST_CASE("batch norm running statistics use momentum 0.1 and the unbiased variance") {
  const Tensor64 x(Shape{4, 1}, {1.0, 2.0, 3.0, 6.0});
  BatchNormStats<double> stats(1);
  stats.running_mean = {0.5};
  stats.running_var = {2.0};
  (void)batch_norm_train(x, Tensor64::full({1}, 1.0), Tensor64::zeros({1}), stats);
  // batch mean 3, unbiased variance (4 + 1 + 0 + 9) / 3
  CHECK(stats.running_mean[0] == doctest::Approx(0.9 * 0.5 + 0.1 * 3.0));
  CHECK(stats.running_var[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 14.0 / 3.0));
}

TEST_CASE("batch norm eval mode uses running statistics and leaves them alone") {
  const Tensor64 x(Shape{2, 1}, {1.0, 3.0});
  BatchNormStats<double> stats(1);
  stats.running_mean = {1.0};
  stats.running_var = {4.0};
  const auto y = batch_norm_eval(x, Tensor64::full({1}, 2.0), Tensor64::full({1}, 0.5), stats);
  const double denom = std::sqrt(4.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(2.0 * 2.0 / denom + 0.5));
  CHECK(stats.running_mean[0] == 1.0);
  CHECK(stats.running_var[0] == 4.0);
}

TEST_CASE("relu has zero derivative at zero") {
  Tensor64 x(Shape{3}, {-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  const auto y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[2] == 2.0);
  backward(sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("max pool routes ties to the first element in row-major order") {
  Tensor64 x(Shape{1, 1, 2, 4}, {5, 5, 1, 2, 5, 5, 3, 2});
  x.set_requires_grad(true);
  const auto y = max_pool2(x);
  CHECK(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y[0] == 5.0);
  CHECK(y[1] == 3.0);
  backward(sum(y));
  const std::vector<double> expect{1, 0, 0, 0, 0, 0, 1, 0};
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(x.grad()[i] == expect[i]);
}

TEST_CASE("max pool needs even sides") {
  CHECK_THROWS_AS(max_pool2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("global average pool and dense") {
  const Tensor64 x(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 14});
  const auto g = global_avg_pool(x);
  CHECK(g.shape() == Shape{1, 2});
  CHECK(g[0] == doctest::Approx(2.5));
  CHECK(g[1] == doctest::Approx(11.0));
  const Tensor64 w(Shape{2, 3}, {1, 0, -1, 0.5, 1, 2});
  const auto d = dense(g, w);
  CHECK(d.shape() == Shape{1, 3});
  CHECK(d[0] == doctest::Approx(2.5 + 5.5));
  CHECK(d[1] == doctest::Approx(11.0));
  CHECK(d[2] == doctest::Approx(-2.5 + 22.0));
  CHECK_THROWS_AS(dense(g, Tensor64::zeros({3, 3})), ShapeError);
}

TEST_CASE("softmax is stable for large logits") {
  const Tensor64 z(Shape{2, 2}, {1000.0, 1000.0, -1000.0, 0.0});
  const auto p = softmax(z);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[2] == doctest::Approx(0.0));
  CHECK(p[3] == doctest::Approx(1.0));
}

TEST_CASE("elementwise helpers") {
  const Tensor64 a(Shape{2}, {1, 2}), b(Shape{2}, {3, 5});
  CHECK(add(a, b)[1] == 7);
  CHECK(mul(a, b)[1] == 10);
  CHECK(scale(a, -2.0)[0] == -2);
  CHECK(square(b)[0] == 9);
  CHECK(sum(b).item() == 8);
  CHECK(mean(b).item() == 4);
  CHECK_THROWS_AS(add(a, Tensor64::zeros({3})), ShapeError);
}
