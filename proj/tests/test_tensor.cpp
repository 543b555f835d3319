#include "selfens/errors.hpp"
#include "selfens/ops.hpp"
#include "selfens/tensor.hpp"

#include <doctest.h>

using namespace selfens;

TEST_CASE("tensor construction checks the value count") {
  CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  const Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t[4] == 5.0f);
  CHECK(Tensor::zeros({4}).data()[3] == 0.0f);
  CHECK(Tensor::full({2}, 7.0f)[1] == 7.0f);
  CHECK(Tensor::scalar(2.5f).item() == 2.5f);
}

TEST_CASE("item needs a single element") {
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
}

TEST_CASE("op results are read-only; leaves are writable") {
  Tensor a(Shape{2}, {1, 2});
  a.mutable_data()[0] = 3.0f;
  CHECK(a[0] == 3.0f);
  a.set_requires_grad(true);
  const Tensor b = add(a, a);
  Tensor c = b;
  CHECK_THROWS(c.mutable_data());
}

TEST_CASE("backward accumulates into leaves") {
  Tensor64 x(Shape{3}, {1.0, -2.0, 3.0});
  x.set_requires_grad(true);
  const Tensor64 loss = sum(square(x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  backward(sum(square(x)));
  CHECK(x.grad()[2] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
  CHECK(x.grad().empty());
}

TEST_CASE("backward rejects non-scalar and unconnected losses") {
  Tensor64 x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(square(x)), ShapeError);
  const Tensor64 constant(Shape{}, {1.0});
  CHECK_THROWS(backward(constant));
}

TEST_CASE("a shared subexpression receives both gradient paths") {
  Tensor64 x(Shape{1}, {3.0});
  x.set_requires_grad(true);
  const Tensor64 y = mul(x, x);
  backward(sum(add(y, y)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("NoGradGuard stops graph recording") {
  Tensor64 x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor64 y = sum(x);
    CHECK(y.is_leaf());
  }
  CHECK(grad_enabled());
  CHECK_FALSE(sum(x).is_leaf());
  CHECK(sum(x).op_name() == "sum");
}

TEST_CASE("detach drops history but keeps values") {
  Tensor64 x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  const Tensor64 y = scale(x, 2.0).detach();
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
  CHECK(y[1] == 4.0);
}
