#include <cmath>
#include <numbers>

#include "doctest.h"
#include "finite_diff.hpp"
#include "lpt/errors.hpp"
#include "lpt/numerics/ops.hpp"

using namespace lpt;
using namespace lpt::ad;
using lpt::testing::numeric_grad;
using lpt::testing::random_tensor;
using lpt::testing::rel_error;

namespace {

using VarFn = std::function<Var(std::span<const Var>)>;

// Checks the reverse-mode gradient of `fn` against central differences at `at`.
void check_gradients(const VarFn& fn, std::vector<Tensor> at, double tol = 1e-6) {
  auto analytic = grad(fn, at);
  auto numeric = numeric_grad(
      [&](std::span<const Tensor> xs) {
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(Var::constant(x));
        return static_cast<double>(fn(vars).value().item());
      },
      at);
  REQUIRE(analytic.size() == numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CAPTURE(i);
    CHECK(rel_error(analytic[i], numeric[i]) <= tol);
  }
}

// Contracts an arbitrary-shaped output with fixed random weights so every
// output element contributes to the checked scalar.
Var contract(const Var& out, std::uint64_t salt) {
  RngStream rng(99, StreamId::init, salt);
  return sum(mul(out, Var::constant(random_tensor(out.shape(), rng))));
}

}  // namespace

TEST_CASE("grad of w^2 at 3 is 6") {
  auto g = grad([](std::span<const Var> v) { return sum(square(v[0])); },
                std::vector<Tensor>{Tensor::scalar(3)});
  CHECK(g[0].item() == doctest::Approx(6.0));
}

TEST_CASE("grad of a constant function is exactly zero") {
  auto g = grad(
      [](std::span<const Var>) { return sum(Var::constant(Tensor(Shape{2}, 5.0))); },
      std::vector<Tensor>{Tensor(Shape{3}, 1.0)});
  for (auto v : g[0].data()) CHECK(v == 0.0);
}

TEST_CASE("unused inputs receive exact zeros") {
  auto g = grad([](std::span<const Var> v) { return sum(square(v[0])); },
                std::vector<Tensor>{Tensor(Shape{2}, 1.0), Tensor(Shape{4}, 2.0)});
  CHECK(g[1].shape() == Shape{4});
  for (auto v : g[1].data()) CHECK(v == 0.0);
}

TEST_CASE("cross-entropy of softmax(Wx+b) matches finite differences on a 4x4 instance") {
  RngStream rng(1, StreamId::init);
  Tensor W = random_tensor({4, 4}, rng), b = random_tensor({4}, rng), x = random_tensor({4, 4}, rng);
  const std::vector<std::int32_t> targets{0, 3, 1, 2};
  check_gradients(
      [&](std::span<const Var> v) { return cross_entropy(linear(v[2], v[0], v[1]), targets); },
      {W, b, x});
}

TEST_CASE("elementwise ops match finite differences, including broadcasting") {
  RngStream rng(2, StreamId::init);
  Tensor a = random_tensor({2, 3, 4}, rng), row = random_tensor({4}, rng);
  Tensor col = random_tensor({3, 1}, rng), same = random_tensor({2, 3, 4}, rng);
  check_gradients([](std::span<const Var> v) { return contract(add(v[0], v[1]), 1); }, {a, row});
  check_gradients([](std::span<const Var> v) { return contract(sub(v[1], v[0]), 2); }, {a, col});
  check_gradients([](std::span<const Var> v) { return contract(mul(v[0], v[1]), 3); }, {a, col});
  check_gradients([](std::span<const Var> v) { return contract(mul(v[0], v[1]), 4); }, {a, same});
  check_gradients([](std::span<const Var> v) { return contract(scale(square(v[0]), -0.3), 5); },
                  {a});
  check_gradients([](std::span<const Var> v) { return contract(add_scalar(v[0], 2.0), 6); }, {a});
  check_gradients([](std::span<const Var> v) { return mean(square(v[0])); }, {a});
  check_gradients([](std::span<const Var> v) { return contract(sum_last(v[0]), 7); }, {a});
}

TEST_CASE("broadcast add gives the documented shapes") {
  Var a = Var::constant(Tensor(Shape{2, 1, 3}, 1.0));
  Var b = Var::constant(Tensor(Shape{4, 1}, 2.0));
  CHECK(add(a, b).shape() == Shape{2, 4, 3});
  CHECK_THROWS_AS(add(Var::constant(Tensor(Shape{2, 3})), Var::constant(Tensor(Shape{4}))),
                  ShapeError);
}

TEST_CASE("layout ops match finite differences") {
  RngStream rng(3, StreamId::init);
  Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 2}, rng);
  check_gradients(
      [](std::span<const Var> v) { return contract(permute(v[0], {2, 0, 1}), 8); }, {a});
  check_gradients(
      [](std::span<const Var> v) { return contract(reshape(v[0], {6, 4}), 9); }, {a});
  check_gradients(
      [](std::span<const Var> v) { return contract(concat_last(v[0], v[1]), 10); }, {a, b});
}

TEST_CASE("permute moves elements to the transposed position") {
  Tensor t(Shape{2, 3}, std::vector<Scalar>{0, 1, 2, 3, 4, 5});
  Var p = permute(Var::constant(t), {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  CHECK(p.value().to_vector() == std::vector<Scalar>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("matmul and bmm match finite differences") {
  RngStream rng(4, StreamId::init);
  Tensor x = random_tensor({2, 5, 3}, rng), w = random_tensor({3, 4}, rng);
  check_gradients([](std::span<const Var> v) { return contract(matmul(v[0], v[1]), 11); },
                  {x, w});
  Tensor a = random_tensor({3, 2, 4}, rng), bn = random_tensor({3, 4, 5}, rng),
         bt = random_tensor({3, 5, 4}, rng);
  check_gradients([](std::span<const Var> v) { return contract(bmm(v[0], v[1]), 12); }, {a, bn});
  check_gradients([](std::span<const Var> v) { return contract(bmm(v[0], v[1], true), 13); },
                  {a, bt});
}

TEST_CASE("matmul rows do not depend on batch composition") {
  RngStream rng(5, StreamId::init);
  Tensor x = random_tensor({7, 13}, rng), w = random_tensor({13, 9}, rng);
  Var full = matmul(Var::constant(x), Var::constant(w));
  for (std::size_t r = 0; r < 7; ++r) {
    Tensor row(Shape{1, 13}, std::vector<Scalar>(x.data().begin() + r * 13,
                                                 x.data().begin() + (r + 1) * 13));
    Var one = matmul(Var::constant(row), Var::constant(w));
    for (std::size_t j = 0; j < 9; ++j) CHECK(one.value()[j] == full.value()[r * 9 + j]);
  }
}

TEST_CASE("nonlinearities and normalisation match finite differences") {
  RngStream rng(6, StreamId::init);
  Tensor a = random_tensor({2, 3, 5}, rng);
  Tensor g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  check_gradients([](std::span<const Var> v) { return contract(gelu(v[0]), 14); }, {a});
  check_gradients([](std::span<const Var> v) { return contract(softmax_last(v[0]), 15); }, {a});
  Tensor sq = random_tensor({2, 4, 4}, rng);
  check_gradients([](std::span<const Var> v) { return contract(softmax_last(v[0], true), 16); },
                  {sq});
  check_gradients([](std::span<const Var> v) { return contract(log_softmax_last(v[0]), 17); },
                  {a});
  check_gradients(
      [](std::span<const Var> v) { return contract(layer_norm(v[0], v[1], v[2]), 18); },
      {a, g, b});
}

TEST_CASE("softmax rows sum to one and the causal mask zeroes the future") {
  RngStream rng(7, StreamId::init);
  Var p = softmax_last(Var::constant(random_tensor({3, 4, 4}, rng, 3.0)), true);
  for (std::size_t r = 0; r < 12; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      total += p.value()[r * 4 + j];
      if (j > r % 4) CHECK(p.value()[r * 4 + j] == 0.0);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("embedding and pick_last match finite differences") {
  RngStream rng(8, StreamId::init);
  Tensor table = random_tensor({5, 3}, rng);
  const std::vector<std::int32_t> ids{4, 0, 4, 2};
  check_gradients([&](std::span<const Var> v) { return contract(embedding(v[0], ids), 19); },
                  {table});
  Tensor a = random_tensor({4, 5}, rng);
  const std::vector<std::int32_t> idx{1, -1, 4, 0};
  check_gradients([&](std::span<const Var> v) { return contract(pick_last(v[0], idx), 20); },
                  {a});
  CHECK_THROWS_AS(embedding(Var::constant(table), std::vector<std::int32_t>{5}), ShapeError);
}

TEST_CASE("conv1d at stride 1 and 2 and its transpose match finite differences") {
  RngStream rng(9, StreamId::init);
  Tensor x = random_tensor({2, 5, 3}, rng), w = random_tensor({3, 3, 4}, rng),
         b = random_tensor({4}, rng);
  check_gradients(
      [](std::span<const Var> v) { return contract(conv1d(v[0], v[1], v[2], 1, 1), 21); },
      {x, w, b});
  check_gradients(
      [](std::span<const Var> v) { return contract(conv1d(v[0], v[1], v[2], 2, 1), 22); },
      {x, w, b});
  Tensor xs = random_tensor({2, 3, 3}, rng);
  check_gradients(
      [](std::span<const Var> v) {
        return contract(conv_transpose1d(v[0], v[1], v[2], 2, 1, 5), 23);
      },
      {xs, w, b});
  check_gradients(
      [](std::span<const Var> v) {
        return contract(conv_transpose1d(v[0], v[1], v[2], 2, 1, 6), 24);
      },
      {xs, w, b});
}

TEST_CASE("conv_transpose1d is the adjoint of conv1d") {
  RngStream rng(10, StreamId::init);
  Tensor x = random_tensor({1, 7, 3}, rng), w = random_tensor({3, 3, 2}, rng);
  Var zero2 = Var::constant(Tensor(Shape{2})), zero3 = Var::constant(Tensor(Shape{3}));
  Var y = conv1d(Var::constant(x), Var::constant(w), zero2, 2, 1);
  CHECK(y.shape() == Shape{1, 4, 2});
  Tensor u = random_tensor(y.shape(), rng);
  // The transpose of a [K, C_in, C_out] kernel reads it as [K, C_out, C_in].
  Tensor wt(Shape{3, 2, 3});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < 2; ++o) wt.mutable_data()[(t * 2 + o) * 3 + i] = w[(t * 3 + i) * 2 + o];
  Var xt = conv_transpose1d(Var::constant(u), Var::constant(wt), zero3, 2, 1, 7);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < u.numel(); ++i) lhs += y.value()[i] * u[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * xt.value()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv_transpose1d rejects incompatible output lengths") {
  Var x = Var::constant(Tensor(Shape{1, 2, 1})), w = Var::constant(Tensor(Shape{3, 1, 1}));
  Var b = Var::constant(Tensor(Shape{1}));
  CHECK_NOTHROW(conv_transpose1d(x, w, b, 2, 1, 3));
  CHECK_NOTHROW(conv_transpose1d(x, w, b, 2, 1, 4));
  CHECK_THROWS_AS(conv_transpose1d(x, w, b, 2, 1, 5), ShapeError);
}

TEST_CASE("gaussian densities match closed form and finite differences") {
  const std::vector<double> var{1.0};
  Var y = Var::constant(Tensor(Shape{1, 1}, 0.7));
  Var at_mean = gaussian_log_density(y, Var::constant(Tensor(Shape{1, 1}, 0.7)), var);
  CHECK(at_mean.value().item() == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  Var off = gaussian_log_density(y, Var::constant(Tensor(Shape{1, 1}, 1.7)), var);
  CHECK(off.value().item() == doctest::Approx(-1.418938533204673));

  RngStream rng(11, StreamId::init);
  Tensor ys = random_tensor({3, 2}, rng), mu = random_tensor({3, 2}, rng);
  const std::vector<double> var2{0.25, 2.0};
  check_gradients(
      [&](std::span<const Var> v) { return sum(gaussian_log_density(v[0], v[1], var2)); },
      {ys, mu});
  Tensor z = random_tensor({3, 4}, rng);
  check_gradients([](std::span<const Var> v) { return contract(std_normal_log_density(v[0]), 25); },
                  {z});
  CHECK(std_normal_log_density(Var::constant(Tensor(Shape{1, 4}))).value()[0] ==
        doctest::Approx(-2.0 * std::log(2 * std::numbers::pi)));
}

TEST_CASE("gradient is linear in the loss") {
  RngStream rng(12, StreamId::init);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
    const double a = rng.normal(), b = rng.normal();
    auto f = [](std::span<const Var> v) { return sum(gelu(matmul(v[0], v[1]))); };
    auto g = [](std::span<const Var> v) { return mean(square(layer_norm(
                                              v[0], Var::constant(Tensor(Shape{4}, 1.0)),
                                              Var::constant(Tensor(Shape{4}, 0.0))))); };
    auto gf = grad(f, std::vector<Tensor>{x, w});
    auto gg = grad(g, std::vector<Tensor>{x, w});
    auto combo = grad(
        [&](std::span<const Var> v) { return add(scale(f(v), a), scale(g(v), b)); },
        std::vector<Tensor>{x, w});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < combo[i].numel(); ++j)
        CHECK(combo[i][j] == doctest::Approx(a * gf[i][j] + b * gg[i][j]).epsilon(1e-12));
  }
}

TEST_CASE("a graph can be differentiated twice with identical results") {
  RngStream rng(13, StreamId::init);
  Var x = Var::leaf(random_tensor({3, 3}, rng));
  Var loss = sum(gelu(matmul(x, x)));
  std::vector<Var> in{x};
  auto g1 = grad(loss, in);
  auto g2 = grad(loss, in);
  CHECK(bitwise_equal(g1[0], g2[0]));
}

TEST_CASE("non-scalar loss and non-finite values are reported") {
  Var x = Var::leaf(Tensor(Shape{2}, 1.0));
  std::vector<Var> in{x};
  CHECK_THROWS_AS(grad(x, in), ShapeError);
  Var big = Var::leaf(Tensor(Shape{1}, 1e200));
  CHECK_THROWS_AS(square(big), NumericError);
}
