#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ulab/autodiff.hpp"
#include "ulab/grad_check.hpp"
#include "ulab/random.hpp"

using namespace ulab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("square has derivative 2x") {
  Graph<float> g;
  auto x = g.leaf(Tensor::scalar(3.0f), true);
  auto y = mul(x, x);
  g.backward(y);
  CHECK(x.grad().item() == doctest::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient is p - onehot") {
  Graph<double> g;
  TensorD z({1, 4}, std::vector<double>{0.5, -1.0, 2.0, 0.25});
  auto logits = g.leaf(z, true);
  const int target[] = {2};
  g.backward(cross_entropy(logits, std::span<const int>(target)));
  double denom = 0;
  for (double v : z.data()) denom += std::exp(v);
  for (int c = 0; c < 4; ++c) {
    const double p = std::exp(z[c]) / denom;
    CHECK(logits.grad()[c] == doctest::Approx(p - (c == 2 ? 1.0 : 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("sum(A*B) gradient matches a double-precision finite-difference oracle") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);

  Graph<float> g;
  auto va = g.leaf(a, true);
  auto vb = g.leaf(b, true);
  g.backward(sum(matmul(va, vb)));

  // Oracle: plain loops in double, central differences with h = 1e-3.
  auto f = [&](const std::vector<double>& av) {
    double s = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 4; ++k) s += av[i * 4 + k] * static_cast<double>(b.at(k, j));
    return s;
  };
  std::vector<double> av(a.data().begin(), a.data().end());
  const double h = 1e-3;
  double worst = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double orig = av[i];
    av[i] = orig + h;
    const double plus = f(av);
    av[i] = orig - h;
    const double minus = f(av);
    av[i] = orig;
    const double fd = (plus - minus) / (2 * h);
    const double an = va.grad()[i];
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("grad_check named examples") {
  Rng rng(5);
  auto rand_d = [&](std::vector<int> shape) {
    TensorD t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal();
    return t;
  };
  SUBCASE("matmul 2x3 * 3x2") {
    std::vector<TensorD> in = {rand_d({2, 3}), rand_d({3, 2})};
    CHECK(grad_check("matmul", in, 1e-3) <= 1e-4);
  }
  SUBCASE("layer norm over a length-8 vector") {
    std::vector<TensorD> in = {rand_d({1, 8}), rand_d({8}), rand_d({8})};
    CHECK(grad_check("layer_norm", in, 1e-5) <= 1e-4);
  }
  SUBCASE("identity is exact on dyadic inputs") {
    std::vector<TensorD> in = {TensorD({2, 2}, std::vector<double>{1.0, -2.0, 0.5, 4.0})};
    CHECK(grad_check("identity", in, 0.25, 3) == 0.0);
  }
  SUBCASE("unknown op") {
    std::vector<TensorD> in = {rand_d({2, 2})};
    CHECK_THROWS_AS(grad_check("conv2d", in, 1e-3), Error);
  }
}

TEST_CASE("every primitive passes grad_check over 20 seeds") {
  for (const auto& op : grad_check_ops()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto inputs = grad_check_inputs(op, seed);
      worst = std::max(worst, grad_check(op, inputs, 1e-5, seed + 100));
    }
    INFO("op = " << op);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("gradient accumulation is linear") {
  Rng rng(3);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  auto run = [&](int which) {
    Graph<float> g;
    auto va = g.leaf(a, true);
    auto vb = g.leaf(b, true);
    auto s1 = sum(matmul(va, vb));
    auto s2 = sum(mul(va, va));
    Var<float> root = which == 0 ? s1 : which == 1 ? s2 : add(s1, s2);
    g.backward(root);
    return va.grad();
  };
  const Tensor g1 = run(0), g2 = run(1), g12 = run(2);
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-6));
}

TEST_CASE("repeated runs give bit-identical gradients") {
  auto run = [] {
    Rng rng(17);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor gain = random_tensor({6}, rng), bias = random_tensor({6}, rng);
    Graph<float> g;
    auto vx = g.leaf(x, true);
    auto h = gelu(layer_norm(vx, g.leaf(gain, true), g.leaf(bias, true)));
    auto att = causal_softmax(matmul(h, transpose(h)));
    const int targets[] = {0, 1, 2, 3};
    g.backward(cross_entropy(att, std::span<const int>(targets)));
    return vx.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("backward error paths") {
  Graph<float> g;
  auto x = g.leaf(Tensor({2, 2}, 1.0f), true);
  SUBCASE("non-scalar root") { CHECK_THROWS_AS(g.backward(x), Error); }
  SUBCASE("graph consumed") {
    auto s = sum(x);
    g.backward(s);
    CHECK_THROWS_AS(g.backward(s), Error);
    CHECK_THROWS_AS(sum(x), Error);
  }
  SUBCASE("gradient requested before backward") { CHECK_THROWS_AS(x.grad(), Error); }
}

TEST_CASE("non-participating leaves receive zero gradient") {
  Graph<float> g;
  auto used = g.leaf(Tensor({3}, 2.0f), true);
  auto unused = g.leaf(Tensor({2, 2}, 5.0f), true);
  g.backward(sum(used));
  CHECK(unused.grad() == Tensor({2, 2}));
}

TEST_CASE("shape and value errors surface") {
  Graph<float> g;
  auto a = g.leaf(Tensor({2, 3}, 1.0f));
  auto b = g.leaf(Tensor({2, 3}, 1.0f));
  CHECK_THROWS_AS(matmul(a, b), Error);
  CHECK_THROWS_AS(add(a, g.leaf(Tensor({3, 2}))), Error);
  CHECK_THROWS_AS(add_row(a, g.leaf(Tensor({2}))), Error);
  CHECK_THROWS_AS(log(g.leaf(Tensor({2}, -1.0f))), Error);
  auto big = g.leaf(Tensor({1}, 1e30f));
  try {
    mul(mul(big, big), big);
    FAIL("expected non-finite error");
  } catch (const Error& e) {
    CHECK(e.code() == "non_finite");
  }
}

TEST_CASE("causal softmax masks the future") {
  Graph<double> g;
  auto s = g.leaf(TensorD({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto& p = causal_softmax(s).value();
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(1, 2) == 0.0);
  CHECK(p.at(2, 0) + p.at(2, 1) + p.at(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("kl divergence of a distribution with itself is zero") {
  Graph<double> g;
  TensorD z({1, 2}, std::vector<double>{0.0, 0.0});
  TensorD q({1, 2}, std::vector<double>{std::log(0.25), std::log(0.75)});
  CHECK(kl_divergence(g.leaf(z), log_softmax_rows(z)).value().item() == 0.0);
  // KL((0.5, 0.5) || (0.25, 0.75)) = 0.5 ln 2 + 0.5 ln(2/3)
  CHECK(kl_divergence(g.leaf(z), q).value().item() == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)));
}
