#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "posemb/errors.hpp"
#include "posemb/gradcheck.hpp"
#include "posemb/ops.hpp"

using namespace posemb;
using testing::random_tensor;

namespace {

// Checks d(loss)/d(p) for every tensor in `params` against central differences.
double worst_relative_error(const std::function<Var(Tape&, std::vector<Var>&)>& build, std::vector<Tensor*> params) {
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* p : params) vars.push_back(tape.parameter(*p));
    tape.backward(build(tape, vars));
  }
  double worst = 0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    const Tensor numeric = finite_diff_grad(
        [&] {
          Tape tape(false);
          std::vector<Var> vars;
          for (Tensor* q : params) vars.push_back(tape.parameter(*q));
          return build(tape, vars).value()[0];
        },
        *p);
    worst = std::max(worst, compare_gradients(analytic, numeric.values()).max_rel_error);
  }
  return worst;
}

// A fixed random weighting turns any output into a scalar with a generic gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, y.tape().constant(w)));
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("matmul examples") {
    Tape tape;
    Rng rng(3);
    const Tensor m = random_tensor({3, 4}, rng);
    const Var out = matmul(tape.constant(Tensor::identity(3)), tape.constant(m));
    CHECK(max_abs_diff(out.value(), m) == 0.0);

    const Var small = matmul(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor::matrix({{0}, {1}})));
    CHECK(small.value().at(0, 0) == 2);
    CHECK(small.value().at(1, 0) == 4);

    CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), DimensionError);
  }

  TEST_CASE("matmul gradient of sum is ones times b transposed") {
    Rng rng(11);
    Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    a.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(matmul(tape.parameter(a), tape.constant(b))));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double expected = 0;
        for (std::size_t c = 0; c < 3; ++c) expected += b.at(j, c);
        CHECK(a.grad()[i * 5 + j] == doctest::Approx(expected).epsilon(1e-12));
      }
    const Tensor numeric = finite_diff_grad(
        [&] {
          Tape t(false);
          return sum(matmul(t.parameter(a), t.constant(b))).value()[0];
        },
        a);
    CHECK(compare_gradients(a.grad(), numeric.values()).max_rel_error < 1e-8);
  }

  TEST_CASE("softmax examples") {
    Tape tape;
    const Var u = softmax_rows(tape.constant(Tensor::matrix({{0, 0, 0}})));
    for (int j = 0; j < 3; ++j) CHECK(u.value()[j] == doctest::Approx(1.0 / 3).epsilon(1e-15));

    const Var big = softmax_rows(tape.constant(Tensor::matrix({{1000, 0}})));
    CHECK(big.value()[0] == 1.0);
    CHECK(big.value()[1] < 1e-300);

    const Var r = softmax_rows(tape.constant(Tensor::matrix({{1, 2, 3}})));
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(r.value()[j] - static_cast<double>(std::exp(static_cast<long double>(j + 1)) / z)) < 1e-15);
  }

  TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
    Rng rng(5);
    for (int seed = 0; seed < 20; ++seed) {
      Tape tape;
      const Tensor x = random_tensor({6, 7}, rng, 5.0);
      Mask mask;
      mask.rows = 6;
      mask.cols = 7;
      mask.allowed.assign(42, 1);
      for (std::size_t r = 0; r < 6; ++r) mask.allowed[r * 7 + (r + 2) % 7] = 0;
      const Tensor y = softmax_rows(tape.constant(x), &mask).value();
      for (std::size_t r = 0; r < 6; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 7; ++c) {
          total += y.at(r, c);
          if (!mask(r, c)) CHECK(y.at(r, c) == 0.0);
          CHECK(y.at(r, c) >= 0.0);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("fully masked softmax row is rejected") {
    Tape tape;
    Mask mask;
    mask.rows = 2;
    mask.cols = 2;
    mask.allowed = {1, 1, 0, 0};
    CHECK_THROWS_AS(softmax_rows(tape.constant(Tensor({2, 2})), &mask), ContractError);
  }

  TEST_CASE("backward examples") {
    Tensor w({2, 3}, 0.5);
    w.set_requires_grad(true);
    {
      Tape tape;
      tape.backward(sum(tape.parameter(w)));
    }
    for (double g : w.grad()) CHECK(g == 1.0);

    Rng rng(2);
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    {
      Tape tape;
      tape.backward(sum(softmax_rows(tape.parameter(x))));
    }
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);

    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.parameter(w)), ContractError);
  }

  TEST_CASE("backward twice without reset doubles gradients") {
    Tensor w = Tensor::vector({1, 2});
    w.set_requires_grad(true);
    Tape tape;
    Var loss = sum(mul(tape.parameter(w), tape.parameter(w)));
    tape.backward(loss);
    CHECK(w.grad()[1] == 4.0);
    tape.backward(loss);
    CHECK(w.grad()[1] == 8.0);
  }

  TEST_CASE("finite differences on analytic functions") {
    Tensor p = Tensor::vector({1, 2});
    const Tensor g = finite_diff_grad([&] { return p[0] * p[0] + p[1] * p[1]; }, p);
    CHECK(std::abs(g[0] - 2) < 1e-8);
    CHECK(std::abs(g[1] - 4) < 1e-8);
    CHECK(p[0] == 1.0);  // restored

    const Tensor h = finite_diff_grad([](const Tensor& q) { return q[0] * q[1]; }, Tensor::vector({3, 5}));
    CHECK(std::abs(h[0] - 5) < 1e-8);
    CHECK(std::abs(h[1] - 3) < 1e-8);

    Tensor bad = Tensor::vector({0.0, 1.0});
    try {
      finite_diff_grad([&] { return bad[1] > 1.0 ? std::nan("") : 0.0; }, bad);
      FAIL("expected an oracle failure");
    } catch (const OracleError& e) {
      CHECK(e.element() == 1);
    }
  }

  TEST_CASE("every differentiable op matches finite differences over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({3, 4}, rng);
      Tensor bias = random_tensor({4}, rng), gain = random_tensor({4}, rng), table = random_tensor({6, 4}, rng);
      const std::uint64_t ws = seed * 31;

      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1]), ws); },
                                 {&a, &b}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(matmul_nt(v[0], v[1]), ws); },
                                 {&a, &c}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(transpose(v[0]), ws); }, {&a}) <
            1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(add(v[0], v[1]), ws); },
                                 {&a, &c}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(sub(v[0], v[1]), ws); },
                                 {&a, &c}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(mul(v[0], v[1]), ws); },
                                 {&a, &c}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(scale(v[0], -1.7), ws); },
                                 {&a}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(add_bias(v[0], v[1]), ws); },
                                 {&a, &bias}) < 1e-6);
      CHECK(worst_relative_error(
                [&](Tape&, std::vector<Var>& v) {
                  std::vector<Var> parts = {v[0], v[1]};
                  return weighted_sum(concat_cols(parts), ws);
                },
                {&a, &c}) < 1e-6);
      CHECK(worst_relative_error(
                [&](Tape&, std::vector<Var>& v) {
                  std::vector<Var> parts = {v[0], v[1]};
                  return weighted_sum(concat_rows(parts), ws);
                },
                {&a, &c}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(slice(v[0], 1, 2, 1, 3), ws); },
                                 {&a}) < 1e-6);
      CHECK(worst_relative_error(
                [&](Tape&, std::vector<Var>& v) {
                  const std::vector<int> ids = {0, 5, 2, 2, 5};
                  return weighted_sum(gather_rows(v[0], ids), ws);
                },
                {&table}) < 1e-6);
      CHECK(worst_relative_error(
                [&](Tape&, std::vector<Var>& v) { return weighted_sum(layer_norm(v[0], v[1], v[2]), ws); },
                {&a, &gain, &bias}) < 1e-4);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(gelu(v[0]), ws); }, {&a}) < 1e-6);
      CHECK(worst_relative_error([&](Tape&, std::vector<Var>& v) { return weighted_sum(softmax_rows(v[0]), ws); },
                                 {&a}) < 1e-5);
      CHECK(worst_relative_error(
                [&](Tape&, std::vector<Var>& v) {
                  const std::vector<int> targets = {1, -1, 3};
                  return cross_entropy_from_logits(v[0], targets);
                },
                {&a}) < 1e-5);
    }
  }

  TEST_CASE("gather rows scatter-adds duplicate indices") {
    Tensor table({4, 2}, 0.0);
    table.set_requires_grad(true);
    Tape tape;
    const std::vector<int> ids = {1, 3, 1, 1};
    tape.backward(sum(gather_rows(tape.parameter(table), ids)));
    CHECK(table.grad()[2] == 3.0);
    CHECK(table.grad()[6] == 1.0);
    CHECK(table.grad()[0] == 0.0);
    CHECK_THROWS_AS(gather_rows(tape.parameter(table), std::vector<int>{4}), InputError);
  }

  TEST_CASE("cross entropy with no targets is rejected") {
    Tape tape;
    CHECK_THROWS_AS(cross_entropy_from_logits(tape.constant(Tensor({2, 3})), std::vector<int>{-1, -1}), ContractError);
  }

  TEST_CASE("non-finite results are errors naming the op") {
    Tape tape;
    Tensor big({1, 1}, 1e200);
    try {
      mul(tape.constant(big), tape.constant(big));
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.op() == "mul");
    }
  }

  TEST_CASE("tape is deterministic") {
    auto run = [] {
      Rng rng(99);
      Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 6}, rng);
      a.set_requires_grad(true);
      Tape tape;
      Var y = softmax_rows(matmul(tape.parameter(a), tape.constant(b)));
      Var loss = weighted_sum(gelu(y), 4);
      tape.backward(loss);
      std::vector<double> out(a.grad().begin(), a.grad().end());
      out.push_back(loss.value()[0]);
      return out;
    };
    CHECK(run() == run());
  }
}
