#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "prod/common.hpp"
#include "prod/rng.hpp"
#include "prod/tensor.hpp"

using namespace prod;

namespace {

// Independent scalar triple-loop product, kept free of the library path.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

std::vector<double> random_values(std::size_t n, RngStream& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_gaussian(0.0, scale);
  return v;
}

std::vector<double> random_distribution(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  double sum = 0.0;
  for (double& x : v) {
    x = rng.next_double() + 1e-3;
    sum += x;
  }
  for (double& x : v) x /= sum;
  return v;
}

}  // namespace

TEST_CASE("tensor shape and invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), ContractError);
  Tensor t({2, 2}, {1, 2, 3, 4}, true);
  CHECK(t.size() == 4);
  CHECK(t.grad().size() == 4);
  CHECK_THROWS_AS(Tensor::scalar(2.0).grad(), ContractError);
}

TEST_CASE("matmul identity case") {
  Tape tape;
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(tape, eye, a);
  CHECK(c.values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul orthogonal rows") {
  Tape tape;
  Tensor a({1, 2}, {1, 0});
  Tensor b({2, 1}, {0, 5});
  CHECK(matmul(tape, a, b).values()[0] == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  RngStream rng(7);
  const std::size_t m = 3, k = 4, n = 2;
  const auto av = random_values(m * k, rng);
  const auto bv = random_values(k * n, rng);
  Tape tape;
  Tensor c = matmul(tape, Tensor({m, k}, av), Tensor({k, n}, bv));
  const auto expected = matmul_oracle(av, bv, m, k, n);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(c.values()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul rejects dimension mismatch") {
  Tape tape;
  CHECK_THROWS_AS(matmul(tape, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor({2, 2}, {1, 2, 3, 4})),
                  ShapeError);
}

TEST_CASE("softmax_temp uniform scores") {
  Tape tape;
  for (double tau : {0.5, 1.0, 4.0}) {
    Distribution d = softmax_temp(tape, Tensor({4}, {3.3, 3.3, 3.3, 3.3}), tau);
    for (double p : d.values()) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("softmax_temp analytic two-point case") {
  Tape tape;
  Distribution d = softmax_temp(tape, Tensor({2}, {std::log(3.0), 0.0}), 1.0);
  CHECK(d.values()[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(d.values()[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax_temp preserves argmax and sums to one") {
  RngStream rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto scores = random_values(8, rng, 2.0);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
      if (scores[i] > scores[argmax]) argmax = i;
    }
    for (double tau : {0.5, 1.0, 4.0}) {
      Tape tape;
      Distribution d = softmax_temp(tape, Tensor({scores.size()}, scores), tau);
      double sum = 0.0;
      std::size_t dmax = 0;
      for (std::size_t i = 0; i < d.values().size(); ++i) {
        sum += d.values()[i];
        if (d.values()[i] > d.values()[dmax]) dmax = i;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(dmax == argmax);
    }
  }
}

TEST_CASE("softmax_temp rejects nonpositive tau") {
  Tape tape;
  CHECK_THROWS_AS(softmax_temp(tape, Tensor({2}, {1.0, 2.0}), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_temp(tape, Tensor({2}, {1.0, 2.0}), -1.0), ParameterError);
}

TEST_CASE("kl_divergence identical distributions is zero") {
  Tape tape;
  Distribution p{Tensor({2}, {0.5, 0.5})};
  CHECK(kl_divergence(tape, p, p).item() == 0.0);
}

TEST_CASE("kl_divergence analytic value") {
  Tape tape;
  Distribution p{Tensor({2}, {1.0, 0.0})};
  Distribution q{Tensor({2}, {0.5, 0.5})};
  CHECK(kl_divergence(tape, p, q).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl_divergence nonnegative on random pairs") {
  RngStream rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    Tape tape;
    Distribution p{Tensor({6}, random_distribution(6, rng))};
    Distribution q{Tensor({6}, random_distribution(6, rng))};
    CHECK(kl_divergence(tape, p, q).item() >= -1e-12);
  }
}

TEST_CASE("kl_divergence rejects support mismatch") {
  Tape tape;
  Distribution p{Tensor({2}, {0.5, 0.5})};
  Distribution q{Tensor({3}, {0.4, 0.3, 0.3})};
  CHECK_THROWS_AS(kl_divergence(tape, p, q), ShapeError);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape tape;
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor loss = sum(tape, x);
  backward(loss, tape);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = scale(tape, x, 2.0);
  CHECK_THROWS_AS(backward(y, tape), ContractError);
}

TEST_CASE("backward of KL(const, softmax(x)) matches finite differences") {
  RngStream rng(17);
  const std::size_t n = 8;
  const auto p_vals = random_distribution(n, rng);
  const auto x_init = random_values(n, rng);
  Tensor x({n}, x_init, true);

  auto f = [&](Tape& tape) {
    Distribution p{Tensor({n}, p_vals)};
    Distribution q = softmax_temp(tape, x, 1.0);
    return kl_divergence(tape, p, q);
  };
  const double err = gradient_check(f, {x}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("backward is deterministic after grad reset") {
  RngStream rng(19);
  Tensor x({4}, random_values(4, rng), true);
  auto run = [&]() {
    x.zero_grad();
    Tape tape;
    Distribution q = softmax_temp(tape, x, 2.0);
    Distribution p{Tensor({4}, {0.4, 0.3, 0.2, 0.1})};
    Tensor loss = kl_divergence(tape, p, q);
    backward(loss, tape);
    return x.grad();
  };
  const auto g1 = run();
  const auto g2 = run();
  CHECK(g1 == g2);  // bit-identical
}

TEST_CASE("gradient_check on a quadratic is exact to roundoff") {
  RngStream rng(23);
  Tensor x({5}, random_values(5, rng), true);
  auto f = [&](Tape& tape) { return sum(tape, mul(tape, x, x)); };
  CHECK(gradient_check(f, {x}, 1e-4) < 1e-8);
}

TEST_CASE("gradient_check on a constant function") {
  Tensor x({3}, {1.0, 2.0, 3.0}, true);
  auto f = [&](Tape&) { return Tensor::scalar(5.0, false); };
  // Analytic and numeric gradients are both zero; max error is zero.
  CHECK(gradient_check(f, {x}, 1e-5) == 0.0);
}

TEST_CASE("gradient_check rejects eps outside range") {
  Tensor x({1}, {1.0}, true);
  auto f = [&](Tape& tape) { return sum(tape, x); };
  CHECK_THROWS_AS(gradient_check(f, {x}, 1e-8), ParameterError);
  CHECK_THROWS_AS(gradient_check(f, {x}, 1e-2), ParameterError);
}

TEST_CASE("elementwise ops pass gradient checks on random seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed + 100);
    Tensor a({6}, random_values(6, rng), true);
    Tensor b({6}, random_values(6, rng), true);
    Tensor m({3, 4}, random_values(12, rng), true);
    Tensor w({4, 2}, random_values(8, rng), true);
    Tensor bias({2}, random_values(2, rng), true);
    auto f = [&](Tape& tape) {
      Tensor prod_ab = mul(tape, a, b);
      Tensor t = tanh_op(tape, prod_ab);
      Tensor s1 = dot(tape, t, add(tape, a, b));
      Tensor h = add_rowvec(tape, matmul(tape, m, w), bias);
      Tensor pooled = mean_rows(tape, h);
      Tensor s2 = sum(tape, tanh_op(tape, pooled));
      return weighted_sum(tape, {{1.0, s1}, {0.5, s2}});
    };
    CHECK(gradient_check(f, {a, b, m, w, bias}, 1e-5) < 1e-4);
  }
}

TEST_CASE("neg_log_softmax_at matches direct softmax computation") {
  RngStream rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto scores = random_values(7, rng, 3.0);
    Tape tape;
    Tensor loss = neg_log_softmax_at(tape, Tensor({7}, scores), 0);
    double max_s = scores[0];
    for (double s : scores) max_s = std::max(max_s, s);
    double z = 0.0;
    for (double s : scores) z += std::exp(s - max_s);
    const double expected = -(scores[0] - max_s - std::log(z));
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("embedding lookup routes gradients to looked-up rows only") {
  Tensor table({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  Tape tape;
  Tensor rows = embedding_lookup(tape, table, {2, 2, 0});
  Tensor loss = sum(tape, rows);
  backward(loss, tape);
  const auto& g = table.grad();
  CHECK(g[0] == 1.0);  // row 0 hit once
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);  // row 1 untouched
  CHECK(g[4] == 2.0);  // row 2 hit twice
  CHECK(g[5] == 2.0);
}
