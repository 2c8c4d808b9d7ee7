#include <doctest.h>

#include <cmath>

#include "otmatch/grad_check.hpp"
#include "otmatch/ot.hpp"
#include "otmatch/rng.hpp"

using namespace otmatch;

namespace {

Matrix random_embeddings(Rng& rng, std::size_t rows, std::size_t d) {
  Matrix m(rows, d);
  for (double& x : m.data) x = rng.normal();
  return m;
}

Matrix random_cost(Rng& rng, std::size_t n, std::size_t m) {
  Matrix c(n, m);
  for (double& x : c.data) x = rng.uniform(0.0, 2.0);
  return c;
}

std::vector<double> random_marginals(Rng& rng, std::size_t n) {
  std::vector<double> u(n);
  double s = 0.0;
  for (double& x : u) {
    x = 0.2 + rng.uniform();
    s += x;
  }
  for (double& x : u) x /= s;
  return u;
}

}  // namespace

TEST_CASE("cosine cost hand cases") {
  Matrix p = Matrix::from_rows({{1, 0}});
  CHECK(cosine_cost(p, Matrix::from_rows({{1, 0}})).values.at(0, 0) ==
        doctest::Approx(0.0));
  CHECK(cosine_cost(p, Matrix::from_rows({{0, 1}})).values.at(0, 0) ==
        doctest::Approx(1.0));
  CHECK(cosine_cost(p, Matrix::from_rows({{-1, 0}})).values.at(0, 0) ==
        doctest::Approx(2.0));
}

TEST_CASE("cosine cost flags zero-norm rows and scores them at cost 1") {
  Matrix p = Matrix::from_rows({{0, 0}, {1, 0}});
  Matrix w = Matrix::from_rows({{1, 0}});
  CostMatrix c = cosine_cost(p, w);
  CHECK(c.had_zero_norm);
  CHECK(c.values.at(0, 0) == 1.0);
  CHECK(c.values.at(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("uniform marginals") {
  auto [u, v] = uniform_marginals(4, 2);
  for (double x : u) CHECK(x == 0.25);
  CHECK(v == std::vector<double>{0.5, 0.5});
  auto [u1, v1] = uniform_marginals(1, 7);
  CHECK(u1 == std::vector<double>{1.0});
  for (std::size_t n : {2, 3, 5, 9}) {
    auto [uu, vv] = uniform_marginals(n, n + 1);
    double su = 0.0, sv = 0.0;
    for (double x : uu) su += x;
    for (double x : vv) sv += x;
    CHECK(su == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sv == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sinkhorn on a 1x1 problem returns the forced plan") {
  Matrix c(1, 1, 0.37);
  TransportPlan plan = sinkhorn(c, {1.0}, {1.0}, SinkhornConfig{});
  CHECK(plan.flow.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plan.cost == doctest::Approx(0.37).epsilon(1e-12));
  CHECK(plan.converged);
}

TEST_CASE("sinkhorn on a constant cost converges to the product coupling") {
  Matrix c(3, 2, 0.8);
  auto [u, v] = uniform_marginals(3, 2);
  TransportPlan plan = sinkhorn(c, u, v, SinkhornConfig{});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(plan.flow.at(i, j) == doctest::Approx(u[i] * v[j]).epsilon(1e-9));
}

TEST_CASE("sinkhorn approaches the exact optimum on the swap matrix") {
  Matrix c = Matrix::from_rows({{0, 1}, {1, 0}});
  auto [u, v] = uniform_marginals(2, 2);
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.max_iters = 10000;
  cfg.marginal_tol = 1e-9;
  TransportPlan plan = sinkhorn(c, u, v, cfg);
  CHECK(exact_emd_oracle(c, u, v) == doctest::Approx(0.0));
  CHECK(plan.cost == doctest::Approx(0.0).epsilon(5e-3));
}

TEST_CASE("sinkhorn rejects bad inputs") {
  Matrix c(2, 2, 1.0);
  SinkhornConfig cfg;
  CHECK_THROWS_AS(sinkhorn(c, {0.5, 0.5}, {1.0}, cfg), DimensionError);
  CHECK_THROWS_AS(sinkhorn(c, {0.5, 0.5}, {0.9, 0.2}, cfg), ConfigError);
  CHECK_THROWS_AS(sinkhorn(c, {1.0, 0.0}, {0.5, 0.5}, cfg), ConfigError);
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(sinkhorn(c, {0.5, 0.5}, {0.5, 0.5}, cfg), ConfigError);
}

TEST_CASE("returned plans are feasible on random instances") {
  Rng rng(5);
  SinkhornConfig cfg;
  cfg.marginal_tol = 1e-8;
  cfg.max_iters = 20000;
  for (int it = 0; it < 25; ++it) {
    const std::size_t n = 1 + rng.below(8), m = 1 + rng.below(8);
    Matrix c = random_cost(rng, n, m);
    auto [u, v] = uniform_marginals(n, m);
    TransportPlan plan = sinkhorn(c, u, v, cfg);
    CHECK(plan.converged);
    CHECK(plan.marginal_violation <= 1e-6);
    for (double x : plan.flow.data) CHECK(x >= 0.0);
  }
}

TEST_CASE("exact oracle hand cases") {
  CHECK(exact_emd_oracle(Matrix(1, 1, 0.42), {1.0}, {1.0}) ==
        doctest::Approx(0.42));
  Matrix swap = Matrix::from_rows({{0, 1}, {1, 0}});
  CHECK(exact_emd_oracle(swap, {0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(0.0));
  // Degenerate tie: the off-diagonal and diagonal bases both cost 2.5.
  Matrix tie = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(exact_emd_oracle(tie, {0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(exact_emd_oracle(Matrix(6, 5, 1.0),
                                   std::vector<double>(6, 1.0 / 6),
                                   std::vector<double>(5, 0.2)),
                  ConfigError);
}

TEST_CASE("oracle lower-bounds the entropic cost; gap shrinks with epsilon") {
  Rng rng(77);
  for (int inst = 0; inst < 8; ++inst) {
    const std::size_t n = 2 + rng.below(4);           // 2..5
    const std::size_t m = 2 + rng.below(25 / n - 1);  // keep n*m <= 25
    Matrix c = random_cost(rng, n, m);
    std::vector<double> u = random_marginals(rng, n);
    std::vector<double> v = random_marginals(rng, m);
    const double exact = exact_emd_oracle(c, u, v);

    double prev_gap = std::numeric_limits<double>::infinity();
    for (double eps : {0.5, 0.1, 0.02}) {
      SinkhornConfig cfg;
      cfg.epsilon = eps;
      cfg.max_iters = 100000;
      cfg.marginal_tol = 1e-10;
      TransportPlan plan = sinkhorn(c, u, v, cfg);
      REQUIRE(plan.converged);
      const double gap = plan.cost - exact;
      CHECK(gap >= -1e-9);  // any feasible plan costs at least the optimum
      CHECK(gap <= prev_gap + 1e-9);
      prev_gap = gap;
    }
  }
}

TEST_CASE("emd similarity trivial values and range") {
  Matrix one = Matrix::from_rows({{0.3, 0.4}});
  SinkhornConfig cfg;
  CHECK(emd_similarity(one, one, cfg) == doctest::Approx(0.0));

  Matrix opp = Matrix::from_rows({{-0.3, -0.4}});
  CHECK(emd_similarity(one, opp, cfg) == doctest::Approx(-2.0));

  Rng rng(9);
  for (int it = 0; it < 10; ++it) {
    Matrix p = random_embeddings(rng, 1 + rng.below(4), 6);
    Matrix w = random_embeddings(rng, 1 + rng.below(6), 6);
    const double r = emd_similarity(p, w, cfg);
    CHECK(r <= 0.0);
    CHECK(r >= -2.0);
  }
}

TEST_CASE("emd similarity tracks the exact optimum within the entropic bound") {
  Rng rng(13);
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  cfg.max_iters = 50000;
  cfg.marginal_tol = 1e-9;
  for (int it = 0; it < 10; ++it) {
    Matrix p = random_embeddings(rng, 3, 8);
    Matrix w = random_embeddings(rng, 4, 8);
    const double r = emd_similarity(p, w, cfg);
    CostMatrix c = cosine_cost(p, w);
    auto [u, v] = uniform_marginals(3, 4);
    const double exact = exact_emd_oracle(c.values, u, v);
    CHECK(std::fabs(r + exact) <= cfg.epsilon * (1.0 + std::log(12.0)));
  }
}

TEST_CASE("swapping operand sets preserves the score, transposes the plan") {
  Rng rng(17);
  SinkhornConfig cfg;
  cfg.marginal_tol = 1e-9;
  cfg.max_iters = 20000;
  for (int it = 0; it < 6; ++it) {
    Matrix p = random_embeddings(rng, 2 + rng.below(3), 5);
    Matrix w = random_embeddings(rng, 2 + rng.below(4), 5);
    TransportPlan ab, ba;
    const double r1 = emd_similarity(p, w, cfg, &ab);
    const double r2 = emd_similarity(w, p, cfg, &ba);
    CHECK(r1 == doctest::Approx(r2).epsilon(1e-8));
    REQUIRE(ab.flow.rows == ba.flow.cols);
    for (std::size_t i = 0; i < ab.flow.rows; ++i)
      for (std::size_t j = 0; j < ab.flow.cols; ++j)
        CHECK(ab.flow.at(i, j) ==
              doctest::Approx(ba.flow.at(j, i)).epsilon(1e-8));
  }
}

TEST_CASE("score is exactly invariant under power-of-two rescaling") {
  Rng rng(23);
  Matrix p = random_embeddings(rng, 3, 6);
  Matrix w = random_embeddings(rng, 5, 6);
  Matrix p2 = p, w2 = w;
  // Power-of-two scalings commute exactly with the cosine normalization.
  const double scales[3] = {0.5, 8.0, 0x1p-10};
  for (std::size_t i = 0; i < p2.rows; ++i)
    for (std::size_t k = 0; k < p2.cols; ++k) p2.at(i, k) *= scales[i % 3];
  for (std::size_t j = 0; j < w2.rows; ++j)
    for (std::size_t k = 0; k < w2.cols; ++k) w2.at(j, k) *= scales[j % 3];
  CHECK(cosine_cost(p, w).values == cosine_cost(p2, w2).values);
  SinkhornConfig cfg;
  CHECK(emd_similarity(p, w, cfg) == emd_similarity(p2, w2, cfg));
}

TEST_CASE("score is invariant under arbitrary positive rescaling") {
  Rng rng(29);
  Matrix p = random_embeddings(rng, 2, 5);
  Matrix w = random_embeddings(rng, 3, 5);
  Matrix p2 = p, w2 = w;
  for (std::size_t i = 0; i < p2.rows; ++i) {
    const double s = rng.uniform(0.1, 9.0);
    for (std::size_t k = 0; k < p2.cols; ++k) p2.at(i, k) *= s;
  }
  for (std::size_t j = 0; j < w2.rows; ++j) {
    const double s = rng.uniform(0.1, 9.0);
    for (std::size_t k = 0; k < w2.cols; ++k) w2.at(j, k) *= s;
  }
  const Matrix c1 = cosine_cost(p, w).values;
  const Matrix c2 = cosine_cost(p2, w2).values;
  for (std::size_t i = 0; i < c1.data.size(); ++i)
    CHECK(c1.data[i] == doctest::Approx(c2.data[i]).epsilon(1e-12));
}

TEST_CASE("chamfer similarity hand cases") {
  Matrix v = Matrix::from_rows({{0.6, 0.8}});
  CHECK(chamfer_similarity(v, v) == doctest::Approx(0.0));

  // Cost [[0,1],[1,0]]: row minima and column minima are all 0.
  Matrix p = Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(chamfer_similarity(p, p) == doctest::Approx(0.0));

  Rng rng(31);
  for (int it = 0; it < 10; ++it) {
    Matrix a = random_embeddings(rng, 1 + rng.below(4), 4);
    Matrix b = random_embeddings(rng, 1 + rng.below(4), 4);
    const double r = chamfer_similarity(a, b);
    CHECK(r <= 0.0);
    CHECK(r >= -2.0);
  }
}

TEST_CASE("emd gradient on 1x1 equals the cosine derivative") {
  Rng rng(37);
  Parameter p("p", random_embeddings(rng, 1, 4));
  Parameter w("w", random_embeddings(rng, 1, 4));
  SinkhornConfig cfg;
  cfg.marginal_tol = 1e-10;
  auto f = [&](bool with_grad) {
    Tape t;
    Tape::Id r = emd_score(t, t.param(p), t.param(w), cfg);
    if (with_grad) t.backward(r);
    return t.value(r).data[0];
  };
  // The 1x1 plan is fixed at 1, so the held-plan gradient is exact.
  CHECK(grad_check(f, {&p, &w}, 1e-6).max_rel_err <= 1e-6);
}

TEST_CASE("emd gradient matches finite differences on random 2x3 instances") {
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  cfg.marginal_tol = 1e-9;
  cfg.max_iters = 100000;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 101);
    Parameter p("p", random_embeddings(rng, 2, 4));
    Parameter w("w", random_embeddings(rng, 3, 4));
    auto f = [&](bool with_grad) {
      Tape t;
      Tape::Id r = emd_score(t, t.param(p), t.param(w), cfg);
      if (with_grad) t.backward(r);
      return t.value(r).data[0];
    };
    const auto rep = grad_check(f, {&p, &w}, 1e-6);
    INFO("seed " << seed << " err " << rep.max_rel_err);
    CHECK(rep.max_rel_err <= 1e-3);
  }
}

TEST_CASE("emd gradient with zero upstream is zero") {
  Rng rng(41);
  Matrix p = random_embeddings(rng, 2, 4);
  Matrix w = random_embeddings(rng, 3, 4);
  EmdGradient g = emd_gradient(p, w, SinkhornConfig{}, 0.0);
  CHECK(g.d_parts == Matrix(2, 4));
  CHECK(g.d_words == Matrix(3, 4));
}

TEST_CASE("chamfer gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 211);
    Parameter p("p", random_embeddings(rng, 3, 4));
    Parameter w("w", random_embeddings(rng, 2, 4));
    auto f = [&](bool with_grad) {
      Tape t;
      Tape::Id r = chamfer_score(t, t.param(p), t.param(w));
      if (with_grad) t.backward(r);
      return t.value(r).data[0];
    };
    CHECK(grad_check(f, {&p, &w}, 1e-6).max_rel_err <= 1e-3);
  }
}
