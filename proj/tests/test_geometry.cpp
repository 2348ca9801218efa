#include <tokscope/geometry.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

using namespace tokscope;

namespace {

SemanticVectorSpace axes_space() {
  SemanticVectorSpace s;
  s.vectors = Matrix::Identity(3, 3);
  s.weights = Vector::Constant(3, 1.0 / 3.0);
  return s;
}

// Exhaustive quadratic objective straight from the definition.
double brute_force_gw(const Matrix& GA, const Matrix& GB, const Matrix& plan) {
  double acc = 0.0;
  for (int i = 0; i < GA.rows(); ++i)
    for (int j = 0; j < GA.rows(); ++j)
      for (int k = 0; k < GB.rows(); ++k)
        for (int l = 0; l < GB.rows(); ++l) {
          const double diff = GA(i, j) - GB(k, l);
          acc += diff * diff * plan(i, k) * plan(j, l);
        }
  return acc;
}

}  // namespace

TEST_CASE("cosine returns the pairwise inner products") {
  const SemanticVectorSpace s = axes_space();
  REQUIRE(cosine(s, 0, 0) == 1.0);
  REQUIRE(cosine(s, 0, 1) == 0.0);
  SemanticVectorSpace flipped = s;
  flipped.vectors.row(1) = -flipped.vectors.row(0);
  REQUIRE(cosine(flipped, 0, 1) == -1.0);
  REQUIRE_THROWS_AS(cosine(s, 0, 3), std::invalid_argument);
}

TEST_CASE("gram matrix collects every cosine") {
  const SemanticVectorSpace s = random_space(5, 3, 2);
  const Matrix G = gram(s);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      REQUIRE(G(i, j) == Catch::Approx(cosine(s, i, j)).epsilon(0.0).margin(1e-14));
  REQUIRE((G.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("random spaces live on the sphere with uniform mass") {
  const SemanticVectorSpace s = random_space(8, 4, 3);
  REQUIRE_NOTHROW(validate_space(s));
  const SemanticVectorSpace same = random_space(8, 4, 3);
  REQUIRE((s.vectors - same.vectors).cwiseAbs().maxCoeff() == 0.0);
  const SemanticVectorSpace other = random_space(8, 4, 4);
  REQUIRE((s.vectors - other.vectors).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("random orthogonal matrices satisfy Q^T Q = I") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix Q = random_orthogonal(4, seed);
    REQUIRE((Q.transpose() * Q - Matrix::Identity(4, 4))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
}

TEST_CASE("gw cost of a space against itself is zero on the diagonal plan") {
  const SemanticVectorSpace s = random_space(6, 3, 5);
  REQUIRE(gw_cost(s, s, identity_coupling(s)) <= 1e-12);
}

TEST_CASE("gw cost is invariant to orthogonal rotations") {
  const SemanticVectorSpace s = random_space(5, 3, 6);
  SemanticVectorSpace rotated = s;
  rotated.vectors = s.vectors * random_orthogonal(3, 99);
  REQUIRE_NOTHROW(validate_space(rotated));
  REQUIRE(gw_cost(s, rotated, identity_coupling(s)) <= 1e-12);
}

TEST_CASE("gram-form evaluation matches the four-index sum") {
  const SemanticVectorSpace a = random_space(4, 3, 11);
  const SemanticVectorSpace b = random_space(4, 3, 12);
  const Coupling product = outer_coupling(a.weights, b.weights);
  const double fast = gw_cost(a, b, product);
  const double brute = brute_force_gw(gram(a), gram(b), product.plan);
  REQUIRE(fast == Catch::Approx(brute).epsilon(0.0).margin(1e-12));
}

TEST_CASE("two-point product coupling has a hand-computable cost") {
  // Gram matrices I and [[1, .6], [.6, 1]] under the uniform product plan:
  // 16 terms reduce to 8 * (1/4 * 1/4) * 0.36 + 4 * (1/16) * (2 * 0.36)
  // ... summed exactly to 0.38.
  SemanticVectorSpace a, b;
  a.vectors = Matrix::Identity(2, 2);
  a.weights = Vector::Constant(2, 0.5);
  const double t = 0.6;
  b.vectors = Matrix(2, 2);
  b.vectors << 1.0, 0.0,
               t, std::sqrt(1.0 - t * t);
  b.weights = Vector::Constant(2, 0.5);
  const Coupling plan = outer_coupling(a.weights, b.weights);
  const double expect = brute_force_gw(gram(a), gram(b), plan.plan);
  REQUIRE(expect == Catch::Approx(0.38).epsilon(0.0).margin(1e-12));
  REQUIRE(gw_cost(a, b, plan) == Catch::Approx(0.38).epsilon(0.0).margin(1e-12));
}

TEST_CASE("gw cost rejects malformed plans") {
  const SemanticVectorSpace s = random_space(3, 2, 7);
  Coupling bad;
  bad.plan = Matrix::Constant(3, 3, 1.0 / 9.0);
  bad.plan(0, 0) = -0.1;
  REQUIRE_THROWS_AS(gw_cost(s, s, bad), std::invalid_argument);
  Coupling off;
  off.plan = Matrix::Constant(3, 3, 0.2);  // marginals are 0.6, not 1/3
  REQUIRE_THROWS_AS(gw_cost(s, s, off), std::invalid_argument);
}

TEST_CASE("the permutation oracle recovers a shuffled copy") {
  const SemanticVectorSpace s = random_space(4, 3, 21);
  SemanticVectorSpace shuffled = s;
  const std::vector<int> perm = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    shuffled.vectors.row(perm[static_cast<std::size_t>(i)]) = s.vectors.row(i);
  const OracleResult r = gw_distance_oracle(s, shuffled);
  REQUIRE(r.cost <= 1e-12);
  for (int i = 0; i < 4; ++i)
    REQUIRE(r.coupling.plan(i, perm[static_cast<std::size_t>(i)]) ==
            Catch::Approx(0.25).epsilon(0.0).margin(1e-15));
}

TEST_CASE("the oracle agrees with direct enumeration over all plans") {
  const SemanticVectorSpace a = random_space(4, 2, 31);
  const SemanticVectorSpace b = random_space(4, 2, 32);
  const OracleResult r = gw_distance_oracle(a, b);
  // Re-enumerate the 24 permutation plans directly.
  std::vector<int> perm = {0, 1, 2, 3};
  double best = std::numeric_limits<double>::infinity();
  do {
    Coupling c;
    c.plan = Matrix::Zero(4, 4);
    for (int i = 0; i < 4; ++i)
      c.plan(i, perm[static_cast<std::size_t>(i)]) = 0.25;
    best = std::min(best, gw_cost(a, b, c));
  } while (std::next_permutation(perm.begin(), perm.end()));
  REQUIRE(r.cost == Catch::Approx(best).epsilon(0.0).margin(1e-12));
  REQUIRE(gw_cost(a, b, r.coupling) == Catch::Approx(r.cost).epsilon(0.0).margin(1e-12));
}

TEST_CASE("the oracle requires small uniform instances") {
  const SemanticVectorSpace s = random_space(7, 3, 41);
  REQUIRE_THROWS_AS(gw_distance_oracle(s, s), std::invalid_argument);
  SemanticVectorSpace tilted = random_space(3, 2, 42);
  tilted.weights << 0.5, 0.25, 0.25;
  REQUIRE_THROWS_AS(gw_distance_oracle(tilted, tilted),
                    std::invalid_argument);
}

TEST_CASE("sinkhorn with zero cost returns the product coupling") {
  const Vector mu = Vector::Constant(3, 1.0 / 3.0);
  Vector nu(2);
  nu << 0.25, 0.75;
  const SinkhornResult r = sinkhorn(Matrix::Zero(3, 2), mu, nu, 0.5);
  REQUIRE(r.converged);
  REQUIRE((r.coupling.plan - mu * nu.transpose()).cwiseAbs().maxCoeff() <
          1e-8);
}

TEST_CASE("sinkhorn concentrates on the cheap diagonal at low temperature") {
  Matrix cost(2, 2);
  cost << 0.0, 1.0,
          1.0, 0.0;
  const Vector half = Vector::Constant(2, 0.5);
  const SinkhornResult r = sinkhorn(cost, half, half, 0.05);
  REQUIRE(r.converged);
  REQUIRE(r.coupling.plan(0, 0) >= 0.49);
  REQUIRE(r.coupling.plan(1, 1) >= 0.49);
  REQUIRE(r.coupling.plan(0, 1) <= 0.01);
}

TEST_CASE("sinkhorn tolerates cost-row shifts") {
  // Adding a constant to one row only rescales that row's potential.
  Matrix cost(2, 3);
  cost << 0.3, 0.9, 0.1,
          0.7, 0.2, 0.5;
  Matrix shifted = cost;
  shifted.row(0).array() += 5.0;
  const Vector mu = Vector::Constant(2, 0.5);
  const Vector nu = Vector::Constant(3, 1.0 / 3.0);
  const SinkhornResult a = sinkhorn(cost, mu, nu, 0.2);
  const SinkhornResult b = sinkhorn(shifted, mu, nu, 0.2);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  REQUIRE((a.coupling.plan - b.coupling.plan).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sinkhorn plans satisfy their marginals across many instances") {
  Rng rng(1000);
  for (int inst = 0; inst < 1000; ++inst) {
    const int M = 2 + rng.below(3);
    const int Mp = 2 + rng.below(3);
    Matrix cost(M, Mp);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < Mp; ++j) cost(i, j) = rng.uniform();
    Vector mu(M), nu(Mp);
    for (int i = 0; i < M; ++i) mu[i] = 0.1 + rng.uniform();
    for (int j = 0; j < Mp; ++j) nu[j] = 0.1 + rng.uniform();
    mu /= mu.sum();
    nu /= nu.sum();
    const SinkhornResult r = sinkhorn(cost, mu, nu, 0.3, 1e-9, 5000);
    REQUIRE(r.converged);
    REQUIRE((r.coupling.plan.rowwise().sum() - mu).cwiseAbs().maxCoeff() <
            1e-8);
    REQUIRE((r.coupling.plan.colwise().sum().transpose() - nu)
                .cwiseAbs()
                .maxCoeff() < 1e-8);
    REQUIRE(r.coupling.plan.minCoeff() >= 0.0);
  }
}

TEST_CASE("sinkhorn validates its inputs") {
  const Vector half = Vector::Constant(2, 0.5);
  REQUIRE_THROWS_AS(sinkhorn(Matrix::Zero(2, 2), half, half, 0.0),
                    std::invalid_argument);
  Vector bad(2);
  bad << 0.7, 0.7;
  REQUIRE_THROWS_AS(sinkhorn(Matrix::Zero(2, 2), bad, half, 0.5),
                    std::invalid_argument);
}

TEST_CASE("entropic distance of a space to itself is negligible") {
  const SemanticVectorSpace s = random_space(4, 3, 61);
  EntropicOptions opt;
  const EntropicResult r = gw_distance_entropic(s, s, opt);
  REQUIRE(r.cost <= 1e-9);
}

TEST_CASE("entropic solver is invariant to orthogonal rotations") {
  const SemanticVectorSpace s = random_space(4, 3, 71);
  SemanticVectorSpace rotated = s;
  rotated.vectors = s.vectors * random_orthogonal(3, 72);
  EntropicOptions opt;
  const EntropicResult r = gw_distance_entropic(s, rotated, opt);
  REQUIRE(r.cost <= 1e-6);
}

TEST_CASE("entropic solver tracks the oracle on small instances") {
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (int inst = 0; inst < 5; ++inst) {
    const SemanticVectorSpace a =
        random_space(4, 3, 100 + 2 * static_cast<std::uint64_t>(inst));
    const SemanticVectorSpace b =
        random_space(4, 3, 101 + 2 * static_cast<std::uint64_t>(inst));
    EntropicOptions opt;
    const EntropicResult r = gw_distance_entropic(a, b, opt);
    const OracleResult oracle = gw_distance_oracle(a, b);
    worst_gap = std::max(worst_gap, r.cost - oracle.cost);
    // The returned plan must actually achieve the reported cost.
    REQUIRE(gw_cost(a, b, r.coupling) == Catch::Approx(r.cost).epsilon(0.0).margin(1e-9));
  }
  REQUIRE(worst_gap <= 1e-3);
}

TEST_CASE("entropic cost traces are non-increasing at accepted iterates") {
  const SemanticVectorSpace a = random_space(5, 3, 300);
  const SemanticVectorSpace b = random_space(5, 3, 301);
  EntropicOptions opt;
  opt.restarts = 4;
  const EntropicResult r = gw_distance_entropic(a, b, opt);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i)
    REQUIRE(r.cost_trace[i] <= r.cost_trace[i - 1] + 1e-12);
}
