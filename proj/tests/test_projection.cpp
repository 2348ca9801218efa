#include <tokscope/projection.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace tokscope;

TEST_CASE("target dimension formula gives its pinned values") {
  REQUIRE(jl_dimension(100.0, 0.5, 4.0) == 74);
  REQUIRE(jl_dimension(2.0, 1.0, 1.0) == 1);
  REQUIRE(jl_dimension(2000.0, 1.0, 4.0, 0.5, 1024) == 230);
  REQUIRE_THROWS_AS(jl_dimension(1.0, 0.5), std::invalid_argument);
  REQUIRE_THROWS_AS(jl_dimension(100.0, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(jl_dimension(100.0, 0.5, 4.0, 0.0, 64),
                    std::invalid_argument);
}

TEST_CASE("gaussian entries are unbiased with variance one over m") {
  const int m = 32, N = 64;
  double sum = 0.0, sq = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    const ProjectionOperator op =
        make_projection(ProjectionKind::gaussian, N, m,
                        static_cast<std::uint64_t>(r));
    sum += op.matrix.sum();
    sq += op.matrix.array().square().sum();
  }
  const double count = static_cast<double>(reps) * m * N;
  const double mean = sum / count;
  const double var = sq / count - mean * mean;
  const double se = 1.0 / (std::sqrt(static_cast<double>(m)) *
                           std::sqrt(count));
  REQUIRE(std::abs(mean) < 3.0 * se);
  REQUIRE(std::abs(var - 1.0 / m) < 0.01 / m);
}

TEST_CASE("average projected gram converges to the identity") {
  // E[A^T A] = I for the scaled gaussian ensemble; average over many seeds.
  const int N = 8, m = 4;
  Matrix acc = Matrix::Zero(N, N);
  const int seeds = 10000;
  for (int s = 0; s < seeds; ++s) {
    const ProjectionOperator op =
        make_projection(ProjectionKind::gaussian, N, m,
                        static_cast<std::uint64_t>(s));
    acc += op.matrix.transpose() * op.matrix;
  }
  acc /= seeds;
  REQUIRE((acc - Matrix::Identity(N, N)).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("projection application is linear") {
  const ProjectionOperator op = make_projection(ProjectionKind::gaussian,
                                                16, 8, 5);
  Rng rng(6);
  Vector x(16), y(16);
  for (int i = 0; i < 16; ++i) {
    x[i] = rng.gaussian();
    y[i] = rng.gaussian();
  }
  const Vector lhs = apply(op, 2.0 * x + 3.0 * y);
  const Vector rhs = 2.0 * apply(op, x) + 3.0 * apply(op, y);
  REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE_THROWS_AS(apply(op, Vector::Zero(15)), std::invalid_argument);
}

TEST_CASE("full-rank structured operators are exact isometries") {
  // With m = N the scaling factor is 1 and the sign diagonal cancels in
  // B^T B, so both structured kinds reproduce inner products exactly.
  const int N = 16;
  for (const ProjectionKind kind :
       {ProjectionKind::partial_dct, ProjectionKind::partial_hadamard}) {
    const ProjectionOperator op = make_projection(kind, N, N, 9);
    REQUIRE((op.matrix.transpose() * op.matrix - Matrix::Identity(N, N))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    const SemanticVectorSpace s = random_space(6, N, 10);
    const JlCheckResult chk = jl_check(s, op, 1e-9);
    REQUIRE(chk.max_deviation < 1e-12);
    REQUIRE(chk.violating_pairs.empty());
  }
}

TEST_CASE("hadamard operators require power-of-two ambient dimension") {
  REQUIRE_THROWS_AS(make_projection(ProjectionKind::partial_hadamard, 12, 4, 1),
                    std::invalid_argument);
  REQUIRE_NOTHROW(make_projection(ProjectionKind::partial_dct, 12, 4, 1));
}

TEST_CASE("structured operators subsample rows with signs") {
  const ProjectionOperator op =
      make_projection(ProjectionKind::partial_dct, 32, 8, 3);
  REQUIRE(op.selected_rows.size() == 8);
  for (std::size_t i = 1; i < op.selected_rows.size(); ++i)
    REQUIRE(op.selected_rows[i] > op.selected_rows[i - 1]);
  REQUIRE(op.rademacher.size() == 32);
  for (int j = 0; j < 32; ++j)
    REQUIRE(std::abs(op.rademacher[j]) == 1.0);
}

TEST_CASE("identity projection passes the deviation check at zero") {
  const int N = 8;
  SemanticVectorSpace s = random_space(5, N, 11);
  ProjectionOperator op;
  op.kind = ProjectionKind::gaussian;
  op.in_dim = N;
  op.out_dim = N;
  op.matrix = Matrix::Identity(N, N);
  const JlCheckResult chk = jl_check(s, op, 0.5);
  REQUIRE(chk.max_deviation == 0.0);
  REQUIRE(chk.violating_pairs.empty());
}

TEST_CASE("zero projection deviates by exactly the unit self-products") {
  const int N = 8;
  const SemanticVectorSpace s = random_space(4, N, 12);
  ProjectionOperator op;
  op.kind = ProjectionKind::gaussian;
  op.in_dim = N;
  op.out_dim = 2;
  op.matrix = Matrix::Zero(2, N);
  const JlCheckResult chk = jl_check(s, op, 0.5);
  REQUIRE(chk.max_deviation == Catch::Approx(1.0).epsilon(0.0).margin(1e-12));
  // Every diagonal pair violates: |1 - 0| = 1 > 0.5.
  REQUIRE(chk.violating_pairs.size() >= 4);
}

TEST_CASE("random projections keep pairwise products within tolerance") {
  const int N = 256;
  const int m = jl_dimension(20.0, 0.5, 4.0);
  const SemanticVectorSpace s = random_space(20, N, 21);
  const ProjectionOperator op =
      make_projection(ProjectionKind::gaussian, N, m, 77701);
  const JlCheckResult chk = jl_check(s, op, 0.5);
  REQUIRE(chk.max_deviation <= 0.5);
}

TEST_CASE("compression distortion is bounded by the squared deviation") {
  const int N = 64, m = 16;
  const SemanticVectorSpace s = random_space(5, N, 31);
  const ProjectionOperator op = make_projection(ProjectionKind::gaussian,
                                                N, m, 32);
  const CompressionReport rep = compression_distortion(s, op);
  const JlCheckResult chk = jl_check(s, op, 1.0);
  REQUIRE(rep.identity_value <= chk.max_deviation * chk.max_deviation + 1e-12);
  REQUIRE(rep.identity_value >= 0.0);
  // Tiny uniform instance: the permutation-minimized value can only improve.
  REQUIRE(rep.coupling_min.has_value());
  REQUIRE(*rep.coupling_min <= rep.identity_value + 1e-12);
}

TEST_CASE("projected spaces renormalize rows and keep weights") {
  const SemanticVectorSpace s = random_space(6, 32, 41);
  const ProjectionOperator op = make_projection(ProjectionKind::gaussian,
                                                32, 8, 42);
  const SemanticVectorSpace proj = project_space_renormalized(s, op);
  REQUIRE_NOTHROW(validate_space(proj));
  REQUIRE(proj.vectors.cols() == 8);
  REQUIRE((proj.weights - s.weights).cwiseAbs().maxCoeff() == 0.0);
  // The raw images are deliberately not normalized.
  const Matrix raw = project_vectors(s, op);
  bool any_off_sphere = false;
  for (long i = 0; i < raw.rows(); ++i)
    if (std::abs(raw.row(i).norm() - 1.0) > 1e-6) any_off_sphere = true;
  REQUIRE(any_off_sphere);
}

TEST_CASE("projection operators are reproducible from their seed") {
  const ProjectionOperator a = make_projection(ProjectionKind::partial_dct,
                                               64, 16, 123);
  const ProjectionOperator b = make_projection(ProjectionKind::partial_dct,
                                               64, 16, 123);
  REQUIRE((a.matrix - b.matrix).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.selected_rows == b.selected_rows);
  const ProjectionOperator c = make_projection(ProjectionKind::partial_dct,
                                               64, 16, 124);
  REQUIRE((a.matrix - c.matrix).cwiseAbs().maxCoeff() > 1e-6);
}
