#pragma once

// Johnson-Lindenstrauss style dimension reduction: Gaussian projections and
// structured partial-DCT / partial-Hadamard operators with a Rademacher sign
// diagonal, plus inner-product deviation checks and the compression
// distortion of a projected semantic space.

#include <tokscope/geometry.hpp>

#include <bit>
#include <optional>

namespace tokscope {

enum class ProjectionKind { gaussian, partial_dct, partial_hadamard };

struct ProjectionOperator {
  ProjectionKind kind = ProjectionKind::gaussian;
  int in_dim = 0;
  int out_dim = 0;
  std::uint64_t seed = 0;
  std::vector<int> selected_rows;  // structured kinds
  Vector rademacher;               // structured kinds
  Matrix matrix;                   // dense m x N realization
};

namespace detail {

inline Matrix dct_rows(int N, const std::vector<int>& rows) {
  Matrix B(static_cast<long>(rows.size()), N);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int k = rows[r];
    const double c = k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
    for (int n = 0; n < N; ++n)
      B(static_cast<long>(r), n) =
          c * std::cos(kPi * (2.0 * n + 1.0) * k / (2.0 * N));
  }
  return B;
}

inline Matrix hadamard_rows(int N, const std::vector<int>& rows) {
  Matrix B(static_cast<long>(rows.size()), N);
  const double scale = 1.0 / std::sqrt(static_cast<double>(N));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int n = 0; n < N; ++n) {
      const unsigned bits = static_cast<unsigned>(rows[r]) & static_cast<unsigned>(n);
      B(static_cast<long>(r), n) = (std::popcount(bits) % 2 == 0) ? scale : -scale;
    }
  return B;
}

inline std::vector<int> choose_rows(int N, int m, Rng& rng) {
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(N - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline ProjectionOperator make_projection(ProjectionKind kind, int N, int m,
                                          std::uint64_t seed) {
  require(m >= 1 && m <= N, "make_projection: need 1 <= m <= N");
  ProjectionOperator op;
  op.kind = kind;
  op.in_dim = N;
  op.out_dim = m;
  op.seed = seed;
  Rng rng(seed);
  if (kind == ProjectionKind::gaussian) {
    op.matrix = Matrix(m, N);
    const double scale = 1.0 / std::sqrt(static_cast<double>(m));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < N; ++j) op.matrix(i, j) = scale * rng.gaussian();
    return op;
  }
  if (kind == ProjectionKind::partial_hadamard)
    require((N & (N - 1)) == 0, "make_projection: hadamard needs power-of-two N");
  op.selected_rows = detail::choose_rows(N, m, rng);
  op.rademacher = Vector(N);
  for (int j = 0; j < N; ++j)
    op.rademacher[j] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const Matrix base = kind == ProjectionKind::partial_dct
                          ? detail::dct_rows(N, op.selected_rows)
                          : detail::hadamard_rows(N, op.selected_rows);
  op.matrix = std::sqrt(static_cast<double>(N) / m) * base *
              op.rademacher.asDiagonal();
  return op;
}

inline Vector apply(const ProjectionOperator& op, const Vector& x) {
  require(x.size() == op.in_dim, "apply: dimension mismatch");
  return op.matrix * x;
}

// Projected row images (A s_i)^T; rows are intentionally not renormalized.
inline Matrix project_vectors(const SemanticVectorSpace& space,
                              const ProjectionOperator& op) {
  require(space.vectors.cols() == op.in_dim, "project: dimension mismatch");
  return space.vectors * op.matrix.transpose();
}

inline SemanticVectorSpace project_space_renormalized(
    const SemanticVectorSpace& space, const ProjectionOperator& op) {
  SemanticVectorSpace out;
  out.vectors = project_vectors(space, op);
  for (long i = 0; i < out.vectors.rows(); ++i) {
    const double norm = out.vectors.row(i).norm();
    require(norm > 0.0, "project: row collapsed to zero");
    out.vectors.row(i) /= norm;
  }
  out.weights = space.weights;
  return out;
}

// Smallest m with m >= (C/eps^2) ln M.
inline int jl_dimension(double M, double eps, double C = 4.0) {
  require(M >= 2.0, "jl_dimension: need M >= 2");
  require(eps > 0.0 && eps <= 1.0, "jl_dimension: need eps in (0,1]");
  require(C > 0.0, "jl_dimension: need C > 0");
  return static_cast<int>(std::ceil(C / (eps * eps) * std::log(M)));
}

// RIP variant: smallest m with m >= (C/eps^2) ln(M/eta) ln N.
inline int jl_dimension(double M, double eps, double C, double eta, int N) {
  require(M >= 2.0, "jl_dimension: need M >= 2");
  require(eps > 0.0 && eps <= 1.0, "jl_dimension: need eps in (0,1]");
  require(C > 0.0, "jl_dimension: need C > 0");
  require(eta > 0.0 && eta < 1.0, "jl_dimension: need eta in (0,1)");
  require(N >= 2, "jl_dimension: need N >= 2");
  return static_cast<int>(
      std::ceil(C / (eps * eps) * std::log(M / eta) * std::log(N)));
}

struct JlCheckResult {
  double max_deviation = 0.0;
  std::vector<std::pair<int, int>> violating_pairs;
};

// Max over all pairs (i, j), i <= j, of |s_i^T s_j - (A s_i)^T (A s_j)|.
inline JlCheckResult jl_check(const SemanticVectorSpace& space,
                              const ProjectionOperator& op, double eps) {
  validate_space(space);
  require(space.vectors.cols() == op.in_dim, "jl_check: dimension mismatch");
  const Matrix G = gram(space);
  const Matrix proj = project_vectors(space, op);
  const Matrix Gp = proj * proj.transpose();
  JlCheckResult out;
  const int M = static_cast<int>(space.vectors.rows());
  for (int i = 0; i < M; ++i)
    for (int j = i; j < M; ++j) {
      const double dev = std::abs(G(i, j) - Gp(i, j));
      out.max_deviation = std::max(out.max_deviation, dev);
      if (dev > eps) out.violating_pairs.emplace_back(i, j);
    }
  return out;
}

struct CompressionReport {
  double identity_value = 0.0;
  std::optional<double> coupling_min;  // oracle-scope instances only
};

// Weighted distortion sum_{ij} mu_i mu_j |s_i^T s_j - (A s_i)^T (A s_j)|^2
// under the index-aligned coupling; for tiny uniform spaces also the
// permutation-minimized value.
inline CompressionReport compression_distortion(
    const SemanticVectorSpace& space, const ProjectionOperator& op) {
  validate_space(space);
  require(space.vectors.cols() == op.in_dim,
          "compression_distortion: dimension mismatch");
  const Matrix G = gram(space);
  const Matrix proj = project_vectors(space, op);
  const Matrix Gp = proj * proj.transpose();
  CompressionReport rep;
  const long M = space.vectors.rows();
  for (long i = 0; i < M; ++i)
    for (long j = 0; j < M; ++j)
      rep.identity_value += space.weights[i] * space.weights[j] *
                            (G(i, j) - Gp(i, j)) * (G(i, j) - Gp(i, j));
  const Vector uniform = Vector::Constant(M, 1.0 / M);
  if (M <= 6 && (space.weights - uniform).cwiseAbs().maxCoeff() <= 1e-12)
    rep.coupling_min = gw_permutation_min_gram(G, Gp).first;
  return rep;
}

}  // namespace tokscope
