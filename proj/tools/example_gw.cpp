// Compare the annealed entropic Gromov-Wasserstein solver against the exact
// permutation oracle on small random spaces.

#include <tokscope/geometry.hpp>

#include <cstdio>

int main() {
  using namespace tokscope;

  const SemanticVectorSpace A = random_space(4, 3, 11);
  const SemanticVectorSpace B = random_space(4, 3, 12);

  const OracleResult oracle = gw_distance_oracle(A, B);
  const EntropicResult entropic = gw_distance_entropic(A, B);
  std::printf("oracle   cost = %.9f\n", oracle.cost);
  std::printf("entropic cost = %.9f (converged: %s)\n", entropic.cost,
              entropic.converged ? "yes" : "no");

  const double self = gw_cost(A, A, identity_coupling(A));
  std::printf("self distance = %.2e\n", self);

  SemanticVectorSpace rotated = A;
  rotated.vectors = A.vectors * random_orthogonal(3, 99);
  std::printf("rotated copy  = %.2e\n", gw_distance_entropic(A, rotated).cost);
  return 0;
}
