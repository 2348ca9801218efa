#pragma once

// Single-layer attention model in its TV-VAR reading: next-token logits are a
// bilinear readout of an attention-weighted combination of history embeddings.
// Includes a linear SSM variant, greedy/stochastic decoding, and analytic
// gradients for the cross-entropy objective.

#include <tokscope/common.hpp>

#include <functional>
#include <optional>
#include <utility>

namespace tokscope {

struct TransformerParams {
  int N = 0;             // alphabet size
  int d = 0;             // embedding dimension
  double xi = 1.0;       // logit temperature divisor
  int stop_token = 0;
  Matrix embedding;      // N x d, rows unit-norm
  Matrix A;              // d x d value matrix
  Matrix B;              // d x d bilinear attention matrix
};

inline void validate_params(const TransformerParams& p) {
  require(p.N >= 2, "params: alphabet size must be >= 2");
  require(p.d >= 1, "params: embedding dimension must be >= 1");
  require(p.xi > 0.0, "params: temperature must be positive");
  require(p.stop_token >= 0 && p.stop_token < p.N,
          "params: stop_token out of range");
  require(p.embedding.rows() == p.N && p.embedding.cols() == p.d,
          "params: embedding shape mismatch");
  require(p.A.rows() == p.d && p.A.cols() == p.d, "params: A shape mismatch");
  require(p.B.rows() == p.d && p.B.cols() == p.d, "params: B shape mismatch");
  require(p.embedding.allFinite() && p.A.allFinite() && p.B.allFinite(),
          "params: non-finite entries");
  for (int i = 0; i < p.N; ++i) {
    require(std::abs(p.embedding.row(i).norm() - 1.0) <= 1e-9,
            "params: embedding row not unit-norm");
  }
}

inline TransformerParams random_params(int N, int d, std::uint64_t seed,
                                       double scale = 1.0, double xi = 1.0,
                                       int stop_token = -1) {
  TransformerParams p;
  p.N = N;
  p.d = d;
  p.xi = xi;
  p.stop_token = stop_token < 0 ? N - 1 : stop_token;
  Rng rng(seed);
  p.embedding.resize(N, d);
  for (int i = 0; i < N; ++i) {
    double norm = 0.0;
    do {
      for (int j = 0; j < d; ++j) p.embedding(i, j) = rng.gaussian();
      norm = p.embedding.row(i).norm();
    } while (norm < 1e-12);
    p.embedding.row(i) /= norm;
  }
  p.A.resize(d, d);
  p.B.resize(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) p.A(i, j) = scale * rng.gaussian();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) p.B(i, j) = scale * rng.gaussian();
  validate_params(p);
  return p;
}

// Embedding lookup; generated tokens feed back through the same table.
inline Matrix embed(const TransformerParams& p, const Tokens& tokens) {
  Matrix h(static_cast<int>(tokens.size()), p.d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    require(tokens[i] >= 0 && tokens[i] < p.N, "embed: token out of range");
    h.row(static_cast<int>(i)) = p.embedding.row(tokens[i]);
  }
  return h;
}

// pi_j = softmax_j of u_{t-1}^T B u_j over history positions j = 1..t-1.
// The query is the most recent embedding.
inline Vector attention_weights(const TransformerParams& p,
                                const Matrix& history) {
  require(history.rows() >= 1, "attention_weights: empty history");
  const Vector q = history.row(history.rows() - 1);
  const Vector scores = history * (p.B.transpose() * q);
  return softmax(scores);
}

inline Vector attention_weights(const TransformerParams& p,
                                const Tokens& history) {
  return attention_weights(p, embed(p, history));
}

// z_i = (1/Xi) u~_i^T A (sum_j pi_j u_j)
inline Vector next_token_logits(const TransformerParams& p,
                                const Matrix& history) {
  const Vector pi = attention_weights(p, history);
  const Vector hbar = history.transpose() * pi;
  return (p.embedding * (p.A * hbar)) / p.xi;
}

inline Vector next_token_logits(const TransformerParams& p,
                                const Tokens& history) {
  return next_token_logits(p, embed(p, history));
}

inline Vector next_token_distribution(const TransformerParams& p,
                                      const Matrix& history) {
  return softmax(next_token_logits(p, history));
}

inline Vector next_token_distribution(const TransformerParams& p,
                                      const Tokens& history) {
  return softmax(next_token_logits(p, history));
}

inline int argmax_lowest(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

enum class GenMode { greedy, sample };

struct GenerateResult {
  Tokens sequence;                        // prompt followed by generated tokens
  std::vector<Vector> step_distributions; // one per generated token
};

// Emits until stop_token or total length max_T. Greedy ties go to the lowest
// token id.
inline GenerateResult generate(const TransformerParams& p, const Tokens& prompt,
                               int max_T, GenMode mode,
                               std::uint64_t seed = 0) {
  require(!prompt.empty(), "generate: prompt must be nonempty");
  require(max_T >= static_cast<int>(prompt.size()), "generate: max_T too small");
  GenerateResult out;
  out.sequence = prompt;
  Rng rng(seed);
  while (static_cast<int>(out.sequence.size()) < max_T) {
    const Vector dist = next_token_distribution(p, out.sequence);
    const int tok =
        mode == GenMode::greedy ? argmax_lowest(dist) : rng.sample(dist);
    out.sequence.push_back(tok);
    out.step_distributions.push_back(dist);
    if (tok == p.stop_token) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// TV-VAR general form and the SSM special case
// ---------------------------------------------------------------------------

// (t, j, history embeddings u_{1:t-1}) -> d x d coefficient matrix A_tj,
// with 1-based t = history length + 1 and 1 <= j <= t-1.
using CoefficientProvider =
    std::function<Matrix(int t, int j, const Matrix& history)>;

// softmax of (1/Xi) u~^T (sum_j A_tj u_j)
inline Vector tvvar_next(const CoefficientProvider& provider,
                         const TransformerParams& p, const Tokens& history) {
  require(!history.empty(), "tvvar_next: empty history");
  const Matrix h = embed(p, history);
  const int t = static_cast<int>(history.size()) + 1;
  Vector acc = Vector::Zero(p.d);
  for (int j = 1; j < t; ++j) {
    const Matrix a = provider(t, j, h);
    require(a.rows() == p.d && a.cols() == p.d,
            "tvvar_next: provider shape mismatch");
    require(a.allFinite(), "tvvar_next: provider returned non-finite matrix");
    acc += a * h.row(j - 1).transpose();
  }
  return softmax((p.embedding * acc) / p.xi);
}

// A_tj = pi_tj * A: the attention decomposition of the forward pass.
inline CoefficientProvider transformer_provider(const TransformerParams& p) {
  return [p](int /*t*/, int j, const Matrix& history) -> Matrix {
    const Vector pi = attention_weights(p, history);
    return pi[j - 1] * p.A;
  };
}

struct SSMParams {
  Matrix A_state;  // d x d
  Matrix B_in;     // d x d, applied to the input token embedding
  Matrix C_out;    // d x d readout
};

inline void validate_ssm(const SSMParams& s, int d) {
  require(s.A_state.rows() == d && s.A_state.cols() == d &&
              s.B_in.rows() == d && s.B_in.cols() == d &&
              s.C_out.rows() == d && s.C_out.cols() == d,
          "ssm: shape mismatch");
  require(s.A_state.allFinite() && s.B_in.allFinite() && s.C_out.allFinite(),
          "ssm: non-finite entries");
}

// State after consuming the token sequence: u_t = A_state u_{t-1} + B_in s_t,
// u_0 = 0.
inline Vector ssm_state(const SSMParams& s, const TransformerParams& p,
                        const Tokens& tokens) {
  validate_ssm(s, p.d);
  Vector u = Vector::Zero(p.d);
  for (int tok : tokens) {
    require(tok >= 0 && tok < p.N, "ssm_state: token out of range");
    u = s.A_state * u + s.B_in * p.embedding.row(tok).transpose();
  }
  return u;
}

inline Vector ssm_next_distribution(const SSMParams& s,
                                    const TransformerParams& p,
                                    const Tokens& history) {
  require(!history.empty(), "ssm_next_distribution: empty history");
  const Vector y = s.C_out * ssm_state(s, p, history);
  return softmax((p.embedding * y) / p.xi);
}

inline Tokens ssm_generate(const SSMParams& s, const TransformerParams& p,
                           const Tokens& prompt, int max_T) {
  require(!prompt.empty(), "ssm_generate: prompt must be nonempty");
  Tokens seq = prompt;
  while (static_cast<int>(seq.size()) < max_T) {
    const int tok = argmax_lowest(ssm_next_distribution(s, p, seq));
    seq.push_back(tok);
    if (tok == p.stop_token) break;
  }
  return seq;
}

// Unrolling u_t = A u_{t-1} + B s_t gives A_tj = C A^{(t-1)-j} B against the
// embedded history.
inline CoefficientProvider ssm_unrolled_provider(const SSMParams& s) {
  return [s](int t, int j, const Matrix& /*history*/) -> Matrix {
    Matrix pw = Matrix::Identity(s.A_state.rows(), s.A_state.cols());
    for (int k = 0; k < (t - 1) - j; ++k) pw = s.A_state * pw;
    return s.C_out * pw * s.B_in;
  };
}

// ---------------------------------------------------------------------------
// Analytic gradients
// ---------------------------------------------------------------------------

struct ModelGrads {
  Matrix d_embedding;
  Matrix d_A;
  Matrix d_B;
};

inline ModelGrads zero_grads(const TransformerParams& p) {
  return {Matrix::Zero(p.N, p.d), Matrix::Zero(p.d, p.d),
          Matrix::Zero(p.d, p.d)};
}

// Accumulates d(loss)/d(params) for one prefix given g_z = d(loss)/d(logits).
// Raw ambient gradients; sphere projection of the embedding rows is the
// optimizer's job.
inline void accumulate_logit_gradient(const TransformerParams& p,
                                      const Tokens& prefix, const Vector& g_z,
                                      ModelGrads& g) {
  const Matrix h = embed(p, prefix);
  const int L = static_cast<int>(prefix.size());
  const Vector q = h.row(L - 1);
  const Vector scores = h * (p.B.transpose() * q);
  const Vector pi = softmax(scores);
  const Vector hbar = h.transpose() * pi;
  const Vector ctx = p.A * hbar;

  const Vector gctx = (p.embedding.transpose() * g_z) / p.xi;
  for (int i = 0; i < p.N; ++i)
    g.d_embedding.row(i) += (g_z[i] / p.xi) * ctx.transpose();
  g.d_A += gctx * hbar.transpose();

  const Vector ghbar = p.A.transpose() * gctx;
  const Vector a = h * ghbar;
  const double sum = pi.dot(a);
  const Vector gscore = pi.array() * (a.array() - sum);

  g.d_B += q * (h.transpose() * gscore).transpose();

  const Vector bq = p.B.transpose() * q;
  Vector gq = Vector::Zero(p.d);
  for (int j = 0; j < L; ++j) {
    const Vector gh = pi[j] * ghbar + gscore[j] * bq;
    g.d_embedding.row(prefix[j]) += gh.transpose();
    gq += gscore[j] * (p.B * h.row(j).transpose());
  }
  g.d_embedding.row(prefix[L - 1]) += gq.transpose();
}

struct LossGrad {
  double loss = 0.0;
  ModelGrads grads;
};

// Mean negative log-likelihood over (prefix, target) pairs with analytic
// gradients.
inline LossGrad cross_entropy_loss(
    const TransformerParams& p,
    const std::vector<std::pair<Tokens, int>>& batch) {
  require(!batch.empty(), "cross_entropy_loss: empty batch");
  LossGrad out;
  out.grads = zero_grads(p);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& [prefix, target] : batch) {
    require(target >= 0 && target < p.N,
            "cross_entropy_loss: target out of range");
    const Vector z = next_token_logits(p, prefix);
    const Vector prob = softmax(z);
    out.loss -= inv * std::log(prob[target]);
    Vector g_z = inv * prob;
    g_z[target] -= inv;
    accumulate_logit_gradient(p, prefix, g_z, out.grads);
  }
  return out;
}

struct WeightedContext {
  Tokens prefix;
  double weight = 0.0;
  Vector target;  // distribution over next token
};

// sum_ctx w * H(target, Q(.|prefix)), the exact population form of the
// pre-training objective, with analytic gradients.
inline LossGrad expected_cross_entropy(
    const TransformerParams& p, const std::vector<WeightedContext>& contexts) {
  LossGrad out;
  out.grads = zero_grads(p);
  for (const auto& c : contexts) {
    if (c.weight == 0.0) continue;
    const Vector z = next_token_logits(p, c.prefix);
    const Vector prob = softmax(z);
    out.loss += c.weight * cross_entropy(c.target, prob);
    const Vector g_z = c.weight * (prob - c.target);
    accumulate_logit_gradient(p, c.prefix, g_z, out.grads);
  }
  return out;
}

}  // namespace tokscope
