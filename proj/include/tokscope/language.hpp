#pragma once

// Finite token alphabets and ground-truth teacher processes. Teachers expose
// exact conditional next-token distributions; every downstream information
// measure enumerates against these.

#include <tokscope/model.hpp>

#include <variant>

namespace tokscope {

struct TokenAlphabet {
  int size = 0;
  int stop_token = 0;
};

inline void validate_alphabet(const TokenAlphabet& a) {
  require(a.size >= 2, "alphabet: size must be >= 2");
  require(a.stop_token >= 0 && a.stop_token < a.size,
          "alphabet: stop_token out of range");
}

// Conditional table for an order-k chain. Contexts are the last k tokens,
// left-padded with token 0 when the prefix is shorter; order 0 is a single
// unconditional row.
struct MarkovTable {
  int order = 0;
  Matrix rows;  // N^order x N, row per packed context
};

struct PromptPrior {
  int length = 0;
  std::vector<Tokens> prompts;
  Vector probs;
};

inline void validate_prior(const PromptPrior& pr) {
  require(pr.length >= 1, "prompt_prior: length must be >= 1");
  require(!pr.prompts.empty(), "prompt_prior: empty support");
  require(static_cast<int>(pr.prompts.size()) == pr.probs.size(),
          "prompt_prior: size mismatch");
  for (const auto& s : pr.prompts)
    require(static_cast<int>(s.size()) == pr.length,
            "prompt_prior: prompt length mismatch");
  require(is_distribution(pr.probs, 1e-12),
          "prompt_prior: probabilities must sum to 1");
}

struct TeacherProcess {
  TokenAlphabet alphabet;
  std::variant<MarkovTable, TransformerParams> kind;
  PromptPrior prompt_prior;
};

inline bool is_markov(const TeacherProcess& t) {
  return std::holds_alternative<MarkovTable>(t.kind);
}

inline void validate_teacher(const TeacherProcess& t) {
  validate_alphabet(t.alphabet);
  const int N = t.alphabet.size;
  if (is_markov(t)) {
    const auto& m = std::get<MarkovTable>(t.kind);
    require(m.order >= 0, "teacher: negative order");
    require(m.rows.rows() == pow_i64(N, m.order) && m.rows.cols() == N,
            "teacher: transition table shape mismatch");
    for (int r = 0; r < m.rows.rows(); ++r) {
      require((m.rows.row(r).array() >= 0.0).all(),
              "teacher: negative transition probability");
      require(std::abs(m.rows.row(r).sum() - 1.0) <= 1e-12,
              "teacher: transition row must sum to 1");
    }
  } else {
    const auto& p = std::get<TransformerParams>(t.kind);
    validate_params(p);
    require(p.N == N && p.stop_token == t.alphabet.stop_token,
            "teacher: model alphabet mismatch");
  }
  validate_prior(t.prompt_prior);
}

inline PromptPrior uniform_prior(int N, int n) {
  require(N >= 2 && n >= 1, "uniform_prior: bad dimensions");
  PromptPrior pr;
  pr.length = n;
  const std::int64_t count = pow_i64(N, n);
  pr.prompts.reserve(count);
  for (std::int64_t i = 0; i < count; ++i)
    pr.prompts.push_back(unpack_tokens(i, N, n));
  pr.probs = Vector::Constant(count, 1.0 / static_cast<double>(count));
  return pr;
}

inline PromptPrior explicit_prior(std::vector<Tokens> prompts, Vector probs) {
  PromptPrior pr;
  require(!prompts.empty(), "explicit_prior: empty support");
  pr.length = static_cast<int>(prompts[0].size());
  pr.prompts = std::move(prompts);
  pr.probs = std::move(probs);
  validate_prior(pr);
  return pr;
}

// Exact next-token law of the teacher. Markov kinds look up the padded
// context row; model kinds defer to the forward pass (uniform on an empty
// prefix, which the attention recursion cannot score).
inline Vector exact_conditional(const TeacherProcess& t, const Tokens& prefix) {
  const int N = t.alphabet.size;
  for (int tok : prefix)
    require(tok >= 0 && tok < N, "exact_conditional: token out of range");
  if (is_markov(t)) {
    const auto& m = std::get<MarkovTable>(t.kind);
    Tokens ctx(m.order, 0);
    const int L = static_cast<int>(prefix.size());
    for (int i = 0; i < m.order; ++i) {
      const int src = L - m.order + i;
      if (src >= 0) ctx[i] = prefix[src];
    }
    return m.rows.row(pack_tokens(ctx, N)).transpose();
  }
  const auto& p = std::get<TransformerParams>(t.kind);
  if (prefix.empty()) return Vector::Constant(N, 1.0 / N);
  return next_token_distribution(p, prefix);
}

// Chain sample from the empty prefix; terminates at stop_token or max_len.
inline Tokens sample_sequence(const TeacherProcess& t, int max_len,
                              std::uint64_t seed) {
  require(max_len >= 1, "sample_sequence: max_len must be >= 1");
  Rng rng(seed);
  Tokens seq;
  while (static_cast<int>(seq.size()) < max_len) {
    const int tok = rng.sample(exact_conditional(t, seq));
    seq.push_back(tok);
    if (tok == t.alphabet.stop_token) break;
  }
  return seq;
}

// Sum of log conditionals of the continuation tokens given the growing
// prefix; the prompt itself is not scored. -inf for zero-probability paths.
inline double sequence_logprob(const TeacherProcess& t, const Tokens& prompt,
                               const Tokens& continuation) {
  Tokens prefix = prompt;
  double lp = 0.0;
  for (int tok : continuation) {
    const Vector cond = exact_conditional(t, prefix);
    require(tok >= 0 && tok < t.alphabet.size,
            "sequence_logprob: token out of range");
    if (cond[tok] <= 0.0) return kNegInf;
    lp += std::log(cond[tok]);
    prefix.push_back(tok);
  }
  return lp;
}

inline TeacherProcess make_markov_teacher(int N, int stop_token, int order,
                                          Matrix rows, PromptPrior prior) {
  TeacherProcess t;
  t.alphabet = {N, stop_token};
  t.kind = MarkovTable{order, std::move(rows)};
  t.prompt_prior = std::move(prior);
  validate_teacher(t);
  return t;
}

inline TeacherProcess make_transformer_teacher(TransformerParams params,
                                               PromptPrior prior) {
  TeacherProcess t;
  t.alphabet = {params.N, params.stop_token};
  t.kind = std::move(params);
  t.prompt_prior = std::move(prior);
  validate_teacher(t);
  return t;
}

// Random row-stochastic table: each row is an independent Dirichlet(1) draw.
inline TeacherProcess random_markov_teacher(int N, int stop_token, int order,
                                            std::uint64_t seed,
                                            PromptPrior prior) {
  Rng rng(seed);
  const std::int64_t contexts = pow_i64(N, order);
  Matrix rows(contexts, N);
  for (int r = 0; r < contexts; ++r) {
    double sum = 0.0;
    for (int c = 0; c < N; ++c) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      rows(r, c) = -std::log(u);
      sum += rows(r, c);
    }
    rows.row(r) /= sum;
  }
  return make_markov_teacher(N, stop_token, order, std::move(rows),
                             std::move(prior));
}

}  // namespace tokscope
