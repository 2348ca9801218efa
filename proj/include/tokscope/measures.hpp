#pragma once

// Exact information measures by exhaustive enumeration over (prompt,
// continuation) ensembles, pathwise semantic-flow traces with their Doob
// decomposition, and a Donsker-Varadhan estimator validated against the exact
// values.

#include <tokscope/language.hpp>

#include <map>
#include <unordered_map>

namespace tokscope {

// Raw next-token law over full prefixes (prompt followed by continuation so
// far). stop_token = -1 means no absorbing token exists.
struct ConditionalLaw {
  int alphabet_size = 0;
  int stop_token = -1;
  std::function<Vector(const Tokens&)> next;
};

inline ConditionalLaw make_law(const TeacherProcess& teacher) {
  ConditionalLaw law;
  law.alphabet_size = teacher.alphabet.size;
  law.stop_token = teacher.alphabet.stop_token;
  law.next = [teacher](const Tokens& prefix) {
    return exact_conditional(teacher, prefix);
  };
  return law;
}

inline ConditionalLaw make_law(const TransformerParams& params) {
  ConditionalLaw law;
  law.alphabet_size = params.N;
  law.stop_token = params.stop_token;
  law.next = [params](const Tokens& prefix) -> Vector {
    if (prefix.empty()) return Vector::Constant(params.N, 1.0 / params.N);
    return next_token_distribution(params, prefix);
  };
  return law;
}

// Joint distribution of (S_{1:n}, U_{n+1:T}) under a prompt prior and a
// conditional law. Once the law emits stop_token the remaining steps are a
// point mass on stop_token, so fixed-horizon enumeration keeps total mass
// exactly 1.
class SequenceEnsemble {
 public:
  int n = 0;
  int T = 0;
  int N = 0;
  int stop_token = -1;
  PromptPrior prior;
  ConditionalLaw law;
  std::vector<double> joint_log;  // prompt-major, continuation packed base N

  int horizon() const { return T - n; }
  std::int64_t continuations() const { return pow_i64(N, T - n); }

  int prompt_index(const Tokens& prompt) const {
    const auto it = prompt_index_.find(pack_tokens(prompt, N));
    require(it != prompt_index_.end(),
            "ensemble: prompt not in prior support");
    return it->second;
  }

  double joint_logprob(int k, const Tokens& cont) const {
    return joint_log[k * continuations() + pack_tokens(cont, N)];
  }

  // Next-token law for prompt k after continuation prefix, with stop
  // absorption applied.
  Vector conditional(int k, const Tokens& cont) const {
    if (stop_token >= 0) {
      for (int tok : cont) {
        if (tok == stop_token) {
          Vector point = Vector::Zero(N);
          point[stop_token] = 1.0;
          return point;
        }
      }
    }
    Tokens prefix = prior.prompts[k];
    prefix.insert(prefix.end(), cont.begin(), cont.end());
    Vector p = law.next(prefix);
    require(p.size() == N && is_distribution(p, 1e-9),
            "ensemble: law output is not a distribution");
    return p;
  }

  // Posterior over prompts given a continuation prefix, and the marginal
  // next-token law P(U_t | U_{<t}) under the prompt prior.
  Vector marginal_next(const Tokens& cont, Vector* posterior = nullptr) const {
    const int K = static_cast<int>(prior.prompts.size());
    Vector w = prior.probs;
    Tokens prefix;
    for (std::size_t i = 0; i < cont.size(); ++i) {
      prefix.assign(cont.begin(), cont.begin() + static_cast<long>(i));
      for (int k = 0; k < K; ++k) {
        if (w[k] <= 0.0) continue;
        w[k] *= conditional(k, prefix)(cont[i]);
      }
    }
    const double total = w.sum();
    require(total > 0.0, "ensemble: zero-probability continuation prefix");
    w /= total;
    Vector m = Vector::Zero(N);
    for (int k = 0; k < K; ++k) {
      if (w[k] <= 0.0) continue;
      m += w[k] * conditional(k, cont);
    }
    if (posterior) *posterior = w;
    return m;
  }

  void finalize_index() {
    prompt_index_.clear();
    for (std::size_t k = 0; k < prior.prompts.size(); ++k)
      prompt_index_[pack_tokens(prior.prompts[k], N)] = static_cast<int>(k);
  }

 private:
  std::unordered_map<std::int64_t, int> prompt_index_;
};

inline constexpr std::int64_t kEnsembleLimit = 10'000'000;

inline SequenceEnsemble build_ensemble(const PromptPrior& prior,
                                       const ConditionalLaw& law, int T) {
  const int N = law.alphabet_size;
  const int n = prior.length;
  require(N >= 2, "build_ensemble: bad alphabet");
  require(T > n, "build_ensemble: horizon must exceed prompt length");
  require(pow_i64(N, T) <= kEnsembleLimit, "build_ensemble: N^T limit exceeded");
  validate_prior(prior);

  SequenceEnsemble e;
  e.n = n;
  e.T = T;
  e.N = N;
  e.stop_token = law.stop_token;
  e.prior = prior;
  e.law = law;
  const std::int64_t A = e.continuations();
  const std::int64_t K = static_cast<std::int64_t>(prior.prompts.size());
  require(K * A <= kEnsembleLimit, "build_ensemble: table limit exceeded");
  e.joint_log.assign(static_cast<std::size_t>(K * A), kNegInf);

  Tokens cont;
  const std::function<void(int, std::int64_t, double)> walk =
      [&](int k, std::int64_t packed, double logp) {
        if (static_cast<int>(cont.size()) == e.horizon()) {
          e.joint_log[k * A + packed] = logp;
          return;
        }
        const Vector p = e.conditional(k, cont);
        for (int u = 0; u < N; ++u) {
          if (p[u] <= 0.0) continue;
          cont.push_back(u);
          walk(k, packed * N + u, logp + std::log(p[u]));
          cont.pop_back();
        }
      };
  for (int k = 0; k < K; ++k) {
    if (prior.probs[k] <= 0.0) continue;
    walk(k, 0, std::log(prior.probs[k]));
  }
  e.finalize_index();

  Eigen::Map<const Vector> flat(e.joint_log.data(),
                                static_cast<long>(e.joint_log.size()));
  const double mass = std::exp(log_sum_exp(flat));
  if (std::abs(mass - 1.0) > 1e-10)
    throw std::runtime_error("build_ensemble: total mass deviates from 1");
  return e;
}

inline SequenceEnsemble build_ensemble(const TeacherProcess& teacher, int T) {
  return build_ensemble(teacher.prompt_prior, make_law(teacher), T);
}

inline SequenceEnsemble build_ensemble(const PromptPrior& prior,
                                       const TransformerParams& params,
                                       int T) {
  return build_ensemble(prior, make_law(params), T);
}

// ---------------------------------------------------------------------------
// Directed information and relatives
// ---------------------------------------------------------------------------

struct DirectedInfoResult {
  double total = 0.0;
  Vector per_step;  // conditional MI terms, one per generated step
};

// sum_t I(S_{1:n}; U_t | U_{n+1:t-1}) by a prefix-tree walk: every node at
// depth t-n-1 contributes P(u_{<t}) times the posterior-weighted KL between
// per-prompt conditionals and their mixture.
inline DirectedInfoResult directed_information_terms(
    const SequenceEnsemble& e) {
  const int K = static_cast<int>(e.prior.prompts.size());
  DirectedInfoResult out;
  out.per_step = Vector::Zero(e.horizon());

  Tokens cont;
  std::vector<double> w(K);
  for (int k = 0; k < K; ++k) w[k] = e.prior.probs[k];

  const std::function<void(std::vector<double>&)> node =
      [&](std::vector<double>& weights) {
        const int depth = static_cast<int>(cont.size());
        if (depth == e.horizon()) return;
        double W = 0.0;
        for (double x : weights) W += x;
        if (W <= 0.0) return;
        std::vector<Vector> dists(K);
        Vector m = Vector::Zero(e.N);
        for (int k = 0; k < K; ++k) {
          if (weights[k] <= 0.0) continue;
          dists[k] = e.conditional(k, cont);
          m += (weights[k] / W) * dists[k];
        }
        double term = 0.0;
        for (int k = 0; k < K; ++k) {
          if (weights[k] <= 0.0) continue;
          for (int u = 0; u < e.N; ++u) {
            const double q = dists[k][u];
            if (q <= 0.0) continue;
            term += weights[k] * q * std::log(q / m[u]);
          }
        }
        out.per_step[depth] += term;
        std::vector<double> child(K);
        for (int u = 0; u < e.N; ++u) {
          double mass = 0.0;
          for (int k = 0; k < K; ++k) {
            child[k] = weights[k] <= 0.0 ? 0.0 : weights[k] * dists[k][u];
            mass += child[k];
          }
          if (mass <= 0.0) continue;
          cont.push_back(u);
          node(child);
          cont.pop_back();
        }
      };
  node(w);
  out.total = out.per_step.sum();
  return out;
}

inline double directed_information(const SequenceEnsemble& e) {
  return directed_information_terms(e).total;
}

// I(S_{1:n}; U_{n+1:T}) straight from the joint table.
inline double mutual_information(const SequenceEnsemble& e) {
  const std::int64_t A = e.continuations();
  const int K = static_cast<int>(e.prior.prompts.size());
  Vector pu = Vector::Zero(A);
  for (int k = 0; k < K; ++k)
    for (std::int64_t a = 0; a < A; ++a) {
      const double lp = e.joint_log[k * A + a];
      if (lp > kNegInf) pu[a] += std::exp(lp);
    }
  double mi = 0.0;
  for (int k = 0; k < K; ++k) {
    const double ps = e.prior.probs[k];
    if (ps <= 0.0) continue;
    for (std::int64_t a = 0; a < A; ++a) {
      const double lp = e.joint_log[k * A + a];
      if (lp <= kNegInf) continue;
      const double p = std::exp(lp);
      mi += p * (lp - std::log(ps) - std::log(pu[a]));
    }
  }
  return mi;
}

// sum_t I(X_{t+1:n}; Y_t | Y_{1:t-1}) with X the prompt and Y the
// continuation; terms with an empty prompt suffix vanish.
inline double backward_directed_information(const SequenceEnsemble& e) {
  const std::int64_t A = e.continuations();
  const int K = static_cast<int>(e.prior.prompts.size());
  const int steps = e.horizon();
  double total = 0.0;
  for (int t = 1; t <= steps && t + 1 <= e.n; ++t) {
    const int suffix_len = e.n - t;           // X_{t+1:n}
    std::map<std::int64_t, double> pabc, pac, pbc, pc;
    const std::int64_t cdiv = pow_i64(e.N, steps - t);        // strip Y_{t+1:}
    const std::int64_t bdiv = pow_i64(e.N, steps - t + 1);
    for (int k = 0; k < K; ++k) {
      Tokens suffix(e.prior.prompts[k].end() - suffix_len,
                    e.prior.prompts[k].end());
      const std::int64_t a = pack_tokens(suffix, e.N);
      for (std::int64_t idx = 0; idx < A; ++idx) {
        const double lp = e.joint_log[k * A + idx];
        if (lp <= kNegInf) continue;
        const double p = std::exp(lp);
        const std::int64_t c = idx / bdiv;                    // Y_{1:t-1}
        const std::int64_t b = (idx / cdiv) % e.N;            // Y_t
        pabc[(a * e.N + b) * bdiv + c] += p;
        pac[a * bdiv + c] += p;
        pbc[b * bdiv + c] += p;
        pc[c] += p;
      }
    }
    for (const auto& [key, p] : pabc) {
      if (p <= 0.0) continue;
      const std::int64_t c = key % bdiv;
      const std::int64_t ab = key / bdiv;
      const std::int64_t b = ab % e.N;
      const std::int64_t a = ab / e.N;
      total += p * std::log(p * pc[c] / (pac[a * bdiv + c] * pbc[b * bdiv + c]));
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Pathwise densities and semantic flow
// ---------------------------------------------------------------------------

// Cumulative directed-information density sum_t log P(u_t|u_{<t},s)/P(u_t|u_{<t})
// along the given (possibly partial) continuation.
inline double information_density(const SequenceEnsemble& e,
                                  const Tokens& prompt,
                                  const Tokens& continuation) {
  const int k = e.prompt_index(prompt);
  if (e.prior.probs[k] <= 0.0)
    throw std::domain_error("information_density: zero-probability prompt");
  double acc = 0.0;
  Tokens prefix;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    prefix.assign(continuation.begin(),
                  continuation.begin() + static_cast<long>(i));
    const Vector cond = e.conditional(k, prefix);
    const Vector marg = e.marginal_next(prefix);
    const int u = continuation[i];
    require(u >= 0 && u < e.N, "information_density: token out of range");
    if (cond[u] <= 0.0 || marg[u] <= 0.0)
      throw std::domain_error("information_density: zero-probability path");
    acc += std::log(cond[u] / marg[u]);
  }
  return acc;
}

struct FlowTrace {
  Vector densities;   // per-step density increments
  Vector cumulative;  // running flow
  Vector M;           // martingale component
  Vector A;           // predictable non-decreasing component
  Vector V;           // cumulative conditional second moments
};

// Doob decomposition of the flow along one path. The A increment at each step
// is the exact conditional KL between the prompt-conditional law and the
// prior-mixture law given the realized past.
inline FlowTrace semantic_flow(const SequenceEnsemble& e, const Tokens& prompt,
                               const Tokens& continuation) {
  const int k = e.prompt_index(prompt);
  if (e.prior.probs[k] <= 0.0)
    throw std::domain_error("semantic_flow: zero-probability prompt");
  const int steps = static_cast<int>(continuation.size());
  require(steps <= e.horizon(), "semantic_flow: continuation too long");
  FlowTrace tr;
  tr.densities = Vector::Zero(steps);
  tr.cumulative = Vector::Zero(steps);
  tr.M = Vector::Zero(steps);
  tr.A = Vector::Zero(steps);
  tr.V = Vector::Zero(steps);

  const int K = static_cast<int>(e.prior.prompts.size());
  Vector w = e.prior.probs;
  Tokens prefix;
  double cum = 0.0, acum = 0.0, vcum = 0.0;
  for (int i = 0; i < steps; ++i) {
    prefix.assign(continuation.begin(), continuation.begin() + i);
    std::vector<Vector> dists(K);
    const double W = w.sum();
    Vector m = Vector::Zero(e.N);
    for (int j = 0; j < K; ++j) {
      if (w[j] <= 0.0) continue;
      dists[j] = e.conditional(j, prefix);
      m += (w[j] / W) * dists[j];
    }
    const Vector& pstar = dists[k];
    const int u = continuation[i];
    require(u >= 0 && u < e.N, "semantic_flow: token out of range");
    if (w[k] <= 0.0 || pstar.size() == 0 || pstar[u] <= 0.0)
      throw std::domain_error("semantic_flow: zero-probability path");

    double a_inc = 0.0;
    for (int v = 0; v < e.N; ++v)
      if (pstar[v] > 0.0) a_inc += pstar[v] * std::log(pstar[v] / m[v]);
    double v_inc = 0.0;
    for (int v = 0; v < e.N; ++v) {
      if (pstar[v] <= 0.0) continue;
      const double dv = std::log(pstar[v] / m[v]) - a_inc;
      v_inc += pstar[v] * dv * dv;
    }
    const double dens = std::log(pstar[u] / m[u]);
    cum += dens;
    acum += a_inc;
    vcum += v_inc;
    tr.densities[i] = dens;
    tr.cumulative[i] = cum;
    tr.A[i] = acum;
    tr.V[i] = vcum;
    tr.M[i] = cum - acum;

    for (int j = 0; j < K; ++j) {
      if (w[j] <= 0.0) continue;
      w[j] *= dists[j][u];
    }
  }
  return tr;
}

// Joint sample (prompt index, full continuation) from the ensemble.
inline std::pair<int, Tokens> sample_path(const SequenceEnsemble& e, Rng& rng) {
  const int k = rng.sample(e.prior.probs);
  Tokens cont;
  for (int i = 0; i < e.horizon(); ++i)
    cont.push_back(rng.sample(e.conditional(k, cont)));
  return {k, cont};
}

struct SubmartingaleReport {
  int paths = 0;
  int violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
};

// The flow is a submartingale: the exact conditional expected increment at
// every step equals the A increment, which is a KL and hence nonnegative.
inline SubmartingaleReport submartingale_check(const SequenceEnsemble& e,
                                               int num_paths,
                                               std::uint64_t seed) {
  SubmartingaleReport rep;
  rep.paths = num_paths;
  Rng rng(seed);
  for (int p = 0; p < num_paths; ++p) {
    const auto [k, cont] = sample_path(e, rng);
    const FlowTrace tr = semantic_flow(e, e.prior.prompts[k], cont);
    double prev = 0.0;
    for (int i = 0; i < tr.A.size(); ++i) {
      const double margin = tr.A[i] - prev;
      prev = tr.A[i];
      rep.min_margin = std::min(rep.min_margin, margin);
      if (margin < -1e-10) ++rep.violations;
    }
  }
  return rep;
}

struct FreedmanCell {
  double alpha = 0.0;
  double beta = 0.0;
  double empirical = 0.0;
  double bound = 0.0;
};

inline double freedman_bound(double alpha, double beta) {
  return std::exp(-alpha * alpha / (2.0 * (alpha + beta)));
}

// Terminal (M_T, V_T) frequencies against exp(-alpha^2 / (2(alpha+beta))).
inline std::vector<FreedmanCell> freedman_check(const SequenceEnsemble& e,
                                                const std::vector<double>& alphas,
                                                const std::vector<double>& betas,
                                                int num_paths,
                                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<double, double>> terminals;
  terminals.reserve(num_paths);
  for (int p = 0; p < num_paths; ++p) {
    const auto [k, cont] = sample_path(e, rng);
    const FlowTrace tr = semantic_flow(e, e.prior.prompts[k], cont);
    const int last = static_cast<int>(tr.M.size()) - 1;
    terminals.emplace_back(tr.M[last], tr.V[last]);
  }
  std::vector<FreedmanCell> cells;
  for (double alpha : alphas)
    for (double beta : betas) {
      int count = 0;
      for (const auto& [m, v] : terminals)
        if (m > alpha && v < beta) ++count;
      cells.push_back({alpha, beta,
                       static_cast<double>(count) / num_paths,
                       freedman_bound(alpha, beta)});
    }
  return cells;
}

struct OptionalStoppingResult {
  double full_horizon = 0.0;
  double first_step = 0.0;
};

inline OptionalStoppingResult optional_stopping_check(
    const SequenceEnsemble& e) {
  const DirectedInfoResult di = directed_information_terms(e);
  if (di.total < di.per_step[0] - 1e-10)
    throw std::runtime_error(
        "optional_stopping_check: stopped flow exceeds full-horizon flow");
  return {di.total, di.per_step[0]};
}

// ---------------------------------------------------------------------------
// Donsker-Varadhan estimator
// ---------------------------------------------------------------------------

struct DvOptions {
  int samples = 4000;       // per side, training
  int eval_samples = 8000;  // per side, reported objective
  int width = 32;
  int steps = 2000;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

struct DvResult {
  double estimate = 0.0;
  bool diverged = false;
};

namespace detail {

// Reference-measure sampler: prompt from the prior, continuation from the
// sequential marginal chain P(U_t | U_{<t}).
class MarginalChainSampler {
 public:
  explicit MarginalChainSampler(const SequenceEnsemble& e) : e_(e) {}

  Tokens sample(Rng& rng) {
    Tokens cont;
    for (int i = 0; i < e_.horizon(); ++i) {
      const auto key = std::make_pair(static_cast<int>(cont.size()),
                                      pack_tokens(cont, e_.N));
      auto it = cache_.find(key);
      if (it == cache_.end())
        it = cache_.emplace(key, e_.marginal_next(cont)).first;
      cont.push_back(rng.sample(it->second));
    }
    return cont;
  }

 private:
  const SequenceEnsemble& e_;
  std::map<std::pair<int, std::int64_t>, Vector> cache_;
};

}  // namespace detail

// Two-layer tanh network trained by full-batch gradient ascent on
// E_joint[f] - log E_ref[exp f]; the reported estimate is the objective on
// held-out samples, which keeps the finite-sample bias small.
inline DvResult dv_estimate(const SequenceEnsemble& e,
                            const DvOptions& opt = {}) {
  require(opt.samples >= 1000, "dv_estimate: need at least 10^3 samples");
  Rng rng(opt.seed);
  detail::MarginalChainSampler ref_sampler(e);

  const int D = e.n * e.N + e.horizon() * e.N;
  const auto encode = [&](int k, const Tokens& cont, Eigen::RowVectorXd& row) {
    row.setZero();
    const Tokens& pr = e.prior.prompts[k];
    for (int i = 0; i < e.n; ++i) row[i * e.N + pr[i]] = 1.0;
    for (int i = 0; i < e.horizon(); ++i)
      row[(e.n + i) * e.N + cont[i]] = 1.0;
  };

  const auto draw_joint = [&](Matrix& X) {
    Eigen::RowVectorXd row(D);
    for (int s = 0; s < X.rows(); ++s) {
      const auto [k, cont] = sample_path(e, rng);
      encode(k, cont, row);
      X.row(s) = row;
    }
  };
  const auto draw_ref = [&](Matrix& X) {
    Eigen::RowVectorXd row(D);
    for (int s = 0; s < X.rows(); ++s) {
      const int k = rng.sample(e.prior.probs);
      encode(k, ref_sampler.sample(rng), row);
      X.row(s) = row;
    }
  };

  Matrix XJ(opt.samples, D), XR(opt.samples, D);
  Matrix EJ(opt.eval_samples, D), ER(opt.eval_samples, D);
  draw_joint(XJ);
  draw_ref(XR);
  draw_joint(EJ);
  draw_ref(ER);

  Matrix W1(opt.width, D);
  Vector b1 = Vector::Zero(opt.width);
  Vector w2(opt.width);
  double b2 = 0.0;
  for (int i = 0; i < opt.width; ++i)
    for (int j = 0; j < D; ++j) W1(i, j) = rng.gaussian() / std::sqrt(D);
  for (int i = 0; i < opt.width; ++i)
    w2[i] = rng.gaussian() / std::sqrt(opt.width);

  const auto forward = [&](const Matrix& X, Matrix& H) {
    H = ((X * W1.transpose()).rowwise() + b1.transpose()).array().tanh();
    return (H * w2).array() + b2;
  };
  const auto objective_of = [&](const Vector& fJ, const Vector& fR) {
    const double mx = fR.maxCoeff();
    const double z = (fR.array() - mx).exp().mean();
    return fJ.mean() - (std::log(z) + mx);
  };

  DvResult result;
  Matrix HJ, HR;
  for (int it = 0; it < opt.steps; ++it) {
    const Vector fJ = forward(XJ, HJ);
    const Vector fR = forward(XR, HR);
    if (!fJ.allFinite() || !fR.allFinite()) {
      result.diverged = true;
      break;
    }
    const Vector gJ =
        Vector::Constant(XJ.rows(), 1.0 / static_cast<double>(XJ.rows()));
    const double mx = fR.maxCoeff();
    Vector eR = (fR.array() - mx).exp();
    const Vector gR = -eR / eR.sum();

    Matrix gW1 = Matrix::Zero(opt.width, D);
    Vector gb1 = Vector::Zero(opt.width);
    Vector gw2 = Vector::Zero(opt.width);
    double gb2 = 0.0;
    const auto backprop = [&](const Matrix& X, const Matrix& H,
                              const Vector& gf) {
      gw2 += H.transpose() * gf;
      gb2 += gf.sum();
      const Matrix gH =
          (gf * w2.transpose()).array() * (1.0 - H.array().square());
      gW1 += gH.transpose() * X;
      gb1 += gH.colwise().sum().transpose();
    };
    backprop(XJ, HJ, gJ);
    backprop(XR, HR, gR);

    W1 += opt.lr * gW1;
    b1 += opt.lr * gb1;
    w2 += opt.lr * gw2;
    b2 += opt.lr * gb2;
  }
  Matrix HE;
  const Vector fJ = forward(EJ, HE);
  const Vector fR = forward(ER, HE);
  if (!fJ.allFinite() || !fR.allFinite()) {
    result.diverged = true;
    return result;
  }
  result.estimate = objective_of(fJ, fR);
  return result;
}

}  // namespace tokscope
