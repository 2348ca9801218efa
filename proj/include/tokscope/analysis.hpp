#pragma once

// Composed experiments: rate-distortion and rate-reward sweeps, the
// pre-training endpoint check, semantic capacity over prompt priors, ELBO
// identities of the latent-position model, the generalization bound, Fisher
// information by second differences, and the semantic-encoder objective with
// its CPC upper bound.

#include <tokscope/training.hpp>

#include <optional>

namespace tokscope {

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepConfig {
  std::vector<double> lambda_grid;
  int steps = 2000;
  double lr = 0.5;
  int T = 0;
  int student_d = 3;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;  // grid points are independent jobs
};

inline void validate_sweep(const SweepConfig& cfg) {
  require(!cfg.lambda_grid.empty(), "sweep: empty lambda grid");
  require(cfg.steps >= 1, "sweep: budget must be >= 1");
  require(cfg.lr > 0.0, "sweep: lr must be positive");
  require(cfg.student_d >= 1, "sweep: bad student dimension");
}

struct RdPoint {
  double lambda = 0.0;
  double distortion = 0.0;  // mean KL per token, exact
  double rate = 0.0;        // DI / T, exact
  bool diverged = false;
};

struct RdCurve {
  std::vector<RdPoint> points;  // sorted by distortion
  std::vector<RdPoint> pareto;  // dominated points removed
};

inline std::vector<RdPoint> pareto_filter(std::vector<RdPoint> pts) {
  std::vector<RdPoint> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].diverged) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (j == i || pts[j].diverged) continue;
      const bool leq = pts[j].distortion <= pts[i].distortion &&
                       pts[j].rate <= pts[i].rate;
      const bool strict = pts[j].distortion < pts[i].distortion ||
                          pts[j].rate < pts[i].rate;
      if (leq && (strict || j < i)) dominated = true;
    }
    if (!dominated) keep.push_back(pts[i]);
  }
  std::sort(keep.begin(), keep.end(),
            [](const RdPoint& a, const RdPoint& b) {
              return a.distortion < b.distortion;
            });
  return keep;
}

inline RdCurve rd_sweep(const TeacherProcess& teacher, const SweepConfig& cfg) {
  validate_sweep(cfg);
  RdCurve curve;
  const TransformerParams init =
      random_params(teacher.alphabet.size, cfg.student_d, cfg.seed,
                    cfg.init_scale, 1.0, teacher.alphabet.stop_token);
  const int G = static_cast<int>(cfg.lambda_grid.size());
  std::vector<RdPoint> pts(cfg.lambda_grid.size());
  std::vector<std::string> errors(cfg.lambda_grid.size());
  parallel_for(G, cfg.threads, [&](int i) {
    RdPoint pt;
    pt.lambda = cfg.lambda_grid[static_cast<std::size_t>(i)];
    TrainOptions opt;
    opt.steps = cfg.steps;
    opt.lr = cfg.lr;
    opt.variant = LossVariant::ce_plus_di;
    opt.lambda = pt.lambda;
    opt.T = cfg.T;
    try {
      const TrainResult tr = train(init, teacher, opt);
      pt.distortion = fit_report(tr.params, teacher, cfg.T).kl / cfg.T;
      const SequenceEnsemble e =
          build_ensemble(teacher.prompt_prior, make_law(tr.params), cfg.T);
      pt.rate = directed_information(e) / cfg.T;
    } catch (const std::runtime_error&) {
      pt.diverged = true;
    } catch (const std::exception& ex) {
      errors[static_cast<std::size_t>(i)] = ex.what();
    }
    pts[static_cast<std::size_t>(i)] = pt;
  });
  for (const std::string& err : errors)
    if (!err.empty()) throw std::invalid_argument(err);
  curve.points = std::move(pts);
  std::sort(curve.points.begin(), curve.points.end(),
            [](const RdPoint& a, const RdPoint& b) {
              if (a.diverged != b.diverged) return !a.diverged;
              return a.distortion < b.distortion;
            });
  curve.pareto = pareto_filter(curve.points);
  return curve;
}

struct Theorem1Result {
  double mean_kl = 0.0;  // per token
  double di_student = 0.0;
  double di_teacher = 0.0;
  double di_gap = 0.0;
};

inline Theorem1Result verify_theorem1(const TeacherProcess& teacher,
                                      const TransformerParams& student_init,
                                      int steps, double lr, int T) {
  TrainOptions opt;
  opt.steps = steps;
  opt.lr = lr;
  opt.variant = LossVariant::ce;
  opt.T = T;
  const TrainResult tr = train(student_init, teacher, opt);
  Theorem1Result out;
  out.mean_kl = fit_report(tr.params, teacher, T).kl / T;
  out.di_teacher = directed_information(build_ensemble(teacher, T));
  out.di_student = directed_information(
      build_ensemble(teacher.prompt_prior, make_law(tr.params), T));
  out.di_gap = std::abs(out.di_student - out.di_teacher);
  return out;
}

inline double expected_reward(const SequenceEnsemble& e,
                              const RewardFunction& reward) {
  const std::int64_t A = e.continuations();
  double acc = 0.0;
  for (std::size_t k = 0; k < e.prior.prompts.size(); ++k)
    for (std::int64_t a = 0; a < A; ++a) {
      const double lp = e.joint_log[static_cast<std::int64_t>(k) * A + a];
      if (lp <= kNegInf) continue;
      const Tokens cont = unpack_tokens(a, e.N, e.horizon());
      const double w = reward(e.prior.prompts[k], cont);
      require(std::isfinite(w), "expected_reward: non-finite reward");
      acc += std::exp(lp) * w;
    }
  return acc;
}

struct RrPoint {
  double lambda = 0.0;
  double expected_w = 0.0;  // exact E[w] under the trained model
  double rate = 0.0;        // DI / T
  bool diverged = false;
};

struct RrCurve {
  std::vector<RrPoint> points;  // in lambda-grid order
};

inline RrCurve rr_sweep(const TeacherProcess& teacher, const SweepConfig& cfg,
                        const RewardFunction& reward) {
  validate_sweep(cfg);
  require(static_cast<bool>(reward), "rr_sweep: reward required");
  RrCurve curve;
  const TransformerParams init =
      random_params(teacher.alphabet.size, cfg.student_d, cfg.seed,
                    cfg.init_scale, 1.0, teacher.alphabet.stop_token);
  const int G = static_cast<int>(cfg.lambda_grid.size());
  std::vector<RrPoint> pts(cfg.lambda_grid.size());
  std::vector<std::string> errors(cfg.lambda_grid.size());
  parallel_for(G, cfg.threads, [&](int i) {
    RrPoint pt;
    pt.lambda = cfg.lambda_grid[static_cast<std::size_t>(i)];
    TrainOptions opt;
    opt.steps = cfg.steps;
    opt.lr = cfg.lr;
    opt.variant = LossVariant::di_minus_reward;
    opt.lambda = pt.lambda;
    opt.T = cfg.T;
    opt.reward = reward;
    try {
      const TrainResult tr = train(init, teacher, opt);
      const SequenceEnsemble e =
          build_ensemble(teacher.prompt_prior, make_law(tr.params), cfg.T);
      pt.expected_w = expected_reward(e, reward);
      pt.rate = directed_information(e) / cfg.T;
    } catch (const std::runtime_error&) {
      pt.diverged = true;
    } catch (const std::exception& ex) {
      errors[static_cast<std::size_t>(i)] = ex.what();
    }
    pts[static_cast<std::size_t>(i)] = pt;
  });
  for (const std::string& err : errors)
    if (!err.empty()) throw std::invalid_argument(err);
  curve.points = std::move(pts);
  return curve;
}

// ---------------------------------------------------------------------------
// Semantic capacity
// ---------------------------------------------------------------------------

// P(continuation | prompt) rows for a fixed law with stop absorption;
// row-stochastic K x N^(T-n) matrix.
inline Matrix channel_matrix(const ConditionalLaw& law,
                             const std::vector<Tokens>& prompts, int T) {
  require(!prompts.empty(), "channel_matrix: no prompts");
  const int K = static_cast<int>(prompts.size());
  PromptPrior prior;
  prior.length = static_cast<int>(prompts[0].size());
  prior.prompts = prompts;
  prior.probs = Vector::Constant(K, 1.0 / K);
  const SequenceEnsemble e = build_ensemble(prior, law, T);
  const std::int64_t A = e.continuations();
  Matrix C = Matrix::Zero(K, A);
  for (int k = 0; k < K; ++k)
    for (std::int64_t a = 0; a < A; ++a) {
      const double lp = e.joint_log[k * A + a];
      if (lp > kNegInf) C(k, a) = std::exp(lp) * K;
    }
  return C;
}

namespace detail {

inline double channel_information(const Matrix& C, const Vector& p) {
  const Vector mix = C.transpose() * p;
  double info = 0.0;
  for (long k = 0; k < C.rows(); ++k) {
    if (p[k] <= 0.0) continue;
    for (long a = 0; a < C.cols(); ++a) {
      if (C(k, a) <= 0.0) continue;
      info += p[k] * C(k, a) * std::log(C(k, a) / mix[a]);
    }
  }
  return info;
}

// Per-prompt relative-entropy terms D_k = KL(C_k || mixture).
inline Vector channel_divergences(const Matrix& C, const Vector& p) {
  const Vector mix = C.transpose() * p;
  Vector d = Vector::Zero(C.rows());
  for (long k = 0; k < C.rows(); ++k)
    for (long a = 0; a < C.cols(); ++a) {
      if (C(k, a) <= 0.0) continue;
      d[k] += C(k, a) * std::log(C(k, a) / (mix[a] > 0.0 ? mix[a] : C(k, a)));
    }
  return d;
}

}  // namespace detail

enum class CapacityMethod { grid, alternating };

struct CapacityResult {
  bool feasible = true;
  double capacity = 0.0;
  Vector prior;
};

// Maximize DI over prompt priors, optionally subject to E[w] > W. The grid
// method scans the simplex at resolution 0.05 and then refines by pairwise
// mass moves; the alternating method runs a Blahut-Arimoto style fixed point
// with a bisected reward tilt.
inline CapacityResult semantic_capacity(const ConditionalLaw& law,
                                        const std::vector<Tokens>& prompts,
                                        int T, const RewardFunction* reward,
                                        double W, CapacityMethod method) {
  const int K = static_cast<int>(prompts.size());
  require(K >= 1, "semantic_capacity: no prompts");
  const Matrix C = channel_matrix(law, prompts, T);
  const int horizon = T - static_cast<int>(prompts[0].size());

  Vector wbar = Vector::Zero(K);
  if (reward) {
    for (int k = 0; k < K; ++k)
      for (long a = 0; a < C.cols(); ++a) {
        if (C(k, a) <= 0.0) continue;
        wbar[k] += C(k, a) * (*reward)(prompts[k], unpack_tokens(a, law.alphabet_size, horizon));
      }
    if (wbar.maxCoeff() <= W) {
      CapacityResult out;
      out.feasible = false;
      out.prior = Vector::Constant(K, 1.0 / K);
      return out;
    }
  }
  const auto feasible = [&](const Vector& p) {
    return !reward || p.dot(wbar) > W;
  };

  CapacityResult out;
  out.prior = Vector::Constant(K, 1.0 / K);
  out.capacity = -std::numeric_limits<double>::infinity();

  if (method == CapacityMethod::grid) {
    require(K <= 4, "semantic_capacity: grid method limited to 4 prompts");
    const int G = 20;  // resolution 0.05
    Vector p = Vector::Zero(K);
    std::vector<int> counts(K, 0);
    const std::function<void(int, int)> scan = [&](int idx, int left) {
      if (idx == K - 1) {
        counts[idx] = left;
        for (int k = 0; k < K; ++k) p[k] = static_cast<double>(counts[k]) / G;
        if (feasible(p)) {
          const double info = detail::channel_information(C, p);
          if (info > out.capacity) {
            out.capacity = info;
            out.prior = p;
          }
        }
        return;
      }
      for (int c = 0; c <= left; ++c) {
        counts[idx] = c;
        scan(idx + 1, left - c);
      }
    };
    scan(0, G);
    for (double delta : {2e-2, 5e-3, 1e-3, 2e-4, 5e-5}) {
      bool improved = true;
      int guard = 0;
      while (improved && guard++ < 500) {
        improved = false;
        for (int i = 0; i < K; ++i)
          for (int j = 0; j < K; ++j) {
            if (i == j || out.prior[i] < delta) continue;
            Vector q = out.prior;
            q[i] -= delta;
            q[j] += delta;
            if (!feasible(q)) continue;
            const double info = detail::channel_information(C, q);
            if (info > out.capacity + 1e-15) {
              out.capacity = info;
              out.prior = q;
              improved = true;
            }
          }
      }
    }
    return out;
  }

  const auto ba_fixed_point = [&](double gamma) {
    Vector p = Vector::Constant(K, 1.0 / K);
    for (int it = 0; it < 2000; ++it) {
      const Vector d = detail::channel_divergences(C, p);
      Vector logp(K);
      for (int k = 0; k < K; ++k)
        logp[k] = (p[k] > 0.0 ? std::log(p[k]) : kNegInf) + d[k] + gamma * wbar[k];
      p = softmax(logp);
      double active_max = kNegInf, avg = 0.0;
      const Vector d2 = detail::channel_divergences(C, p);
      for (int k = 0; k < K; ++k) {
        avg += p[k] * d2[k];
        active_max = std::max(active_max, d2[k] + gamma * wbar[k]);
      }
      const double tilted_avg = avg + gamma * p.dot(wbar);
      if (active_max - tilted_avg <= 1e-13) break;
    }
    return p;
  };

  Vector p = ba_fixed_point(0.0);
  if (!feasible(p)) {
    double lo = 0.0, hi = 1.0;
    while (!feasible(ba_fixed_point(hi)) && hi < 1e12) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (feasible(ba_fixed_point(mid)))
        hi = mid;
      else
        lo = mid;
    }
    p = ba_fixed_point(hi);
  }
  out.prior = p;
  out.capacity = detail::channel_information(C, p);
  return out;
}

inline CapacityResult semantic_capacity(const TransformerParams& model,
                                        const std::vector<Tokens>& prompts,
                                        int T, const RewardFunction* reward,
                                        double W, CapacityMethod method) {
  return semantic_capacity(make_law(model), prompts, T, reward, W, method);
}

// ---------------------------------------------------------------------------
// ELBO identities of the latent-position model
// ---------------------------------------------------------------------------

struct ElboResult {
  double elbo = 0.0;
  double loglik = 0.0;
  double gap = 0.0;
};

namespace detail {

// log P(target | j) for each latent position j under the fixed-position head
// softmax((1/Xi) * embedding * A * u_j).
inline Vector latent_loglik(const TransformerParams& params,
                            const Matrix& history, int target) {
  const long J = history.rows();
  Vector out(J);
  for (long j = 0; j < J; ++j) {
    const Vector z =
        params.embedding * (params.A * history.row(j).transpose()) / params.xi;
    out[j] = z[target] - log_sum_exp(z);
  }
  return out;
}

}  // namespace detail

inline ElboResult elbo_training(const TransformerParams& params,
                                const Tokens& prefix, int target,
                                bool use_posterior_q = false) {
  validate_params(params);
  require(!prefix.empty(), "elbo_training: empty prefix");
  require(target >= 0 && target < params.N, "elbo_training: bad target");
  const Matrix history = embed(params, prefix);
  const long J = history.rows();
  const Vector ll = detail::latent_loglik(params, history, target);
  Vector log_joint = ll.array() - std::log(static_cast<double>(J));
  ElboResult out;
  out.loglik = log_sum_exp(log_joint);
  const Vector q = use_posterior_q
                       ? softmax(log_joint)
                       : attention_weights(params, history);
  for (long j = 0; j < J; ++j) {
    if (q[j] <= 0.0) continue;
    out.elbo += q[j] * (log_joint[j] - std::log(q[j]));
  }
  out.gap = out.loglik - out.elbo;
  return out;
}

inline ElboResult elbo_training(
    const TransformerParams& params,
    const std::vector<std::pair<Tokens, int>>& batch,
    bool use_posterior_q = false) {
  require(!batch.empty(), "elbo_training: empty batch");
  ElboResult mean;
  for (const auto& [prefix, target] : batch) {
    const ElboResult r = elbo_training(params, prefix, target, use_posterior_q);
    mean.elbo += r.elbo;
    mean.loglik += r.loglik;
    mean.gap += r.gap;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.elbo *= inv;
  mean.loglik *= inv;
  mean.gap *= inv;
  return mean;
}

struct InferenceRow {
  double elbo = 0.0;
  double exact = 0.0;  // log sum_j P(j) P(candidate | j)
};

struct InferenceTable {
  std::vector<InferenceRow> rows;  // one per candidate token
  int argmax_elbo = 0;
  int argmax_exact = 0;
  bool argmax_match = false;
};

inline InferenceTable elbo_inference(const TransformerParams& params,
                                     const Tokens& prefix) {
  validate_params(params);
  require(!prefix.empty(), "elbo_inference: empty prefix");
  const Matrix history = embed(params, prefix);
  const long J = history.rows();
  const Vector q = attention_weights(params, history);
  InferenceTable table;
  table.rows.resize(params.N);
  for (int y = 0; y < params.N; ++y) {
    const Vector ll = detail::latent_loglik(params, history, y);
    const Vector log_joint = ll.array() - std::log(static_cast<double>(J));
    InferenceRow row;
    row.exact = log_sum_exp(log_joint);
    for (long j = 0; j < J; ++j) {
      if (q[j] <= 0.0) continue;
      row.elbo += q[j] * (log_joint[j] - std::log(q[j]));
    }
    if (row.elbo > row.exact + 1e-12)
      throw std::runtime_error("elbo_inference: ELBO exceeded log marginal");
    table.rows[y] = row;
  }
  for (int y = 1; y < params.N; ++y) {
    if (table.rows[y].elbo > table.rows[table.argmax_elbo].elbo)
      table.argmax_elbo = y;
    if (table.rows[y].exact > table.rows[table.argmax_exact].exact)
      table.argmax_exact = y;
  }
  table.argmax_match = table.argmax_elbo == table.argmax_exact;
  return table;
}

// ---------------------------------------------------------------------------
// Generalization bound
// ---------------------------------------------------------------------------

struct BoundResult {
  double empirical = 0.0;
  double logit_term = 0.0;
  double deviation_term = 0.0;
  double bound = 0.0;
  double true_ce = 0.0;
  double margin = 0.0;
};

// Bound = empirical loss + (2*sqrt(2)/M) * sum_m |z_m| + 3*sqrt(ln(2/delta)/(2M))
// against the exact expected cross-entropy at prediction step t.
inline BoundResult generalization_bound(const TransformerParams& params,
                                        const TeacherProcess& teacher, int M,
                                        double delta, std::uint64_t seed,
                                        int t) {
  require(M >= 2, "generalization_bound: need M >= 2");
  require(delta > 0.0 && delta < 1.0, "generalization_bound: delta in (0,1)");
  require(t > teacher.prompt_prior.length, "generalization_bound: bad step");
  const SequenceEnsemble e = build_ensemble(teacher, t);
  const int depth = e.horizon() - 1;

  BoundResult out;
  Tokens cont;
  const std::function<void(int, double)> walk = [&](int k, double mass) {
    if (static_cast<int>(cont.size()) == depth) {
      Tokens prefix = e.prior.prompts[k];
      prefix.insert(prefix.end(), cont.begin(), cont.end());
      const Vector truth = e.conditional(k, cont);
      const Vector q = next_token_distribution(params, prefix);
      out.true_ce += mass * cross_entropy(truth, q);
      return;
    }
    const Vector p = e.conditional(k, cont);
    for (int u = 0; u < e.N; ++u) {
      if (p[u] <= 0.0) continue;
      cont.push_back(u);
      walk(k, mass * p[u]);
      cont.pop_back();
    }
  };
  for (std::size_t k = 0; k < e.prior.prompts.size(); ++k) {
    if (e.prior.probs[k] <= 0.0) continue;
    walk(static_cast<int>(k), e.prior.probs[k]);
  }

  Rng rng(seed);
  double logit_sum = 0.0;
  for (int m = 0; m < M; ++m) {
    const int k = rng.sample(e.prior.probs);
    Tokens c;
    for (int i = 0; i < depth; ++i) c.push_back(rng.sample(e.conditional(k, c)));
    const int y = rng.sample(e.conditional(k, c));
    Tokens prefix = e.prior.prompts[k];
    prefix.insert(prefix.end(), c.begin(), c.end());
    const Vector z = next_token_logits(params, prefix);
    out.empirical += -(z[y] - log_sum_exp(z));
    logit_sum += std::abs(z[y]);
  }
  out.empirical /= M;
  out.logit_term = 2.0 * std::sqrt(2.0) / M * logit_sum;
  out.deviation_term = 3.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * M));
  out.bound = out.empirical + out.logit_term + out.deviation_term;
  out.margin = out.bound - out.true_ce;
  return out;
}

// ---------------------------------------------------------------------------
// Fisher information
// ---------------------------------------------------------------------------

struct ParamCoord {
  int matrix = 0;  // 0 selects A, 1 selects B
  int row = 0;
  int col = 0;
};

struct FisherResult {
  Matrix matrix;
  double min_eigenvalue = 0.0;
  double max_asymmetry = 0.0;
};

using ContextDistribution = std::vector<std::pair<Tokens, double>>;

namespace detail {

inline double perturbed_cross_entropy(const TransformerParams& params,
                                      const ContextDistribution& contexts,
                                      const std::vector<ParamCoord>& coords,
                                      const Vector& delta) {
  TransformerParams shifted = params;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    Matrix& target = coords[i].matrix == 0 ? shifted.A : shifted.B;
    target(coords[i].row, coords[i].col) += delta[static_cast<long>(i)];
  }
  double acc = 0.0;
  for (const auto& [prefix, weight] : contexts) {
    if (weight <= 0.0) continue;
    const Vector p = next_token_distribution(params, prefix);
    const Vector q = next_token_distribution(shifted, prefix);
    acc += weight * cross_entropy(p, q);
  }
  return acc;
}

}  // namespace detail

// [F]_ij = d^2/dPhi'_i dPhi'_j H(P(Phi), P(Phi')) at Phi' = Phi, by central
// second differences in the selected A/B coordinates.
inline FisherResult fisher_matrix(const TransformerParams& params,
                                  const ContextDistribution& contexts,
                                  const std::vector<ParamCoord>& coords,
                                  double h = 1e-3) {
  validate_params(params);
  require(!contexts.empty(), "fisher_matrix: empty context distribution");
  require(!coords.empty() && coords.size() <= 50,
          "fisher_matrix: subset size must be in [1, 50]");
  for (const auto& c : coords) {
    require(c.matrix == 0 || c.matrix == 1, "fisher_matrix: bad matrix tag");
    require(c.row >= 0 && c.row < params.d && c.col >= 0 && c.col < params.d,
            "fisher_matrix: coordinate out of range");
  }
  const int P = static_cast<int>(coords.size());
  const auto H = [&](const Vector& delta) {
    return detail::perturbed_cross_entropy(params, contexts, coords, delta);
  };
  const double h0 = H(Vector::Zero(P));

  Matrix F(P, P);
  for (int i = 0; i < P; ++i) {
    Vector d = Vector::Zero(P);
    d[i] = h;
    const double plus = H(d);
    d[i] = -h;
    const double minus = H(d);
    F(i, i) = (plus - 2.0 * h0 + minus) / (h * h);
    for (int j = i + 1; j < P; ++j) {
      Vector dd = Vector::Zero(P);
      dd[i] = h;
      dd[j] = h;
      const double pp = H(dd);
      dd[j] = -h;
      const double pm = H(dd);
      dd[i] = -h;
      const double mm = H(dd);
      dd[j] = h;
      const double mp = H(dd);
      const double val = (pp - pm - mp + mm) / (4.0 * h * h);
      F(i, j) = val;
      F(j, i) = val;
    }
  }
  FisherResult out;
  out.max_asymmetry = 0.0;  // symmetric by construction of the stencil
  out.matrix = 0.5 * (F + F.transpose());
  const Eigen::SelfAdjointEigenSolver<Matrix> es(out.matrix);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Semantic encoder objective and CPC bound
// ---------------------------------------------------------------------------

struct EncoderSpec {
  int num_codes = 0;
  int num_states = 0;
  int initial_state = 0;
  std::vector<int> codebook;                  // token -> code
  std::vector<std::vector<int>> transitions;  // [state][code] -> state
};

struct EncoderFamily {
  int num_tokens = 0;
  std::vector<EncoderSpec> members;
};

inline void validate_encoder(const EncoderSpec& spec, int num_tokens) {
  require(spec.num_codes >= 1 && spec.num_states >= 1, "encoder: bad sizes");
  require(spec.initial_state >= 0 && spec.initial_state < spec.num_states,
          "encoder: bad initial state");
  require(static_cast<int>(spec.codebook.size()) == num_tokens,
          "encoder: codebook size mismatch");
  for (int c : spec.codebook)
    require(c >= 0 && c < spec.num_codes, "encoder: code out of range");
  require(static_cast<int>(spec.transitions.size()) == spec.num_states,
          "encoder: transition table size mismatch");
  for (const auto& row : spec.transitions) {
    require(static_cast<int>(row.size()) == spec.num_codes,
            "encoder: transition row size mismatch");
    for (int s : row)
      require(s >= 0 && s < spec.num_states, "encoder: state out of range");
  }
}

// S_1 = initial state; S_t = transitions[S_{t-1}][codebook[X_{t-1}]].
inline std::vector<int> encoder_states(const EncoderSpec& spec,
                                       const Tokens& x) {
  std::vector<int> s(x.size());
  if (x.empty()) return s;
  s[0] = spec.initial_state;
  for (std::size_t t = 1; t < x.size(); ++t)
    s[t] = spec.transitions[s[t - 1]][spec.codebook[x[t - 1]]];
  return s;
}

// Every (codebook, transition table) pair over the given sizes, initial
// state 0, in lexicographic order.
inline EncoderFamily enumerate_encoder_family(int num_tokens, int num_codes,
                                              int num_states) {
  require(num_tokens >= 1 && num_codes >= 1 && num_states >= 1,
          "enumerate_encoder_family: bad sizes");
  const std::int64_t codebooks = pow_i64(num_codes, num_tokens);
  const std::int64_t tables = pow_i64(num_states, num_states * num_codes);
  require(codebooks * tables <= 100000,
          "enumerate_encoder_family: family too large");
  EncoderFamily fam;
  fam.num_tokens = num_tokens;
  for (std::int64_t cb = 0; cb < codebooks; ++cb)
    for (std::int64_t tb = 0; tb < tables; ++tb) {
      EncoderSpec spec;
      spec.num_codes = num_codes;
      spec.num_states = num_states;
      spec.initial_state = 0;
      spec.codebook.resize(num_tokens);
      std::int64_t c = cb;
      for (int i = 0; i < num_tokens; ++i) {
        spec.codebook[i] = static_cast<int>(c % num_codes);
        c /= num_codes;
      }
      spec.transitions.assign(num_states, std::vector<int>(num_codes));
      std::int64_t t = tb;
      for (int s = 0; s < num_states; ++s)
        for (int z = 0; z < num_codes; ++z) {
          spec.transitions[s][z] = static_cast<int>(t % num_states);
          t /= num_states;
        }
      fam.members.push_back(std::move(spec));
    }
  return fam;
}

// Enumerate teacher sequences of length n (stop-absorbed) with their masses.
inline void teacher_sequences(
    const TeacherProcess& teacher, int n,
    const std::function<void(const Tokens&, double)>& fn) {
  validate_teacher(teacher);
  require(n >= 1, "teacher_sequences: need n >= 1");
  require(pow_i64(teacher.alphabet.size, n) <= kEnsembleLimit,
          "teacher_sequences: N^n limit");
  Tokens x;
  const std::function<void(double, bool)> walk = [&](double mass,
                                                     bool absorbed) {
    if (static_cast<int>(x.size()) == n) {
      fn(x, mass);
      return;
    }
    if (absorbed) {
      x.push_back(teacher.alphabet.stop_token);
      walk(mass, true);
      x.pop_back();
      return;
    }
    const Vector p = exact_conditional(teacher, x);
    for (int u = 0; u < teacher.alphabet.size; ++u) {
      if (p[u] <= 0.0) continue;
      x.push_back(u);
      walk(mass * p[u], u == teacher.alphabet.stop_token);
      x.pop_back();
    }
  };
  walk(1.0, false);
}

// sum_t I(X_{t+1:n}; S_t | S_{1:t-1}) for the deterministic encoder driven by
// the teacher process.
inline double encoder_objective(const EncoderSpec& spec,
                                const TeacherProcess& teacher, int n) {
  validate_encoder(spec, teacher.alphabet.size);
  const int N = teacher.alphabet.size;
  const int S = spec.num_states;
  std::vector<std::pair<Tokens, double>> paths;
  teacher_sequences(teacher, n,
                    [&](const Tokens& x, double p) { paths.emplace_back(x, p); });

  double total = 0.0;
  for (int t = 1; t < n; ++t) {  // t = n has an empty future and a zero term
    std::map<std::int64_t, double> pabc, pac, pbc, pc;
    const std::int64_t cbase = pow_i64(S, t - 1);
    for (const auto& [x, p] : paths) {
      const std::vector<int> s = encoder_states(spec, x);
      std::int64_t a = 0;
      for (int i = t; i < n; ++i) a = a * N + x[i];  // X_{t+1:n}, 1-based
      const std::int64_t b = s[t - 1];
      std::int64_t ckey = 0;
      for (int i = 0; i < t - 1; ++i) ckey = ckey * S + s[i];
      pabc[(a * S + b) * cbase + ckey] += p;
      pac[a * cbase + ckey] += p;
      pbc[b * cbase + ckey] += p;
      pc[ckey] += p;
    }
    for (const auto& [key, p] : pabc) {
      if (p <= 0.0) continue;
      const std::int64_t ckey = key % cbase;
      const std::int64_t ab = key / cbase;
      const std::int64_t b = ab % S;
      const std::int64_t a = ab / S;
      total += p * std::log(p * pc[ckey] /
                            (pac[a * cbase + ckey] * pbc[b * cbase + ckey]));
    }
  }
  return total;
}

// I(X_{t+k}; S_t) for a single future offset, marginal over everything else.
inline double encoder_pairwise_mi(const EncoderSpec& spec,
                                  const TeacherProcess& teacher, int n, int t,
                                  int k) {
  require(t >= 1 && t + k <= n && k >= 1, "encoder_pairwise_mi: bad indices");
  const int S = spec.num_states;
  std::map<std::int64_t, double> pxy, px, py;
  std::vector<std::pair<Tokens, double>> paths;
  teacher_sequences(teacher, n,
                    [&](const Tokens& x, double p) { paths.emplace_back(x, p); });
  for (const auto& [x, p] : paths) {
    const std::vector<int> s = encoder_states(spec, x);
    const int xv = x[t + k - 1];
    const int sv = s[t - 1];
    pxy[xv * S + sv] += p;
    px[xv] += p;
    py[sv] += p;
  }
  double mi = 0.0;
  for (const auto& [key, p] : pxy) {
    if (p <= 0.0) continue;
    const std::int64_t sv = key % S;
    const std::int64_t xv = key / S;
    mi += p * std::log(p / (px[xv] * py[sv]));
  }
  return mi;
}

struct EmbeddingObjectiveResult {
  int best_index = -1;
  double best_value = 0.0;
  double cpc_bound = 0.0;  // sum_t sum_k max over family of I(X_{t+k}; S_t)
  std::vector<double> member_values;
  int bound_violations = 0;
};

inline EmbeddingObjectiveResult embedding_objective(
    const EncoderFamily& family, const TeacherProcess& teacher, int n) {
  require(!family.members.empty(), "embedding_objective: empty family");
  require(family.num_tokens == teacher.alphabet.size,
          "embedding_objective: alphabet mismatch");
  require(family.members.size() <= 100000,
          "embedding_objective: family too large");
  EmbeddingObjectiveResult out;
  out.member_values.reserve(family.members.size());
  for (std::size_t m = 0; m < family.members.size(); ++m) {
    const double value = encoder_objective(family.members[m], teacher, n);
    out.member_values.push_back(value);
    if (out.best_index < 0 || value > out.best_value) {
      out.best_index = static_cast<int>(m);
      out.best_value = value;
    }
  }
  for (int t = 1; t < n; ++t)
    for (int k = 1; t + k <= n; ++k) {
      double best_term = 0.0;
      for (const auto& member : family.members)
        best_term = std::max(best_term,
                             encoder_pairwise_mi(member, teacher, n, t, k));
      out.cpc_bound += best_term;
    }
  for (double v : out.member_values)
    if (v > out.cpc_bound + 1e-10) ++out.bound_violations;
  return out;
}

}  // namespace tokscope
