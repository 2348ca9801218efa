#pragma once

// Exact full-batch training of the toy Transformer against enumerable
// teachers. Cross-entropy terms use soft teacher targets over the live
// (stop-free) context tree; directed-information and expected-reward terms
// differentiate through the student's own path distribution with the
// score-function identity, evaluated exactly by tree recursion.

#include <tokscope/measures.hpp>

namespace tokscope {

using RewardFunction =
    std::function<double(const Tokens& prompt, const Tokens& continuation)>;

enum class LossVariant { ce, ce_plus_di, di_minus_reward };

struct TrainOptions {
  int steps = 1000;
  double lr = 0.5;
  LossVariant variant = LossVariant::ce;
  double lambda = 1.0;
  int T = 0;  // total sequence length for the DI / reward / CE ensembles
  RewardFunction reward;
};

struct TrainResult {
  TransformerParams params;
  std::vector<double> loss_trace;
};

// All live teacher contexts up to horizon T with their joint masses and soft
// next-token targets. Contexts that already emitted the stop token carry no
// information and are omitted.
inline std::vector<WeightedContext> teacher_contexts(
    const TeacherProcess& teacher, int T) {
  validate_teacher(teacher);
  const int N = teacher.alphabet.size;
  const int stop = teacher.alphabet.stop_token;
  const int n = teacher.prompt_prior.length;
  require(T > n, "teacher_contexts: horizon must exceed prompt length");
  require(pow_i64(N, T) <= kEnsembleLimit, "teacher_contexts: N^T limit");

  std::vector<WeightedContext> out;
  Tokens prefix;
  const std::function<void(double, int)> walk = [&](double mass, int len) {
    const Vector target = exact_conditional(teacher, prefix);
    out.push_back({prefix, mass, target});
    if (len + 1 >= T) return;
    for (int u = 0; u < N; ++u) {
      if (u == stop || target[u] <= 0.0) continue;
      prefix.push_back(u);
      walk(mass * target[u], len + 1);
      prefix.pop_back();
    }
  };
  for (std::size_t k = 0; k < teacher.prompt_prior.prompts.size(); ++k) {
    const double p = teacher.prompt_prior.probs[k];
    if (p <= 0.0) continue;
    prefix = teacher.prompt_prior.prompts[k];
    walk(p, n);
  }
  return out;
}

struct StudentTreeResult {
  double directed_information = 0.0;
  double expected_reward = 0.0;
};

namespace detail {

struct TreeChildOut {
  std::vector<double> future_density;  // R_k: mass-weighted density below
  std::vector<double> reward_mass;     // W_k: mass-weighted reward below
};

}  // namespace detail

// One exact pass over the student's live context tree under the prompt prior.
// Computes total DI and E[reward] of the student ensemble; when grads is
// non-null also accumulates d(di_coef * DI + rw_coef * E[reward])/d(params)
// via per-context logit gradients g_z = C - (sum C) q, where C collects the
// mass-weighted path functional over each child subtree.
inline StudentTreeResult student_tree_pass(const TransformerParams& params,
                                           const PromptPrior& prior, int T,
                                           double di_coef, double rw_coef,
                                           const RewardFunction* reward,
                                           ModelGrads* grads) {
  validate_params(params);
  validate_prior(prior);
  const int N = params.N;
  const int stop = params.stop_token;
  const int n = prior.length;
  require(n >= 1, "student_tree_pass: prompts must be nonempty");
  require(T > n, "student_tree_pass: horizon must exceed prompt length");
  require(pow_i64(N, T) <= kEnsembleLimit, "student_tree_pass: N^T limit");
  const int K = static_cast<int>(prior.prompts.size());
  const int horizon = T - n;
  const bool need_reward = reward != nullptr;

  StudentTreeResult result;
  Tokens cont;
  const std::function<detail::TreeChildOut(const std::vector<double>&,
                                           const std::vector<double>&)>
      walk = [&](const std::vector<double>& mass,
                 const std::vector<double>& flow) -> detail::TreeChildOut {
    detail::TreeChildOut node;
    node.future_density.assign(K, 0.0);
    node.reward_mass.assign(K, 0.0);
    const int depth = static_cast<int>(cont.size());

    double W = 0.0;
    for (double x : mass) W += x;
    std::vector<Vector> q(K);
    Vector mix = Vector::Zero(N);
    for (int k = 0; k < K; ++k) {
      if (mass[k] <= 0.0) continue;
      Tokens prefix = prior.prompts[k];
      prefix.insert(prefix.end(), cont.begin(), cont.end());
      q[k] = next_token_distribution(params, prefix);
      mix += (mass[k] / W) * q[k];
    }

    // Per-prompt, per-child collected path functionals.
    Matrix c_di = Matrix::Zero(K, N);
    Matrix c_rw = Matrix::Zero(K, N);
    std::vector<double> child_mass(K), child_flow(K);
    for (int u = 0; u < N; ++u) {
      double total_child = 0.0;
      for (int k = 0; k < K; ++k) {
        if (mass[k] <= 0.0) {
          child_mass[k] = 0.0;
          continue;
        }
        child_mass[k] = mass[k] * q[k][u];
        child_flow[k] = flow[k] + std::log(q[k][u] / mix[u]);
        total_child += child_mass[k];
      }
      if (total_child <= 0.0) continue;

      const bool absorbed = stop >= 0 && u == stop;
      const bool leaf = depth + 1 >= horizon;
      detail::TreeChildOut below;
      if (!absorbed && !leaf) {
        cont.push_back(u);
        below = walk(child_mass, child_flow);
        cont.pop_back();
      } else {
        below.future_density.assign(K, 0.0);
        below.reward_mass.assign(K, 0.0);
        if (need_reward) {
          Tokens full = cont;
          full.push_back(u);
          full.resize(horizon, stop >= 0 ? stop : 0);
          for (int k = 0; k < K; ++k) {
            if (child_mass[k] <= 0.0) continue;
            below.reward_mass[k] =
                child_mass[k] * (*reward)(prior.prompts[k], full);
          }
        }
      }
      for (int k = 0; k < K; ++k) {
        if (child_mass[k] <= 0.0) continue;
        const double d = child_flow[k] - flow[k];
        c_di(k, u) = child_flow[k] * child_mass[k] + below.future_density[k];
        c_rw(k, u) = below.reward_mass[k];
        node.future_density[k] += child_mass[k] * d + below.future_density[k];
        node.reward_mass[k] += below.reward_mass[k];
      }
    }

    if (grads) {
      for (int k = 0; k < K; ++k) {
        if (mass[k] <= 0.0) continue;
        Vector coeff = di_coef * c_di.row(k).transpose() +
                       rw_coef * c_rw.row(k).transpose();
        const Vector g_z = coeff - coeff.sum() * q[k];
        Tokens prefix = prior.prompts[k];
        prefix.insert(prefix.end(), cont.begin(), cont.end());
        accumulate_logit_gradient(params, prefix, g_z, *grads);
      }
    }

    if (depth == 0) {
      // C at the root sums the full path functional over every path.
      for (int k = 0; k < K; ++k) {
        result.directed_information += c_di.row(k).sum();
        result.expected_reward += c_rw.row(k).sum();
      }
    }
    return node;
  };

  std::vector<double> mass(prior.probs.data(), prior.probs.data() + K);
  std::vector<double> flow(K, 0.0);
  walk(mass, flow);
  return result;
}

// Plain full-batch gradient descent with per-step embedding renormalization.
// Loss values are totals over the horizon: ce = E[sum_t H(P_t, Q_t)],
// ce_plus_di = DI + lambda * ce, di_minus_reward = DI - lambda * E[reward].
inline TrainResult train(const TransformerParams& init,
                         const TeacherProcess& teacher,
                         const TrainOptions& opt) {
  validate_params(init);
  require(opt.steps >= 1, "train: steps must be positive");
  require(opt.lr > 0.0, "train: lr must be positive");
  require(opt.T > teacher.prompt_prior.length, "train: bad horizon");
  require(init.N == teacher.alphabet.size && init.stop_token == teacher.alphabet.stop_token,
          "train: student and teacher alphabets disagree");
  const bool use_di = opt.variant != LossVariant::ce;
  const bool use_ce = opt.variant != LossVariant::di_minus_reward;
  const bool use_reward = opt.variant == LossVariant::di_minus_reward;
  if (use_reward)
    require(static_cast<bool>(opt.reward), "train: reward function required");

  const std::vector<WeightedContext> contexts =
      use_ce ? teacher_contexts(teacher, opt.T)
             : std::vector<WeightedContext>{};

  TrainResult out;
  out.params = init;
  out.loss_trace.reserve(opt.steps);
  const double ce_coef = opt.variant == LossVariant::ce
                             ? 1.0
                             : (use_ce ? opt.lambda : 0.0);
  const double di_coef = use_di ? 1.0 : 0.0;
  const double rw_coef = use_reward ? -opt.lambda : 0.0;

  for (int step = 0; step < opt.steps; ++step) {
    ModelGrads grads = zero_grads(out.params);
    double loss = 0.0;
    if (use_ce) {
      LossGrad ce = expected_cross_entropy(out.params, contexts);
      loss += ce_coef * ce.loss;
      grads.d_embedding += ce_coef * ce.grads.d_embedding;
      grads.d_A += ce_coef * ce.grads.d_A;
      grads.d_B += ce_coef * ce.grads.d_B;
    }
    if (use_di || use_reward) {
      const StudentTreeResult tree = student_tree_pass(
          out.params, teacher.prompt_prior, opt.T, di_coef, rw_coef,
          use_reward ? &opt.reward : nullptr, &grads);
      loss += di_coef * tree.directed_information;
      loss += rw_coef * tree.expected_reward;
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));
    out.loss_trace.push_back(loss);

    for (int i = 0; i < out.params.N; ++i) {
      Eigen::RowVectorXd row = out.params.embedding.row(i);
      Eigen::RowVectorXd g = grads.d_embedding.row(i);
      g -= (g.dot(row)) * row;
      row -= opt.lr * g;
      const double norm = row.norm();
      require(norm > 0.0, "train: embedding row collapsed");
      out.params.embedding.row(i) = row / norm;
    }
    out.params.A -= opt.lr * grads.d_A;
    out.params.B -= opt.lr * grads.d_B;
  }
  return out;
}

// Expected total cross-entropy sum_t E[H(P_t, Q_t)] and the matching exact
// KL distortion sum_t E[KL(P_t || Q_t)] of a student against a teacher.
struct FitReport {
  double cross_entropy = 0.0;
  double kl = 0.0;
  int contexts = 0;
};

inline FitReport fit_report(const TransformerParams& params,
                            const TeacherProcess& teacher, int T) {
  FitReport rep;
  const auto contexts = teacher_contexts(teacher, T);
  rep.contexts = static_cast<int>(contexts.size());
  for (const auto& ctx : contexts) {
    if (ctx.weight <= 0.0) continue;
    const Vector q = next_token_distribution(params, ctx.prefix);
    rep.cross_entropy += ctx.weight * cross_entropy(ctx.target, q);
    rep.kl += ctx.weight * kl_divergence(ctx.target, q);
  }
  return rep;
}

}  // namespace tokscope
