#include <tokscope/training.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace tokscope;

namespace {

TeacherProcess uniform_teacher(int N, int n) {
  Matrix row = Matrix::Constant(1, N, 1.0 / N);
  return make_markov_teacher(N, N - 1, 0, row, uniform_prior(N, n));
}

}  // namespace

TEST_CASE("teacher contexts start with unit prompt mass") {
  const TeacherProcess t = random_markov_teacher(3, 2, 1, 12,
                                                 uniform_prior(3, 1));
  const auto contexts = teacher_contexts(t, 4);
  double prompt_mass = 0.0;
  for (const auto& c : contexts) {
    REQUIRE(c.weight > 0.0);
    REQUIRE(is_distribution(c.target, 1e-12));
    REQUIRE(c.prefix.size() >= 1);
    REQUIRE(c.prefix.size() <= 3);
    if (c.prefix.size() == 1) prompt_mass += c.weight;
    // Live contexts never extend past an emitted stop token.
    for (std::size_t i = 1; i < c.prefix.size(); ++i)
      REQUIRE(c.prefix[i] != t.alphabet.stop_token);
  }
  REQUIRE(prompt_mass == Catch::Approx(1.0).epsilon(0.0).margin(1e-12));
}

TEST_CASE("context masses shrink by exactly the stop leakage per depth") {
  const TeacherProcess t = random_markov_teacher(3, 2, 1, 31,
                                                 uniform_prior(3, 1));
  const auto contexts = teacher_contexts(t, 4);
  // Depth-d mass equals depth-(d-1) mass minus stop probability flowing out.
  double mass1 = 0.0, continue1 = 0.0, mass2 = 0.0;
  for (const auto& c : contexts) {
    if (c.prefix.size() == 1) {
      mass1 += c.weight;
      continue1 += c.weight * (1.0 - c.target[t.alphabet.stop_token]);
    }
    if (c.prefix.size() == 2) mass2 += c.weight;
  }
  REQUIRE(mass2 == Catch::Approx(continue1).epsilon(0.0).margin(1e-12));
  REQUIRE(mass1 == Catch::Approx(1.0).epsilon(0.0).margin(1e-12));
}

TEST_CASE("training a uniform target reaches total loss log N per step") {
  const TeacherProcess t = uniform_teacher(4, 1);
  const TransformerParams init = random_params(4, 3, 7, 0.5);
  TrainOptions opt;
  opt.steps = 1000;
  opt.lr = 0.5;
  opt.T = 2;  // single generated step
  const TrainResult r = train(init, t, opt);
  REQUIRE(r.loss_trace.size() == 1000);
  REQUIRE(r.loss_trace.back() ==
          Catch::Approx(std::log(4.0)).epsilon(0.0).margin(1e-6));
  REQUIRE(r.loss_trace.back() >= std::log(4.0) - 1e-12);
  const FitReport rep = fit_report(r.params, t, 2);
  REQUIRE(rep.kl < 1e-6);
}

TEST_CASE("small steps never increase the exact population loss") {
  const TeacherProcess t = random_markov_teacher(3, 2, 1, 77,
                                                 uniform_prior(3, 1));
  const TransformerParams init = random_params(3, 2, 11, 1.0);
  TrainOptions opt;
  opt.steps = 50;
  opt.lr = 1e-3;
  opt.T = 3;
  const TrainResult r = train(init, t, opt);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i)
    REQUIRE(r.loss_trace[i] <= r.loss_trace[i - 1] + 1e-12);
}

TEST_CASE("the loss trace records the objective before each update") {
  const TeacherProcess t = random_markov_teacher(3, 2, 1, 77,
                                                 uniform_prior(3, 1));
  const TransformerParams init = random_params(3, 2, 11, 1.0);
  TrainOptions opt;
  opt.steps = 1;
  opt.lr = 0.25;
  opt.T = 3;
  const TrainResult r = train(init, t, opt);
  REQUIRE(r.loss_trace.size() == 1);
  // One step records the initial loss, untouched by the update.
  REQUIRE(r.loss_trace[0] ==
          Catch::Approx(fit_report(init, t, 3).cross_entropy).epsilon(0.0).margin(1e-12));
}

TEST_CASE("fit report vanishes when the student is the teacher") {
  const TransformerParams p = random_params(3, 2, 5);
  const TeacherProcess t = make_transformer_teacher(p, uniform_prior(3, 1));
  const FitReport rep = fit_report(p, t, 3);
  REQUIRE(rep.kl < 1e-14);
  REQUIRE(rep.contexts > 0);
  // Cross-entropy then reduces to the expected teacher entropy.
  double expect = 0.0;
  for (const auto& c : teacher_contexts(t, 3))
    expect += c.weight * entropy(c.target);
  REQUIRE(rep.cross_entropy == Catch::Approx(expect).epsilon(0.0).margin(1e-12));
}

TEST_CASE("cross-entropy always dominates the kl distortion") {
  const TeacherProcess t = random_markov_teacher(4, 3, 1, 9,
                                                 uniform_prior(4, 1));
  const TransformerParams p = random_params(4, 3, 10);
  const FitReport rep = fit_report(p, t, 3);
  REQUIRE(rep.cross_entropy >= rep.kl);
  REQUIRE(rep.kl >= 0.0);
}

TEST_CASE("regularized and reward variants leave finite traces") {
  const TeacherProcess t = random_markov_teacher(3, 2, 1, 40,
                                                 uniform_prior(3, 1));
  const TransformerParams init = random_params(3, 2, 41, 0.5);

  TrainOptions reg;
  reg.steps = 20;
  reg.lr = 0.1;
  reg.T = 3;
  reg.variant = LossVariant::ce_plus_di;
  reg.lambda = 2.0;
  const TrainResult rr = train(init, t, reg);
  REQUIRE(rr.loss_trace.size() == 20);
  for (double v : rr.loss_trace) REQUIRE(std::isfinite(v));

  TrainOptions rw;
  rw.steps = 20;
  rw.lr = 0.1;
  rw.T = 3;
  rw.variant = LossVariant::di_minus_reward;
  rw.lambda = 1.0;
  rw.reward = [](const Tokens&, const Tokens& cont) {
    return cont[0] == 0 ? 1.0 : 0.0;
  };
  const TrainResult rwr = train(init, t, rw);
  REQUIRE(rwr.loss_trace.size() == 20);
  for (double v : rwr.loss_trace) REQUIRE(std::isfinite(v));
}

TEST_CASE("reward pressure shifts mass toward rewarded continuations") {
  const TeacherProcess t = uniform_teacher(3, 1);
  const TransformerParams init = random_params(3, 2, 123, 0.3);
  TrainOptions rw;
  rw.steps = 400;
  rw.lr = 0.5;
  rw.T = 2;
  rw.variant = LossVariant::di_minus_reward;
  rw.lambda = 4.0;
  rw.reward = [](const Tokens&, const Tokens& cont) {
    return cont[0] == 1 ? 1.0 : 0.0;
  };
  const TrainResult r = train(init, t, rw);
  // Expected reward of the trained student, computed from its ensemble.
  const SequenceEnsemble e =
      build_ensemble(t.prompt_prior, make_law(r.params), 2);
  double expected_w = 0.0;
  for (std::size_t k = 0; k < e.prior.prompts.size(); ++k)
    for (std::int64_t a = 0; a < e.continuations(); ++a) {
      const double lp = e.joint_log[static_cast<std::int64_t>(k) *
                                        e.continuations() + a];
      if (lp <= kNegInf) continue;
      if (unpack_tokens(a, e.N, 1)[0] == 1) expected_w += std::exp(lp);
    }
  REQUIRE(expected_w > 0.9);
}

TEST_CASE("training rejects inconsistent setups") {
  const TeacherProcess t = uniform_teacher(3, 1);
  const TransformerParams init = random_params(3, 2, 1);
  TrainOptions opt;
  opt.T = 2;

  TrainOptions bad_steps = opt;
  bad_steps.steps = 0;
  REQUIRE_THROWS_AS(train(init, t, bad_steps), std::invalid_argument);

  TrainOptions bad_lr = opt;
  bad_lr.lr = 0.0;
  REQUIRE_THROWS_AS(train(init, t, bad_lr), std::invalid_argument);

  TrainOptions bad_T = opt;
  bad_T.T = 1;
  REQUIRE_THROWS_AS(train(init, t, bad_T), std::invalid_argument);

  const TransformerParams wrong_N = random_params(4, 2, 1);
  REQUIRE_THROWS_AS(train(wrong_N, t, opt), std::invalid_argument);

  TrainOptions no_reward = opt;
  no_reward.variant = LossVariant::di_minus_reward;
  REQUIRE_THROWS_AS(train(init, t, no_reward), std::invalid_argument);
}
