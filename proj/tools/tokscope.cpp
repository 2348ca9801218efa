// Experiment runner. Every number written to an artifact comes from a library
// call; this binary only parses configuration, seeds, and serializes results.
//
// Exit codes: 0 success, 2 bad configuration or unreadable input,
// 3 a named assertion failed (details in result.json / the error JSON).

#include <tokscope/analysis.hpp>
#include <tokscope/io.hpp>
#include <tokscope/measures.hpp>
#include <tokscope/projection.hpp>
#include <tokscope/report.hpp>
#include <tokscope/training.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <set>

namespace {

constexpr const char* kVersion = "0.1.0";

using tokscope::ordered_json;
using tokscope::Tokens;

std::string iso_now() {
  const std::time_t tt =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ordered_json load_config(const std::string& path,
                         const std::set<std::string>& allowed) {
  if (path.empty()) return ordered_json::object();
  ordered_json cfg = ordered_json::parse(tokscope::read_text_file(path));
  if (!cfg.is_object())
    throw std::invalid_argument("config root must be a JSON object: " + path);
  for (auto it = cfg.begin(); it != cfg.end(); ++it)
    if (allowed.find(it.key()) == allowed.end())
      throw std::invalid_argument("unknown config key: " + it.key());
  return cfg;
}

// Flag wins over config file; config over the built-in default.
template <class T>
T pick(const CLI::Option* opt, const T& flag_value, const ordered_json& cfg,
       const std::string& key, const T& fallback) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return fallback;
}

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_seed,
                           const ordered_json& cfg) {
  if (opt != nullptr && opt->count() > 0) return flag_seed;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("TOKSCOPE_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

int resolve_threads(const CLI::Option* opt, int flag_threads,
                    const ordered_json& cfg) {
  int t = 0;
  if (opt != nullptr && opt->count() > 0)
    t = flag_threads;
  else if (cfg.contains("threads"))
    t = cfg.at("threads").get<int>();
  if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, t);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (tok.empty())
      throw std::invalid_argument("empty entry in numeric list: " + text);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad numeric list entry: " + tok);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty numeric list");
  return out;
}

tokscope::RewardFunction make_reward(const std::string& name) {
  if (name == "constant")
    return [](const Tokens&, const Tokens&) { return 1.0; };
  if (name == "avoid0")
    return [](const Tokens&, const Tokens& cont) {
      for (int t : cont)
        if (t == 0) return 0.0;
      return 1.0;
    };
  if (name == "distinct")
    return [](const Tokens&, const Tokens& cont) {
      std::set<int> seen(cont.begin(), cont.end());
      return cont.empty() ? 0.0
                          : static_cast<double>(seen.size()) /
                                static_cast<double>(cont.size());
    };
  throw std::invalid_argument("unknown reward: " + name +
                              " (expected constant | avoid0 | distinct)");
}

// Collects points, assertions, and curve manifests, then writes config.json,
// result.json, the CSVs, and the timestamp-bearing meta.json sidecar.
class Run {
 public:
  Run(std::string out_dir, std::uint64_t seed, int threads)
      : dir_(std::move(out_dir)), seed_(seed), threads_(threads) {
    std::filesystem::create_directories(dir_);
    config = ordered_json::object();
    config["seed"] = seed_;
    points = ordered_json::array();
  }

  ordered_json config;
  ordered_json points;

  std::uint64_t seed() const { return seed_; }
  int threads() const { return threads_; }

  std::string path(const std::string& file) const {
    return (std::filesystem::path(dir_) / file).string();
  }

  void check(const std::string& name, bool passed, const std::string& detail) {
    assertions_.push_back(ordered_json{
        {"name", name}, {"passed", passed}, {"detail", detail}});
    if (!passed) failed_.push_back(name);
  }

  void curve(const std::string& name, const std::vector<std::string>& headers,
             const std::vector<std::vector<double>>& rows,
             const std::string& x, const std::vector<std::string>& y) {
    const std::string file = name + ".csv";
    tokscope::write_text_file(path(file), tokscope::csv_from_rows(headers, rows));
    curves_.push_back(
        ordered_json{{"name", name}, {"csv", file}, {"x", x}, {"y", y}});
  }

  int finish() {
    ordered_json result{{"config", config},
                        {"seed", seed_},
                        {"points", points},
                        {"assertions", assertions_},
                        {"curves", curves_}};
    tokscope::write_text_file(path("config.json"), config.dump(2) + "\n");
    tokscope::write_text_file(path("result.json"), result.dump(2) + "\n");
    const ordered_json meta{{"timestamp", iso_now()},
                            {"version", kVersion},
                            {"threads", threads_}};
    tokscope::write_text_file(path("meta.json"), meta.dump(2) + "\n");
    if (!failed_.empty()) {
      const ordered_json err{
          {"error",
           {{"kind", "assertion"},
            {"name", failed_.front()},
            {"failed", failed_},
            {"message", "named assertion failed; see result.json"}}}};
      std::cout << err.dump(2) << std::endl;
      return 3;
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  }

 private:
  std::string dir_;
  std::uint64_t seed_ = 0;
  int threads_ = 1;
  ordered_json assertions_ = ordered_json::array();
  ordered_json curves_ = ordered_json::array();
  std::vector<std::string> failed_;
};

ordered_json vector_entries(const tokscope::Vector& v) {
  ordered_json a = ordered_json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ordered_json token_entries(const Tokens& t) {
  ordered_json a = ordered_json::array();
  for (int x : t) a.push_back(x);
  return a;
}

std::string close_pair(double lhs, double rhs) {
  return "lhs=" + tokscope::format_double(lhs) +
         " rhs=" + tokscope::format_double(rhs);
}

// Shared per-command option set: config file, output directory, seed, threads.
struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  void attach(CLI::App* sc, const std::string& default_out) {
    sc->add_option("--config", config_path,
                   "JSON config file; flags override its keys");
    out_opt = sc->add_option("--out", out_dir, "output directory")
                  ->default_val(default_out);
    seed_opt = sc->add_option("--seed", seed, "seed (fallback: TOKSCOPE_SEED)");
    threads_opt =
        sc->add_option("--threads", threads, "worker cap (default: hardware)");
  }

  Run open(const ordered_json& cfg, const std::string& command) const {
    const std::string dir = pick(out_opt, out_dir, cfg, std::string("out"),
                                 out_dir);
    Run run(dir, resolve_seed(seed_opt, seed, cfg),
            resolve_threads(threads_opt, threads, cfg));
    run.config["command"] = command;
    run.config["out"] = dir;
    return run;
  }
};

const std::set<std::string> kCommonKeys{"seed", "out", "threads"};

std::set<std::string> with_common(std::initializer_list<std::string> keys) {
  std::set<std::string> s(kCommonKeys);
  s.insert(keys.begin(), keys.end());
  return s;
}

// ---------------------------------------------------------------------------
// gen-teacher
// ---------------------------------------------------------------------------

struct GenTeacherCmd {
  CommonOpts common;
  int N = 3, order = 1, n = 2, stop = -1, d = 3;
  double xi = 1.0;
  std::string kind = "markov";
  CLI::Option *N_o, *order_o, *n_o, *stop_o, *d_o, *xi_o, *kind_o;

  void attach(CLI::App* sc) {
    N_o = sc->add_option("--N", N, "alphabet size");
    order_o = sc->add_option("--order", order, "Markov order");
    n_o = sc->add_option("--n", n, "prompt length");
    stop_o = sc->add_option("--stop", stop, "stop token (default N-1)");
    d_o = sc->add_option("--d", d, "embedding dim (transformer kind)");
    xi_o = sc->add_option("--xi", xi, "temperature (transformer kind)");
    kind_o = sc->add_option("--kind", kind, "markov | transformer");
    common.attach(sc, "run-gen-teacher");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"N", "order", "n", "stop", "d", "xi", "kind"}));
    Run run = common.open(cfg, "gen-teacher");
    const int aN = pick(N_o, N, cfg, "N", N);
    const int aorder = pick(order_o, order, cfg, "order", order);
    const int an = pick(n_o, n, cfg, "n", n);
    int astop = pick(stop_o, stop, cfg, "stop", stop);
    if (astop < 0) astop = aN - 1;
    const std::string akind = pick(kind_o, kind, cfg, "kind", kind);
    const int ad = pick(d_o, d, cfg, "d", d);
    const double axi = pick(xi_o, xi, cfg, "xi", xi);
    run.config["N"] = aN;
    run.config["order"] = aorder;
    run.config["n"] = an;
    run.config["stop"] = astop;
    run.config["kind"] = akind;
    if (akind == "transformer") {
      run.config["d"] = ad;
      run.config["xi"] = axi;
    }

    tokscope::TeacherProcess teacher;
    if (akind == "markov") {
      teacher = tokscope::random_markov_teacher(
          aN, astop, aorder, run.seed(), tokscope::uniform_prior(aN, an));
    } else if (akind == "transformer") {
      teacher = tokscope::make_transformer_teacher(
          tokscope::random_params(aN, ad, run.seed(), 1.0, axi, astop),
          tokscope::uniform_prior(aN, an));
    } else {
      throw std::invalid_argument("unknown teacher kind: " + akind);
    }
    tokscope::save_teacher(run.path("teacher.json"), teacher);
    run.points.push_back(ordered_json{{"alphabet_size", aN},
                                      {"prompt_length", an},
                                      {"stop_token", astop},
                                      {"kind", akind},
                                      {"file", "teacher.json"}});
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  CommonOpts common;
  std::string teacher_path, loss = "ce", reward = "avoid0";
  int steps = 1000, T = 0, d = 3;
  double lr = 0.5, lambda = 1.0, init_scale = 1.0, xi = 1.0;
  CLI::Option *teacher_o, *loss_o, *reward_o, *steps_o, *T_o, *d_o, *lr_o,
      *lambda_o, *scale_o, *xi_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    loss_o = sc->add_option("--loss", loss, "ce | ce-di | di-reward");
    steps_o = sc->add_option("--steps", steps, "gradient steps");
    lr_o = sc->add_option("--lr", lr, "learning rate");
    lambda_o = sc->add_option("--lambda", lambda, "loss mixing weight");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    d_o = sc->add_option("--d", d, "student embedding dim");
    scale_o = sc->add_option("--init-scale", init_scale, "init scale");
    xi_o = sc->add_option("--xi", xi, "student temperature");
    reward_o = sc->add_option("--reward", reward,
                              "reward name for di-reward training");
    common.attach(sc, "run-train");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"teacher", "loss", "steps", "lr", "lambda", "T", "d",
                     "init_scale", "xi", "reward"}));
    Run run = common.open(cfg, "train");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty()) throw std::invalid_argument("train: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const std::string aloss = pick(loss_o, loss, cfg, "loss", loss);
    const int aT = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : teacher.prompt_prior.length + 3;
    }();
    const int asteps = pick(steps_o, steps, cfg, "steps", steps);
    const double alr = pick(lr_o, lr, cfg, "lr", lr);
    const double alambda = pick(lambda_o, lambda, cfg, "lambda", lambda);
    const int ad = pick(d_o, d, cfg, "d", d);
    const double ascale = pick(scale_o, init_scale, cfg, "init_scale", init_scale);
    const double axi = pick(xi_o, xi, cfg, "xi", xi);
    const std::string areward = pick(reward_o, reward, cfg, "reward", reward);
    run.config["teacher"] = tpath;
    run.config["loss"] = aloss;
    run.config["steps"] = asteps;
    run.config["lr"] = alr;
    run.config["lambda"] = alambda;
    run.config["T"] = aT;
    run.config["d"] = ad;
    run.config["init_scale"] = ascale;
    run.config["xi"] = axi;

    tokscope::TrainOptions opt;
    opt.steps = asteps;
    opt.lr = alr;
    opt.lambda = alambda;
    opt.T = aT;
    if (aloss == "ce") {
      opt.variant = tokscope::LossVariant::ce;
    } else if (aloss == "ce-di") {
      opt.variant = tokscope::LossVariant::ce_plus_di;
    } else if (aloss == "di-reward") {
      opt.variant = tokscope::LossVariant::di_minus_reward;
      opt.reward = make_reward(areward);
      run.config["reward"] = areward;
    } else {
      throw std::invalid_argument("unknown loss: " + aloss);
    }

    const tokscope::TransformerParams init = tokscope::random_params(
        teacher.alphabet.size, ad, run.seed(), ascale, axi,
        teacher.alphabet.stop_token);
    const tokscope::TrainResult tr = tokscope::train(init, teacher, opt);
    tokscope::save_model(run.path("model.json"), tr.params);

    std::vector<std::vector<double>> rows;
    rows.reserve(tr.loss_trace.size());
    for (std::size_t i = 0; i < tr.loss_trace.size(); ++i)
      rows.push_back({static_cast<double>(i), tr.loss_trace[i]});
    run.curve("loss_trace", {"step", "loss"}, rows, "step", {"loss"});

    const tokscope::FitReport fit =
        tokscope::fit_report(tr.params, teacher, aT);
    const double final_loss = tr.loss_trace.back();
    run.points.push_back(ordered_json{{"final_loss", final_loss},
                                      {"cross_entropy", fit.cross_entropy},
                                      {"kl", fit.kl},
                                      {"contexts", fit.contexts},
                                      {"model", "model.json"}});
    run.check("final_loss_finite", std::isfinite(final_loss),
              "final_loss=" + tokscope::format_double(final_loss));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// flow
// ---------------------------------------------------------------------------

struct FlowCmd {
  CommonOpts common;
  std::string teacher_path, model_path;
  int n = 2, T = 0, paths = 1000;
  CLI::Option *teacher_o, *model_o, *n_o, *T_o, *paths_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    model_o = sc->add_option("--model", model_path, "model JSON file");
    n_o = sc->add_option("--n", n, "prompt length (model without teacher)");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    paths_o = sc->add_option("--paths", paths, "sampled paths for the check");
    common.attach(sc, "run-flow");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"teacher", "model", "n", "T", "paths"}));
    Run run = common.open(cfg, "flow");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    if (tpath.empty() && mpath.empty())
      throw std::invalid_argument("flow: need --teacher or --model");
    const int apaths = pick(paths_o, paths, cfg, "paths", paths);

    tokscope::PromptPrior prior;
    tokscope::ConditionalLaw law;
    if (!tpath.empty()) {
      const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
      prior = teacher.prompt_prior;
      law = tokscope::make_law(teacher);
      run.config["teacher"] = tpath;
    }
    if (!mpath.empty()) {
      const tokscope::TransformerParams model = tokscope::load_model(mpath);
      if (tpath.empty())
        prior = tokscope::uniform_prior(model.N, pick(n_o, n, cfg, "n", n));
      law = tokscope::make_law(model);
      run.config["model"] = mpath;
    }
    const int aT = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : prior.length + 3;
    }();
    run.config["n"] = prior.length;
    run.config["T"] = aT;
    run.config["paths"] = apaths;

    const tokscope::SequenceEnsemble e =
        tokscope::build_ensemble(prior, law, aT);
    tokscope::Rng rng(run.seed());
    const auto [k, cont] = tokscope::sample_path(e, rng);
    const tokscope::FlowTrace trace =
        tokscope::semantic_flow(e, e.prior.prompts[k], cont);

    std::vector<std::vector<double>> rows;
    for (long i = 0; i < trace.densities.size(); ++i)
      rows.push_back({static_cast<double>(prior.length + 1 + i),
                      trace.densities[i], trace.cumulative[i], trace.M[i],
                      trace.A[i], trace.V[i]});
    run.curve("flow", {"step", "density", "cumulative", "M", "A", "V"}, rows,
              "step", {"cumulative", "M", "A"});

    const tokscope::SubmartingaleReport sub =
        tokscope::submartingale_check(e, apaths, run.seed());
    const tokscope::OptionalStoppingResult os =
        tokscope::optional_stopping_check(e);
    run.points.push_back(ordered_json{
        {"prompt_index", k},
        {"path", token_entries(cont)},
        {"flow_total", trace.cumulative.size()
                           ? trace.cumulative[trace.cumulative.size() - 1]
                           : 0.0},
        {"paths_checked", sub.paths},
        {"min_margin", sub.min_margin},
        {"full_horizon_flow", os.full_horizon},
        {"first_step_flow", os.first_step}});
    run.check("submartingale_nonneg", sub.violations == 0,
              "violations=" + std::to_string(sub.violations) +
                  " min_margin=" + tokscope::format_double(sub.min_margin));
    run.check("optional_stopping", os.full_horizon >= os.first_step - 1e-10,
              close_pair(os.full_horizon, os.first_step));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// di
// ---------------------------------------------------------------------------

struct DiCmd {
  CommonOpts common;
  std::string teacher_path, model_path;
  int n = 0, T = 0;
  CLI::Option *teacher_o, *model_o, *n_o, *T_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    model_o = sc->add_option("--model", model_path,
                             "model JSON file (default: teacher's own law)");
    n_o = sc->add_option("--n", n, "prompt length (must match the prior)");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    common.attach(sc, "run-di");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path, with_common({"teacher", "model", "n", "T"}));
    Run run = common.open(cfg, "di");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty()) throw std::invalid_argument("di: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const int an = pick(n_o, n, cfg, "n", n);
    if (an > 0 && an != teacher.prompt_prior.length)
      throw std::invalid_argument(
          "di: --n disagrees with the teacher prompt prior length " +
          std::to_string(teacher.prompt_prior.length));
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    const int aT = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : teacher.prompt_prior.length + 3;
    }();
    run.config["teacher"] = tpath;
    if (!mpath.empty()) run.config["model"] = mpath;
    run.config["n"] = teacher.prompt_prior.length;
    run.config["T"] = aT;

    const tokscope::ConditionalLaw law =
        mpath.empty() ? tokscope::make_law(teacher)
                      : tokscope::make_law(tokscope::load_model(mpath));
    const tokscope::SequenceEnsemble e =
        tokscope::build_ensemble(teacher.prompt_prior, law, aT);
    const tokscope::DirectedInfoResult di =
        tokscope::directed_information_terms(e);
    const double mi = tokscope::mutual_information(e);
    const double bdi = tokscope::backward_directed_information(e);

    std::vector<std::vector<double>> rows;
    for (long i = 0; i < di.per_step.size(); ++i)
      rows.push_back({static_cast<double>(teacher.prompt_prior.length + 1 + i),
                      di.per_step[i]});
    run.curve("di_per_step", {"step", "term"}, rows, "step", {"term"});
    run.points.push_back(
        ordered_json{{"directed_information", di.total},
                     {"mutual_information", mi},
                     {"backward_directed_information", bdi},
                     {"n", teacher.prompt_prior.length},
                     {"T", aT}});
    run.check("di_equals_mi", std::abs(di.total - mi) <= 1e-10,
              close_pair(di.total, mi));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// rd-sweep / rr-sweep
// ---------------------------------------------------------------------------

struct RdSweepCmd {
  CommonOpts common;
  std::string teacher_path, lambdas = "0,0.25,0.5,1,2,4";
  int steps = 2000, T = 0, d = 3;
  double lr = 0.5, init_scale = 1.0;
  CLI::Option *teacher_o, *lambdas_o, *steps_o, *T_o, *d_o, *lr_o, *scale_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    lambdas_o = sc->add_option("--lambdas", lambdas, "comma-separated grid");
    steps_o = sc->add_option("--steps", steps, "gradient steps per point");
    lr_o = sc->add_option("--lr", lr, "learning rate");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    d_o = sc->add_option("--d", d, "student embedding dim");
    scale_o = sc->add_option("--init-scale", init_scale, "init scale");
    common.attach(sc, "run-rd-sweep");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"teacher", "lambda_grid", "steps", "lr", "T", "d",
                     "init_scale"}));
    Run run = common.open(cfg, "rd-sweep");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty())
      throw std::invalid_argument("rd-sweep: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);

    tokscope::SweepConfig sc;
    if (lambdas_o->count() == 0 && cfg.contains("lambda_grid"))
      sc.lambda_grid = cfg.at("lambda_grid").get<std::vector<double>>();
    else
      sc.lambda_grid = parse_grid(lambdas);
    sc.steps = pick(steps_o, steps, cfg, "steps", steps);
    sc.lr = pick(lr_o, lr, cfg, "lr", lr);
    sc.T = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : teacher.prompt_prior.length + 3;
    }();
    sc.student_d = pick(d_o, d, cfg, "d", d);
    sc.init_scale = pick(scale_o, init_scale, cfg, "init_scale", init_scale);
    sc.seed = run.seed();
    sc.threads = run.threads();
    run.config["teacher"] = tpath;
    run.config["lambda_grid"] = sc.lambda_grid;
    run.config["steps"] = sc.steps;
    run.config["lr"] = sc.lr;
    run.config["T"] = sc.T;
    run.config["d"] = sc.student_d;
    run.config["init_scale"] = sc.init_scale;

    const tokscope::RdCurve curve = tokscope::rd_sweep(teacher, sc);
    std::vector<std::vector<double>> rows, prows;
    for (const auto& p : curve.points) {
      rows.push_back({p.lambda, p.distortion, p.rate, p.diverged ? 1.0 : 0.0});
      run.points.push_back(ordered_json{{"lambda", p.lambda},
                                        {"distortion", p.distortion},
                                        {"rate", p.rate},
                                        {"diverged", p.diverged}});
    }
    for (const auto& p : curve.pareto)
      prows.push_back({p.lambda, p.distortion, p.rate});
    run.curve("rd_points", {"lambda", "distortion", "rate", "diverged"}, rows,
              "distortion", {"rate"});
    run.curve("rd_pareto", {"lambda", "distortion", "rate"}, prows,
              "distortion", {"rate"});

    bool monotone = true;
    for (std::size_t i = 1; i < curve.pareto.size(); ++i)
      if (curve.pareto[i].rate > curve.pareto[i - 1].rate + 1e-12)
        monotone = false;
    run.check("pareto_rate_nonincreasing", monotone,
              "pareto_points=" + std::to_string(curve.pareto.size()));
    return run.finish();
  }
};

struct RrSweepCmd {
  CommonOpts common;
  std::string teacher_path, lambdas = "0,0.5,1,2,4,8", reward = "avoid0";
  int steps = 2000, T = 0, d = 3;
  double lr = 0.5, init_scale = 1.0;
  CLI::Option *teacher_o, *lambdas_o, *reward_o, *steps_o, *T_o, *d_o, *lr_o,
      *scale_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    lambdas_o = sc->add_option("--lambdas", lambdas, "comma-separated grid");
    reward_o = sc->add_option("--reward", reward, "reward name");
    steps_o = sc->add_option("--steps", steps, "gradient steps per point");
    lr_o = sc->add_option("--lr", lr, "learning rate");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    d_o = sc->add_option("--d", d, "student embedding dim");
    scale_o = sc->add_option("--init-scale", init_scale, "init scale");
    common.attach(sc, "run-rr-sweep");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"teacher", "lambda_grid", "reward", "steps", "lr", "T",
                     "d", "init_scale"}));
    Run run = common.open(cfg, "rr-sweep");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty())
      throw std::invalid_argument("rr-sweep: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const std::string areward = pick(reward_o, reward, cfg, "reward", reward);

    tokscope::SweepConfig sc;
    if (lambdas_o->count() == 0 && cfg.contains("lambda_grid"))
      sc.lambda_grid = cfg.at("lambda_grid").get<std::vector<double>>();
    else
      sc.lambda_grid = parse_grid(lambdas);
    sc.steps = pick(steps_o, steps, cfg, "steps", steps);
    sc.lr = pick(lr_o, lr, cfg, "lr", lr);
    sc.T = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : teacher.prompt_prior.length + 3;
    }();
    sc.student_d = pick(d_o, d, cfg, "d", d);
    sc.init_scale = pick(scale_o, init_scale, cfg, "init_scale", init_scale);
    sc.seed = run.seed();
    sc.threads = run.threads();
    run.config["teacher"] = tpath;
    run.config["reward"] = areward;
    run.config["lambda_grid"] = sc.lambda_grid;
    run.config["steps"] = sc.steps;
    run.config["lr"] = sc.lr;
    run.config["T"] = sc.T;
    run.config["d"] = sc.student_d;
    run.config["init_scale"] = sc.init_scale;

    const tokscope::RrCurve curve =
        tokscope::rr_sweep(teacher, sc, make_reward(areward));
    std::vector<std::vector<double>> rows;
    for (const auto& p : curve.points) {
      rows.push_back({p.lambda, p.expected_w, p.rate, p.diverged ? 1.0 : 0.0});
      run.points.push_back(ordered_json{{"lambda", p.lambda},
                                        {"expected_w", p.expected_w},
                                        {"rate", p.rate},
                                        {"diverged", p.diverged}});
    }
    run.curve("rr_points", {"lambda", "expected_w", "rate", "diverged"}, rows,
              "expected_w", {"rate"});
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// capacity
// ---------------------------------------------------------------------------

struct CapacityCmd {
  CommonOpts common;
  std::string teacher_path, model_path, reward;
  int T = 0;
  double W = 0.0;
  CLI::Option *teacher_o, *model_o, *reward_o, *T_o, *W_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path,
                               "teacher JSON (prompt set and default law)");
    model_o = sc->add_option("--model", model_path, "model JSON (law override)");
    T_o = sc->add_option("--T", T, "total sequence length (default n+3)");
    reward_o = sc->add_option("--reward", reward, "reward name (constraint)");
    W_o = sc->add_option("--W", W, "reward threshold (needs --reward)");
    common.attach(sc, "run-capacity");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"teacher", "model", "T", "reward", "W"}));
    Run run = common.open(cfg, "capacity");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty())
      throw std::invalid_argument("capacity: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    const int aT = [&] {
      const int v = pick(T_o, T, cfg, "T", T);
      return v > 0 ? v : teacher.prompt_prior.length + 3;
    }();
    const std::string areward = pick(reward_o, reward, cfg, "reward", reward);
    const bool constrained = W_o->count() > 0 || cfg.contains("W");
    const double aW = pick(W_o, W, cfg, "W", W);
    if (constrained && areward.empty())
      throw std::invalid_argument("capacity: --W requires --reward");
    run.config["teacher"] = tpath;
    if (!mpath.empty()) run.config["model"] = mpath;
    run.config["T"] = aT;
    if (constrained) {
      run.config["reward"] = areward;
      run.config["W"] = aW;
    }

    const tokscope::ConditionalLaw law =
        mpath.empty() ? tokscope::make_law(teacher)
                      : tokscope::make_law(tokscope::load_model(mpath));
    tokscope::RewardFunction rw;
    const tokscope::RewardFunction* rp = nullptr;
    if (constrained) {
      rw = make_reward(areward);
      rp = &rw;
    }
    const tokscope::CapacityResult grid = tokscope::semantic_capacity(
        law, teacher.prompt_prior.prompts, aT, rp, aW,
        tokscope::CapacityMethod::grid);
    const tokscope::CapacityResult alt = tokscope::semantic_capacity(
        law, teacher.prompt_prior.prompts, aT, rp, aW,
        tokscope::CapacityMethod::alternating);
    run.points.push_back(ordered_json{
        {"feasible_grid", grid.feasible},
        {"capacity_grid", grid.capacity},
        {"prior_grid", vector_entries(grid.prior)},
        {"feasible_alternating", alt.feasible},
        {"capacity_alternating", alt.capacity},
        {"prior_alternating", vector_entries(alt.prior)}});
    run.check("feasibility_consistent", grid.feasible == alt.feasible,
              std::string("grid=") + (grid.feasible ? "yes" : "no") +
                  " alternating=" + (alt.feasible ? "yes" : "no"));
    if (grid.feasible && alt.feasible)
      run.check("methods_agree",
                std::abs(grid.capacity - alt.capacity) <= 1e-3,
                close_pair(grid.capacity, alt.capacity));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// elbo
// ---------------------------------------------------------------------------

struct ElboCmd {
  CommonOpts common;
  std::string model_path;
  int configs = 1000, len = 3;
  CLI::Option *model_o, *configs_o, *len_o;

  void attach(CLI::App* sc) {
    model_o = sc->add_option("--model", model_path, "model JSON file");
    configs_o = sc->add_option("--configs", configs, "random (prefix, target) draws");
    len_o = sc->add_option("--len", len, "prefix length");
    common.attach(sc, "run-elbo");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path, with_common({"model", "configs", "len"}));
    Run run = common.open(cfg, "elbo");
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    if (mpath.empty()) throw std::invalid_argument("elbo: --model required");
    const tokscope::TransformerParams params = tokscope::load_model(mpath);
    const int aconfigs = pick(configs_o, configs, cfg, "configs", configs);
    const int alen = pick(len_o, len, cfg, "len", len);
    if (aconfigs < 1 || alen < 1)
      throw std::invalid_argument("elbo: configs and len must be positive");
    run.config["model"] = mpath;
    run.config["configs"] = aconfigs;
    run.config["len"] = alen;

    tokscope::Rng rng(run.seed());
    std::vector<std::pair<Tokens, int>> batch;
    batch.reserve(static_cast<std::size_t>(aconfigs));
    for (int c = 0; c < aconfigs; ++c) {
      Tokens prefix(static_cast<std::size_t>(alen));
      for (int& t : prefix) t = rng.below(params.N);
      const int target = rng.below(params.N);
      batch.emplace_back(std::move(prefix), target);
    }

    double min_gap = std::numeric_limits<double>::infinity();
    double max_posterior_gap = 0.0;
    std::vector<std::vector<double>> rows;
    for (std::size_t c = 0; c < batch.size(); ++c) {
      const auto& [prefix, target] = batch[c];
      const tokscope::ElboResult att =
          tokscope::elbo_training(params, prefix, target, false);
      const tokscope::ElboResult pos =
          tokscope::elbo_training(params, prefix, target, true);
      min_gap = std::min(min_gap, att.gap);
      max_posterior_gap = std::max(max_posterior_gap, std::abs(pos.gap));
      rows.push_back({static_cast<double>(c), att.elbo, att.loglik, att.gap});
    }
    run.curve("elbo_configs", {"config", "elbo", "loglik", "gap"}, rows,
              "config", {"elbo", "loglik"});

    const tokscope::ElboResult mean = tokscope::elbo_training(params, batch);
    const tokscope::InferenceTable table =
        tokscope::elbo_inference(params, batch.front().first);
    std::vector<std::vector<double>> irows;
    for (std::size_t y = 0; y < table.rows.size(); ++y)
      irows.push_back({static_cast<double>(y), table.rows[y].elbo,
                       table.rows[y].exact});
    run.curve("elbo_inference", {"candidate", "elbo", "exact"}, irows,
              "candidate", {"elbo", "exact"});

    run.points.push_back(ordered_json{
        {"mean_elbo", mean.elbo},
        {"mean_loglik", mean.loglik},
        {"mean_gap", mean.gap},
        {"min_gap", min_gap},
        {"max_posterior_gap", max_posterior_gap},
        {"argmax_match", table.argmax_match}});
    run.check("elbo_le_loglik", min_gap >= -1e-12,
              "min_gap=" + tokscope::format_double(min_gap));
    run.check("posterior_gap_zero", max_posterior_gap <= 1e-10,
              "max=" + tokscope::format_double(max_posterior_gap));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// bound
// ---------------------------------------------------------------------------

struct BoundCmd {
  CommonOpts common;
  std::string model_path, teacher_path;
  int M = 50, resamples = 100, t = 0;
  double delta = 0.1;
  CLI::Option *model_o, *teacher_o, *M_o, *resamples_o, *t_o, *delta_o;

  void attach(CLI::App* sc) {
    model_o = sc->add_option("--model", model_path, "model JSON file");
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    M_o = sc->add_option("--M", M, "sample size per resample");
    delta_o = sc->add_option("--delta", delta, "confidence level");
    resamples_o = sc->add_option("--resamples", resamples, "independent draws");
    t_o = sc->add_option("--t", t, "prediction step (default n+1)");
    common.attach(sc, "run-bound");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"model", "teacher", "M", "delta", "resamples", "t"}));
    Run run = common.open(cfg, "bound");
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (mpath.empty() || tpath.empty())
      throw std::invalid_argument("bound: --model and --teacher required");
    const tokscope::TransformerParams params = tokscope::load_model(mpath);
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const int aM = pick(M_o, M, cfg, "M", M);
    const double adelta = pick(delta_o, delta, cfg, "delta", delta);
    const int ares = pick(resamples_o, resamples, cfg, "resamples", resamples);
    const int at = [&] {
      const int v = pick(t_o, t, cfg, "t", t);
      return v > 0 ? v : teacher.prompt_prior.length + 1;
    }();
    if (ares < 1) throw std::invalid_argument("bound: resamples must be >= 1");
    run.config["model"] = mpath;
    run.config["teacher"] = tpath;
    run.config["M"] = aM;
    run.config["delta"] = adelta;
    run.config["resamples"] = ares;
    run.config["t"] = at;

    double min_margin = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> rows;
    for (int r = 0; r < ares; ++r) {
      const tokscope::BoundResult b = tokscope::generalization_bound(
          params, teacher, aM, adelta, run.seed() + static_cast<std::uint64_t>(r),
          at);
      min_margin = std::min(min_margin, b.margin);
      rows.push_back({static_cast<double>(r), b.empirical, b.bound, b.true_ce,
                      b.margin});
    }
    run.curve("bound", {"resample", "empirical", "bound", "true_ce", "margin"},
              rows, "resample", {"empirical", "bound", "true_ce"});
    run.points.push_back(
        ordered_json{{"resamples", ares}, {"min_margin", min_margin}});
    run.check("bound_holds_all_resamples", min_margin >= 0.0,
              "min_margin=" + tokscope::format_double(min_margin));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// fisher
// ---------------------------------------------------------------------------

struct FisherCmd {
  CommonOpts common;
  std::string model_path, teacher_path;
  int max_coords = 50;
  double h = 1e-3;
  CLI::Option *model_o, *teacher_o, *max_coords_o, *h_o;

  void attach(CLI::App* sc) {
    model_o = sc->add_option("--model", model_path, "model JSON file");
    teacher_o = sc->add_option("--teacher", teacher_path,
                               "teacher JSON (context distribution)");
    max_coords_o = sc->add_option("--max-coords", max_coords,
                                  "cap on A/B coordinates (row-major, A first)");
    h_o = sc->add_option("--fd-step", h, "finite-difference step");
    common.attach(sc, "run-fisher");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"model", "teacher", "max_coords", "h"}));
    Run run = common.open(cfg, "fisher");
    const std::string mpath =
        pick(model_o, model_path, cfg, "model", model_path);
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (mpath.empty() || tpath.empty())
      throw std::invalid_argument("fisher: --model and --teacher required");
    const tokscope::TransformerParams params = tokscope::load_model(mpath);
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const int amax = pick(max_coords_o, max_coords, cfg, "max_coords", max_coords);
    const double ah = pick(h_o, h, cfg, "h", h);
    run.config["model"] = mpath;
    run.config["teacher"] = tpath;
    run.config["max_coords"] = amax;
    run.config["h"] = ah;

    tokscope::ContextDistribution contexts;
    for (std::size_t k = 0; k < teacher.prompt_prior.prompts.size(); ++k)
      if (teacher.prompt_prior.probs[static_cast<long>(k)] > 0.0)
        contexts.emplace_back(teacher.prompt_prior.prompts[k],
                              teacher.prompt_prior.probs[static_cast<long>(k)]);

    std::vector<tokscope::ParamCoord> coords;
    for (int m = 0; m < 2 && static_cast<int>(coords.size()) < amax; ++m)
      for (int r = 0; r < params.d && static_cast<int>(coords.size()) < amax; ++r)
        for (int c = 0; c < params.d && static_cast<int>(coords.size()) < amax;
             ++c)
          coords.push_back({m, r, c});

    const tokscope::FisherResult fr =
        tokscope::fisher_matrix(params, contexts, coords, ah);
    std::vector<std::vector<double>> rows;
    for (long i = 0; i < fr.matrix.rows(); ++i) {
      std::vector<double> row;
      row.reserve(static_cast<std::size_t>(fr.matrix.cols()));
      for (long j = 0; j < fr.matrix.cols(); ++j) row.push_back(fr.matrix(i, j));
      rows.push_back(std::move(row));
    }
    std::vector<std::string> headers;
    for (long j = 0; j < fr.matrix.cols(); ++j)
      headers.push_back("c" + std::to_string(j));
    tokscope::write_text_file(run.path("fisher.csv"),
                              tokscope::csv_from_rows(headers, rows));
    run.points.push_back(ordered_json{{"coords", coords.size()},
                                      {"min_eigenvalue", fr.min_eigenvalue},
                                      {"max_asymmetry", fr.max_asymmetry},
                                      {"matrix", "fisher.csv"}});
    run.check("fisher_symmetric", fr.max_asymmetry <= 1e-8,
              "max_asymmetry=" + tokscope::format_double(fr.max_asymmetry));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// jl
// ---------------------------------------------------------------------------

struct JlCmd {
  CommonOpts common;
  int M = 100, N = 1024, seeds = 100;
  double eps = 0.5, C = 4.0;
  std::string kinds = "gaussian,dct,hadamard";
  CLI::Option *M_o, *N_o, *seeds_o, *eps_o, *C_o, *kinds_o;

  void attach(CLI::App* sc) {
    M_o = sc->add_option("--M", M, "number of vectors");
    N_o = sc->add_option("--N", N, "ambient dimension");
    eps_o = sc->add_option("--eps", eps, "target inner-product deviation");
    C_o = sc->add_option("--C", C, "dimension constant");
    seeds_o = sc->add_option("--seeds", seeds, "trial count");
    kinds_o = sc->add_option("--kinds", kinds,
                             "comma list of gaussian | dct | hadamard");
    common.attach(sc, "run-jl");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"M", "N", "eps", "C", "seeds", "kinds"}));
    Run run = common.open(cfg, "jl");
    const int aM = pick(M_o, M, cfg, "M", M);
    const int aN = pick(N_o, N, cfg, "N", N);
    const double aeps = pick(eps_o, eps, cfg, "eps", eps);
    const double aC = pick(C_o, C, cfg, "C", C);
    const int aseeds = pick(seeds_o, seeds, cfg, "seeds", seeds);
    const std::string akinds = pick(kinds_o, kinds, cfg, "kinds", kinds);
    if (aseeds < 1) throw std::invalid_argument("jl: seeds must be >= 1");
    const int m = tokscope::jl_dimension(aM, aeps, aC);
    run.config["M"] = aM;
    run.config["N"] = aN;
    run.config["eps"] = aeps;
    run.config["C"] = aC;
    run.config["seeds"] = aseeds;
    run.config["kinds"] = akinds;

    std::vector<std::pair<std::string, tokscope::ProjectionKind>> kind_list;
    std::size_t pos = 0;
    while (pos <= akinds.size()) {
      const std::size_t comma = akinds.find(',', pos);
      const std::string tok = akinds.substr(
          pos, comma == std::string::npos ? comma : comma - pos);
      if (tok == "gaussian")
        kind_list.emplace_back(tok, tokscope::ProjectionKind::gaussian);
      else if (tok == "dct")
        kind_list.emplace_back(tok, tokscope::ProjectionKind::partial_dct);
      else if (tok == "hadamard")
        kind_list.emplace_back(tok, tokscope::ProjectionKind::partial_hadamard);
      else
        throw std::invalid_argument("unknown projection kind: " + tok);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }

    const std::vector<std::string> cell_headers{
        "seed", "kind", "N", "m", "eps", "max_deviation", "distortion"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& [name, kind] : kind_list) {
      std::vector<std::vector<double>> rows;
      int successes = 0;
      for (int s = 0; s < aseeds; ++s) {
        const std::uint64_t trial_seed =
            run.seed() + static_cast<std::uint64_t>(s);
        const tokscope::SemanticVectorSpace space =
            tokscope::random_space(aM, aN, trial_seed);
        // Distinct stream: sharing the seed would correlate the projection
        // matrix with the very vectors it compresses.
        const tokscope::ProjectionOperator op = tokscope::make_projection(
            kind, aN, m, trial_seed ^ 0x9e3779b97f4a7c15ULL);
        const tokscope::JlCheckResult chk =
            tokscope::jl_check(space, op, aeps);
        const tokscope::CompressionReport rep =
            tokscope::compression_distortion(space, op);
        if (chk.max_deviation <= aeps) ++successes;
        rows.push_back({static_cast<double>(trial_seed),
                        static_cast<double>(aN), static_cast<double>(m), aeps,
                        chk.max_deviation, rep.identity_value});
        cells.push_back({std::to_string(trial_seed),
                         name, std::to_string(aN), std::to_string(m),
                         tokscope::format_double(aeps),
                         tokscope::format_double(chk.max_deviation),
                         tokscope::format_double(rep.identity_value)});
      }
      run.curve("jl_" + name,
                {"seed", "N", "m", "eps", "max_deviation", "distortion"}, rows,
                "seed", {"max_deviation"});
      run.points.push_back(ordered_json{{"kind", name},
                                        {"m", m},
                                        {"trials", aseeds},
                                        {"successes", successes}});
    }
    tokscope::write_text_file(run.path("jl.csv"),
                              tokscope::csv_from_cells(cell_headers, cells));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// gw
// ---------------------------------------------------------------------------

struct GwCmd {
  CommonOpts common;
  int M = 4, d = 3, instances = 20, restarts = 0;
  double eps_init = 0.0, eps_final = 0.0, anneal = 0.0;
  CLI::Option *M_o, *d_o, *instances_o, *restarts_o, *eps_init_o, *eps_final_o,
      *anneal_o;

  void attach(CLI::App* sc) {
    M_o = sc->add_option("--M", M, "points per space");
    d_o = sc->add_option("--d", d, "ambient dimension");
    instances_o = sc->add_option("--instances", instances, "random pairs");
    eps_init_o = sc->add_option("--eps-init", eps_init, "initial epsilon");
    eps_final_o = sc->add_option("--eps-final", eps_final, "final epsilon");
    anneal_o = sc->add_option("--anneal", anneal, "annealing factor");
    restarts_o = sc->add_option("--restarts", restarts, "solver restarts");
    common.attach(sc, "run-gw");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path,
        with_common({"M", "d", "instances", "eps_init", "eps_final", "anneal",
                     "restarts"}));
    Run run = common.open(cfg, "gw");
    const int aM = pick(M_o, M, cfg, "M", M);
    const int ad = pick(d_o, d, cfg, "d", d);
    const int ainst = pick(instances_o, instances, cfg, "instances", instances);
    if (ainst < 1) throw std::invalid_argument("gw: instances must be >= 1");
    tokscope::EntropicOptions opt;
    opt.eps_init = pick(eps_init_o, eps_init, cfg, "eps_init", opt.eps_init);
    opt.eps_final =
        pick(eps_final_o, eps_final, cfg, "eps_final", opt.eps_final);
    opt.anneal = pick(anneal_o, anneal, cfg, "anneal", opt.anneal);
    opt.restarts = pick(restarts_o, restarts, cfg, "restarts", opt.restarts);
    run.config["M"] = aM;
    run.config["d"] = ad;
    run.config["instances"] = ainst;
    run.config["eps_init"] = opt.eps_init;
    run.config["eps_final"] = opt.eps_final;
    run.config["anneal"] = opt.anneal;
    run.config["restarts"] = opt.restarts;

    const tokscope::SemanticVectorSpace base =
        tokscope::random_space(aM, ad, run.seed());
    const double self_cost =
        tokscope::gw_cost(base, base, tokscope::identity_coupling(base));
    tokscope::SemanticVectorSpace rotated = base;
    rotated.vectors =
        base.vectors * tokscope::random_orthogonal(ad, run.seed() + 1);
    const double rot_cost =
        tokscope::gw_distance_entropic(rotated, base, opt).cost;
    run.check("self_distance_zero", self_cost <= 1e-9,
              "cost=" + tokscope::format_double(self_cost));
    run.check("rotation_invariant", rot_cost <= 1e-6,
              "cost=" + tokscope::format_double(rot_cost));

    const bool oracle_scope = aM <= 6;
    double worst_gap = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < ainst; ++i) {
      const tokscope::SemanticVectorSpace A = tokscope::random_space(
          aM, ad, run.seed() + 2 * static_cast<std::uint64_t>(i) + 2);
      const tokscope::SemanticVectorSpace B = tokscope::random_space(
          aM, ad, run.seed() + 2 * static_cast<std::uint64_t>(i) + 3);
      const tokscope::EntropicResult ent =
          tokscope::gw_distance_entropic(A, B, opt);
      if (oracle_scope) {
        const tokscope::OracleResult orc = tokscope::gw_distance_oracle(A, B);
        worst_gap = std::max(worst_gap, ent.cost - orc.cost);
        rows.push_back({static_cast<double>(i), orc.cost, ent.cost,
                        ent.cost - orc.cost, ent.converged ? 1.0 : 0.0});
      } else {
        rows.push_back({static_cast<double>(i), ent.cost,
                        ent.converged ? 1.0 : 0.0});
      }
    }
    if (oracle_scope) {
      run.curve("gw_instances",
                {"instance", "oracle_cost", "entropic_cost", "gap", "converged"},
                rows, "instance", {"oracle_cost", "entropic_cost"});
      run.check("entropic_le_oracle_plus_tol", worst_gap <= 1e-3,
                "worst_gap=" + tokscope::format_double(worst_gap));
      run.points.push_back(ordered_json{{"instances", ainst},
                                        {"oracle_scope", true},
                                        {"worst_gap", worst_gap}});
    } else {
      run.curve("gw_instances", {"instance", "entropic_cost", "converged"},
                rows, "instance", {"entropic_cost"});
      run.points.push_back(
          ordered_json{{"instances", ainst}, {"oracle_scope", false}});
    }
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// embed-opt
// ---------------------------------------------------------------------------

struct EmbedOptCmd {
  CommonOpts common;
  std::string teacher_path;
  int codes = 2, states = 2, n = 4;
  CLI::Option *teacher_o, *codes_o, *states_o, *n_o;

  void attach(CLI::App* sc) {
    teacher_o = sc->add_option("--teacher", teacher_path, "teacher JSON file");
    codes_o = sc->add_option("--codes", codes, "codebook size");
    states_o = sc->add_option("--states", states, "encoder state count");
    n_o = sc->add_option("--n", n, "sequence length");
    common.attach(sc, "run-embed-opt");
  }

  int execute() const {
    const ordered_json cfg = load_config(
        common.config_path, with_common({"teacher", "codes", "states", "n"}));
    Run run = common.open(cfg, "embed-opt");
    const std::string tpath =
        pick(teacher_o, teacher_path, cfg, "teacher", teacher_path);
    if (tpath.empty())
      throw std::invalid_argument("embed-opt: --teacher required");
    const tokscope::TeacherProcess teacher = tokscope::load_teacher(tpath);
    const int acodes = pick(codes_o, codes, cfg, "codes", codes);
    const int astates = pick(states_o, states, cfg, "states", states);
    const int an = pick(n_o, n, cfg, "n", n);
    run.config["teacher"] = tpath;
    run.config["codes"] = acodes;
    run.config["states"] = astates;
    run.config["n"] = an;

    const tokscope::EncoderFamily family = tokscope::enumerate_encoder_family(
        teacher.alphabet.size, acodes, astates);
    const tokscope::EmbeddingObjectiveResult res =
        tokscope::embedding_objective(family, teacher, an);

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < res.member_values.size(); ++i)
      rows.push_back({static_cast<double>(i), res.member_values[i]});
    run.curve("encoder_values", {"member", "objective"}, rows, "member",
              {"objective"});
    run.points.push_back(ordered_json{
        {"family_size", family.members.size()},
        {"best_index", res.best_index},
        {"best_value", res.best_value},
        {"cpc_bound", res.cpc_bound},
        {"bound_violations", res.bound_violations}});
    run.check("objective_le_cpc_bound", res.bound_violations == 0,
              "violations=" + std::to_string(res.bound_violations));
    run.check("best_le_cpc_bound", res.best_value <= res.cpc_bound + 1e-10,
              close_pair(res.best_value, res.cpc_bound));
    return run.finish();
  }
};

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportCmd {
  std::string run_dir;

  void attach(CLI::App* sc) {
    sc->add_option("--run", run_dir, "directory with result.json")->required();
  }

  int execute() const {
    const tokscope::ReportOutcome out = tokscope::render_report(run_dir);
    std::cout << out.summary;
    for (const std::string& f : out.svg_files)
      std::cout << "wrote " << f << "\n";
    return 0;
  }
};

int error_json(int code, const std::string& kind, const std::string& message) {
  const ordered_json err{
      {"error", {{"kind", kind}, {"message", message}}}};
  std::cout << err.dump(2) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokscope: exact information measures for toy autoregressive models"};
  app.require_subcommand(1);

  GenTeacherCmd gen_teacher;
  TrainCmd train;
  FlowCmd flow;
  DiCmd di;
  RdSweepCmd rd_sweep;
  RrSweepCmd rr_sweep;
  CapacityCmd capacity;
  ElboCmd elbo;
  BoundCmd bound;
  FisherCmd fisher;
  JlCmd jl;
  GwCmd gw;
  EmbedOptCmd embed_opt;
  ReportCmd report;

  std::function<int()> runner;
  const auto bind = [&runner](auto& cmd, CLI::App* sc) {
    cmd.attach(sc);
    sc->callback([&runner, &cmd]() { runner = [&cmd]() { return cmd.execute(); }; });
  };

  bind(gen_teacher, app.add_subcommand("gen-teacher", "generate a teacher process"));
  bind(train, app.add_subcommand("train", "fit a student model to a teacher"));
  bind(flow, app.add_subcommand("flow", "semantic flow trace and Doob checks"));
  bind(di, app.add_subcommand("di", "exact directed-information measures"));
  bind(rd_sweep, app.add_subcommand("rd-sweep", "rate-distortion sweep"));
  bind(rr_sweep, app.add_subcommand("rr-sweep", "rate-reward sweep"));
  bind(capacity, app.add_subcommand("capacity", "semantic capacity, both methods"));
  bind(elbo, app.add_subcommand("elbo", "ELBO identities of the latent-position model"));
  bind(bound, app.add_subcommand("bound", "generalization bound resampling"));
  bind(fisher, app.add_subcommand("fisher", "finite-difference Fisher matrix"));
  bind(jl, app.add_subcommand("jl", "random-projection inner-product trials"));
  bind(gw, app.add_subcommand("gw", "Gromov-Wasserstein solver vs oracle"));
  bind(embed_opt, app.add_subcommand("embed-opt", "exhaustive encoder search"));
  bind(report, app.add_subcommand("report", "render CSV curves to SVG"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return error_json(2, "usage", e.what());
  }

  try {
    return runner ? runner() : error_json(2, "usage", "no subcommand");
  } catch (const tokscope::ordered_json::exception& e) {
    return error_json(2, "config", e.what());
  } catch (const std::invalid_argument& e) {
    return error_json(2, "config", e.what());
  } catch (const std::domain_error& e) {
    return error_json(2, "config", e.what());
  } catch (const std::runtime_error& e) {
    const ordered_json err{{"error",
                            {{"kind", "assertion"},
                             {"name", std::string(e.what())},
                             {"message", e.what()}}}};
    std::cout << err.dump(2) << std::endl;
    return 3;
  } catch (const std::exception& e) {
    return error_json(2, "config", e.what());
  }
}
