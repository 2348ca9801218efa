// Black-box contract checks for the experiment runner binary. Runs the CLI
// through a shell, inspects exit codes and artifacts, and verifies that
// reruns with the same configuration and seed are byte-identical.
//
// Usage: test_cli_contract <path-to-cli>

#include <tokscope/io.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using tokscope::ordered_json;

namespace {

int g_failures = 0;
std::string g_cli;
fs::path g_root;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    ++g_failures;
    std::cerr << "FAIL: " << what << "\n";
  }
}

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log = g_root / ("cmd_" + std::to_string(counter++) + ".log");
  const std::string cmd =
      env + (env.empty() ? "" : " ") + "'" + g_cli + "' " + args + " > '" +
      log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = tokscope::read_text_file(log.string());
  return r;
}

std::string slurp(const fs::path& p) {
  return tokscope::read_text_file(p.string());
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = g_root / tag;
  fs::remove_all(dir);
  return dir;
}

void check_pipeline_artifacts() {
  const fs::path tdir = fresh_dir("teacher");
  const CmdResult gen = run("gen-teacher --N 3 --order 1 --n 1 --seed 5 --out '" +
                            tdir.string() + "'");
  expect(gen.exit_code == 0, "gen-teacher exits 0");
  for (const char* f : {"teacher.json", "config.json", "result.json", "meta.json"})
    expect(fs::exists(tdir / f), std::string("gen-teacher writes ") + f);

  const fs::path ddir = fresh_dir("di");
  const CmdResult di = run("di --teacher '" + (tdir / "teacher.json").string() +
                           "' --T 4 --seed 5 --out '" + ddir.string() + "'");
  expect(di.exit_code == 0, "di exits 0");
  expect(fs::exists(ddir / "di_per_step.csv"), "di writes its curve csv");
  const ordered_json result = ordered_json::parse(slurp(ddir / "result.json"));
  expect(result.at("points")[0].contains("directed_information"),
         "di result records directed_information");
  for (const auto& a : result.at("assertions"))
    expect(a.at("passed").get<bool>(),
           "di assertion passes: " + a.at("name").get<std::string>());
}

void check_config_file_and_flag_override() {
  const fs::path dir = fresh_dir("cfg");
  fs::create_directories(g_root);
  const fs::path cfg = g_root / "gen.json";
  tokscope::write_text_file(
      cfg.string(),
      "{\"N\": 4, \"order\": 0, \"n\": 1, \"seed\": 9, \"out\": \"" +
          dir.string() + "\"}\n");
  const CmdResult from_cfg = run("gen-teacher --config '" + cfg.string() + "'");
  expect(from_cfg.exit_code == 0, "gen-teacher from config exits 0");
  ordered_json echoed = ordered_json::parse(slurp(dir / "config.json"));
  expect(echoed.at("seed").get<int>() == 9, "config file sets the seed");
  expect(echoed.at("N").get<int>() == 4, "config file sets N");

  const CmdResult overridden =
      run("gen-teacher --config '" + cfg.string() + "' --N 3");
  expect(overridden.exit_code == 0, "flag-over-config run exits 0");
  echoed = ordered_json::parse(slurp(dir / "config.json"));
  expect(echoed.at("N").get<int>() == 3, "flag overrides the config key");
  expect(echoed.at("seed").get<int>() == 9, "untouched keys still come from config");
}

void check_config_errors() {
  const std::string missing = (g_root / "absent.json").string();
  const CmdResult bad_path = run("di --config '" + missing + "'");
  expect(bad_path.exit_code == 2, "missing config exits 2");
  const ordered_json err = ordered_json::parse(bad_path.output);
  expect(err.at("error").at("kind") == "config", "missing config reports kind config");
  expect(err.at("error").at("message").get<std::string>().find(missing) !=
             std::string::npos,
         "missing config error names the path");

  const fs::path cfg = g_root / "unknown_key.json";
  tokscope::write_text_file(cfg.string(), "{\"bogus\": 1}\n");
  const CmdResult bad_key = run("di --config '" + cfg.string() + "'");
  expect(bad_key.exit_code == 2, "unknown config key exits 2");
  expect(bad_key.output.find("unknown config key: bogus") != std::string::npos,
         "unknown key named in the error");

  const CmdResult bad_flag = run("di --nope");
  expect(bad_flag.exit_code == 2, "unknown flag exits 2");

  const CmdResult no_sub = run("");
  expect(no_sub.exit_code == 2, "missing subcommand exits 2");
}

void check_assertion_failures_exit_3() {
  const fs::path dir = fresh_dir("gw_oversmoothed");
  const CmdResult r =
      run("gw --M 3 --d 3 --instances 3 --eps-init 5 --eps-final 5 "
          "--restarts 1 --seed 0 --out '" + dir.string() + "'");
  expect(r.exit_code == 3, "oversmoothed gw exits 3");
  const ordered_json err = ordered_json::parse(r.output);
  expect(err.at("error").at("kind") == "assertion",
         "failed run reports kind assertion");
  expect(fs::exists(dir / "result.json"),
         "failed run still writes result.json");
}

void check_seed_precedence() {
  const fs::path dir = fresh_dir("seeds");
  const std::string base =
      "gen-teacher --N 3 --order 1 --n 1 --out '" + dir.string() + "'";
  run(base + " --seed 2", "TOKSCOPE_SEED=7");
  ordered_json echoed = ordered_json::parse(slurp(dir / "config.json"));
  expect(echoed.at("seed").get<int>() == 2, "--seed beats TOKSCOPE_SEED");

  run(base, "TOKSCOPE_SEED=7");
  echoed = ordered_json::parse(slurp(dir / "config.json"));
  expect(echoed.at("seed").get<int>() == 7, "TOKSCOPE_SEED used when no flag");

  run(base);
  echoed = ordered_json::parse(slurp(dir / "config.json"));
  expect(echoed.at("seed").get<int>() == 0, "seed defaults to 0");
}

void check_rerun_determinism() {
  const fs::path tdir = fresh_dir("det_teacher");
  run("gen-teacher --N 3 --order 1 --n 1 --seed 11 --out '" + tdir.string() + "'");
  const fs::path dir = fresh_dir("det_run");
  const std::string cmd = "di --teacher '" + (tdir / "teacher.json").string() +
                          "' --T 4 --seed 11 --out '" + dir.string() + "'";
  expect(run(cmd).exit_code == 0, "determinism run 1 exits 0");
  const std::string result1 = slurp(dir / "result.json");
  const std::string config1 = slurp(dir / "config.json");
  const std::string csv1 = slurp(dir / "di_per_step.csv");
  expect(run(cmd).exit_code == 0, "determinism run 2 exits 0");
  expect(slurp(dir / "result.json") == result1, "result.json is byte-stable");
  expect(slurp(dir / "config.json") == config1, "config.json is byte-stable");
  expect(slurp(dir / "di_per_step.csv") == csv1, "curve csv is byte-stable");

  const fs::path t1 = fresh_dir("det_threads1");
  const fs::path t3 = fresh_dir("det_threads3");
  const std::string teacher = (tdir / "teacher.json").string();
  run("di --teacher '" + teacher + "' --T 4 --seed 11 --threads 1 --out '" +
      t1.string() + "'");
  run("di --teacher '" + teacher + "' --T 4 --seed 11 --threads 3 --out '" +
      t3.string() + "'");
  expect(slurp(t1 / "di_per_step.csv") == slurp(t3 / "di_per_step.csv"),
         "curve csv does not depend on the thread count");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: test_cli_contract <path-to-cli>\n";
    return 2;
  }
  g_cli = fs::absolute(argv[1]).string();
  g_root = fs::temp_directory_path() / "tokscope_cli_contract";
  fs::remove_all(g_root);
  fs::create_directories(g_root);

  check_pipeline_artifacts();
  check_config_file_and_flag_override();
  check_config_errors();
  check_assertion_failures_exit_3();
  check_seed_precedence();
  check_rerun_determinism();

  if (g_failures == 0) {
    std::cout << "cli contract: all checks passed\n";
    return 0;
  }
  std::cerr << "cli contract: " << g_failures << " check(s) failed\n";
  return 1;
}
