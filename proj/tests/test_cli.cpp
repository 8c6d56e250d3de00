#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nestseq/cli.hpp"

using namespace nestseq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nestseq_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small filled cohort on disk, shared by the training-command tests.
const fs::path& cohort_csv() {
  static const fs::path path = [] {
    GeneratorConfig cfg;
    cfg.n_patients = 150;
    cfg.seed = 424242;
    const fs::path dir = fresh_dir("fixture");
    const fs::path p = dir / "cohort.csv";
    write_cohort(generate_cohort(cfg), p.string(), CohortFormat::kCsv);
    return p;
  }();
  return path;
}

TrainOptions train_options(const fs::path& out_dir) {
  TrainOptions opt;
  opt.data_path = cohort_csv().string();
  opt.config.model = ModelKind::kMlp;
  opt.config.structure = InputStructure::kMarkov;
  opt.config.aggregation = Aggregation::kSum;
  opt.config.hidden_units = 4;
  opt.config.epochs = 2;
  opt.n_trials = 2;
  opt.seed = 0;
  opt.out_dir = out_dir.string();
  return opt;
}

struct Run {
  int exit_code;
  std::string out;
  std::string err;
};

// Run the installed binary; requires NESTSEQ_BIN (set by the test harness).
Run run_binary(const std::string& args, const fs::path& dir) {
  const char* bin = std::getenv("NESTSEQ_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "NESTSEQ_BIN must point at the nestseq binary");
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = std::string(bin) + " " + args + " > " + out_file.string() +
                          " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  Run r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("cohort format follows the extension unless overridden") {
  const fs::path dir = fresh_dir("load");
  GeneratorConfig cfg;
  cfg.n_patients = 20;
  cfg.seed = 1;
  const Cohort cohort = generate_cohort(cfg);
  write_cohort(cohort, (dir / "c.csv").string(), CohortFormat::kCsv);
  write_cohort(cohort, (dir / "c.jsonl").string(), CohortFormat::kJsonl);
  write_cohort(cohort, (dir / "c.data").string(), CohortFormat::kJsonl);

  CHECK(load_cohort((dir / "c.csv").string(), std::nullopt).patients.size() == 20);
  CHECK(load_cohort((dir / "c.jsonl").string(), std::nullopt).patients.size() == 20);
  // .data falls back to CSV and fails to parse JSONL content...
  CHECK_THROWS(load_cohort((dir / "c.data").string(), std::nullopt));
  // ...unless the format is stated.
  CHECK(load_cohort((dir / "c.data").string(), CohortFormat::kJsonl).patients.size() == 20);
}

TEST_CASE("generator overrides are applied and unknown keys rejected") {
  GeneratorConfig cfg;
  apply_generator_config(cfg, R"({"n_patients": 500, "signal_strength": 0.5, "seed": 7})");
  CHECK(cfg.n_patients == 500);
  CHECK(cfg.signal_strength == 0.5);
  CHECK(cfg.seed == 7);
  CHECK(cfg.missing_rate == 0.05);  // untouched default
  CHECK_THROWS_WITH_AS(apply_generator_config(cfg, R"({"patients": 5})"),
                       doctest::Contains("unknown key 'patients'"), std::invalid_argument);
  CHECK_THROWS_AS(apply_generator_config(cfg, "[1, 2]"), std::invalid_argument);
}

TEST_CASE("trial overrides cover the config but never the seed") {
  TrialConfig cfg;
  apply_trial_config(cfg, R"({"model": "rnn", "structure": "NEST", "hidden_units": 7})");
  CHECK(cfg.model == ModelKind::kRnn);
  CHECK(cfg.structure == InputStructure::kNest);
  CHECK(cfg.hidden_units == 7);
  apply_trial_config(cfg, R"({"aggregation": null})");
  CHECK_FALSE(cfg.aggregation.has_value());
  CHECK_THROWS_WITH_AS(apply_trial_config(cfg, R"({"trial_seed": 3})"),
                       doctest::Contains("unknown key 'trial_seed'"), std::invalid_argument);
}

TEST_CASE("generate writes the cohort plus manifest and is repeatable") {
  const fs::path dir1 = fresh_dir("gen1");
  const fs::path dir2 = fresh_dir("gen2");
  GenerateOptions opt;
  opt.out_dir = dir1.string();
  opt.config.n_patients = 60;
  opt.config.seed = 11;

  std::ostringstream out, err;
  CHECK(cmd_generate(opt, out, err) == 0);
  CHECK(out.str().find("wrote") != std::string::npos);
  CHECK(out.str().find("patients           60") != std::string::npos);
  REQUIRE(fs::exists(dir1 / "cohort.csv"));
  REQUIRE(fs::exists(dir1 / "manifest.json"));
  CHECK(slurp(dir1 / "manifest.json").find("\"n_patients\": \"60\"") != std::string::npos);

  opt.out_dir = dir2.string();
  std::ostringstream out2, err2;
  CHECK(cmd_generate(opt, out2, err2) == 0);
  CHECK(slurp(dir1 / "cohort.csv") == slurp(dir2 / "cohort.csv"));
  CHECK(slurp(dir1 / "manifest.json") == slurp(dir2 / "manifest.json"));

  opt.format = CohortFormat::kJsonl;
  std::ostringstream out3, err3;
  CHECK(cmd_generate(opt, out3, err3) == 0);
  CHECK(fs::exists(dir2 / "cohort.jsonl"));
}

TEST_CASE("stats prints text or machine-readable JSON") {
  StatsOptions opt;
  opt.data_path = cohort_csv().string();
  std::ostringstream out, err;
  CHECK(cmd_stats(opt, out, err) == 0);
  CHECK(out.str().find("patients           150") != std::string::npos);
  CHECK(out.str().find("prevalence") != std::string::npos);

  opt.as_json = true;
  std::ostringstream jout, jerr;
  CHECK(cmd_stats(opt, jout, jerr) == 0);
  const auto j = nlohmann::json::parse(jout.str());
  CHECK(j.at("n_patients").get<std::size_t>() == 150);
  CHECK(j.at("n_labeled").get<std::size_t>() > 0);
  CHECK(j.at("prevalence").get<double>() > 0.0);
}

TEST_CASE("train writes the model and metrics and reruns byte-identically") {
  const fs::path dir1 = fresh_dir("train1");
  const fs::path dir2 = fresh_dir("train2");

  std::ostringstream out, err;
  REQUIRE(cmd_train(train_options(dir1), out, err) == 0);
  CHECK(out.str().find("split: ") != std::string::npos);
  CHECK(out.str().find("selected trial") != std::string::npos);
  CHECK(out.str().find("test: auroc") != std::string::npos);
  CHECK(err.str().find("took") != std::string::npos);  // timing goes to stderr only

  for (const char* f : {"experiment.json", "manifest.json", "model.nsqp", "metrics.json"}) {
    REQUIRE(fs::exists(dir1 / f));
  }
  const ExperimentResult res = experiment_from_json(slurp(dir1 / "experiment.json"));
  CHECK(res.grid.size() == 1);
  CHECK(res.trials[0].size() == 2);
  CHECK(kind_of(load_params((dir1 / "model.nsqp").string())) == ModelKind::kMlp);
  const auto metrics = nlohmann::json::parse(slurp(dir1 / "metrics.json"));
  CHECK(metrics.at("format") == "nestseq-train-metrics");
  CHECK(metrics.at("test").at("auroc").get<double>() > 0.0);

  std::ostringstream out2, err2;
  REQUIRE(cmd_train(train_options(dir2), out2, err2) == 0);
  CHECK(out2.str() == out.str());
  for (const char* f : {"experiment.json", "manifest.json", "model.nsqp", "metrics.json"}) {
    CHECK(slurp(dir1 / f) == slurp(dir2 / f));
  }
}

TEST_CASE("a hopeless learning rate reports divergence and keeps the record") {
  const fs::path dir = fresh_dir("diverge");
  TrainOptions opt = train_options(dir);
  opt.config.learning_rate = 1e308;
  std::ostringstream out, err;
  CHECK(cmd_train(opt, out, err) == 1);
  CHECK(err.str().find("every trial diverged") != std::string::npos);
  CHECK(fs::exists(dir / "experiment.json"));  // the record survives
  CHECK_FALSE(fs::exists(dir / "model.nsqp"));
  const ExperimentResult res = experiment_from_json(slurp(dir / "experiment.json"));
  for (const TrialResult& r : res.trials[0]) CHECK(r.diverged);
}

TEST_CASE("experiment renders the grid and report re-renders it") {
  const fs::path dir = fresh_dir("exp");
  ExperimentOptions opt;
  opt.data_path = cohort_csv().string();
  opt.hidden_units = {3};
  opt.epochs = 1;
  opt.n_trials = 2;
  opt.threads = 2;
  opt.out_dir = dir.string();

  std::ostringstream out, err;
  REQUIRE(cmd_experiment(opt, out, err) == 0);
  for (const char* f :
       {"experiment.json", "table.md", "table.csv", "quantiles.csv", "manifest.json"}) {
    REQUIRE(fs::exists(dir / f));
  }
  const std::string table = slurp(dir / "table.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 10);  // header + 9 configs
  CHECK(out.str().find("| # HU | Model | Input Struct | LL | AUPRC | AUROC |") !=
        std::string::npos);

  const fs::path rdir = fresh_dir("exp_report");
  ReportOptions ropt;
  ropt.experiment_path = (dir / "experiment.json").string();
  ropt.out_dir = rdir.string();
  std::ostringstream rout, rerr;
  REQUIRE(cmd_report(ropt, rout, rerr) == 0);
  CHECK(slurp(rdir / "table.csv") == table);
  CHECK(slurp(rdir / "quantiles.csv") == slurp(dir / "quantiles.csv"));
}

TEST_CASE("gradcheck passes, fails when corrupted, and warns on zero cases") {
  GradcheckOptions opt;
  opt.cases_per_class = 2;
  opt.seed = 1;
  std::ostringstream out, err;
  CHECK(cmd_gradcheck(opt, out, err) == 0);
  CHECK(out.str().find("gradient check: PASS") != std::string::npos);
  CHECK(out.str().find("nested-rnn w_hosp") != std::string::npos);

  opt.corrupt = true;
  std::ostringstream fout, ferr;
  CHECK(cmd_gradcheck(opt, fout, ferr) == 1);
  CHECK(fout.str().find("gradient check: FAIL") != std::string::npos);
  CHECK(ferr.str().find("--seed 1") != std::string::npos);

  GradcheckOptions zero;
  zero.cases_per_class = 0;
  std::ostringstream zout, zerr;
  CHECK(cmd_gradcheck(zero, zout, zerr) == 0);
  CHECK(zout.str().find("vacuous") != std::string::npos);
  CHECK(zerr.str().find("warning") != std::string::npos);
}

TEST_CASE("the binary wires it all together") {
  const fs::path dir = fresh_dir("binary");

  const Run version = run_binary("--version", dir);
  CHECK(version.exit_code == 0);
  CHECK(version.out.find(kToolVersion) != std::string::npos);

  const Run usage = run_binary("--definitely-not-a-flag", dir);
  CHECK(usage.exit_code == 2);

  const Run missing = run_binary("train --data /nonexistent.csv --out " +
                                     (dir / "t").string(),
                                 dir);
  CHECK(missing.exit_code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);

  const fs::path gen1 = dir / "g1";
  const fs::path gen2 = dir / "g2";
  const Run g1 = run_binary("generate --out " + gen1.string() + " --patients 40 --seed 4", dir);
  REQUIRE(g1.exit_code == 0);
  const Run g2 = run_binary("generate --out " + gen2.string() + " --patients 40 --seed 4", dir);
  REQUIRE(g2.exit_code == 0);
  CHECK(slurp(gen1 / "cohort.csv") == slurp(gen2 / "cohort.csv"));

  const Run stats = run_binary("stats --data " + (gen1 / "cohort.csv").string() + " --json", dir);
  CHECK(stats.exit_code == 0);
  CHECK(nlohmann::json::parse(stats.out).at("n_patients").get<int>() == 40);

  const Run train = run_binary("train --data " + cohort_csv().string() + " --out " +
                                   (dir / "t2").string() +
                                   " --model mlp --structure MARKOV --aggregation SUM"
                                   " --hidden 4 --epochs 1 --trials 1",
                               dir);
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(dir / "t2" / "model.nsqp"));

  const Run check = run_binary("gradcheck --cases 1", dir);
  CHECK(check.exit_code == 0);
  CHECK(check.out.find("PASS") != std::string::npos);
}

TEST_SUITE_END();
