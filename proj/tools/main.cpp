#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nestseq/cli.hpp"
#include "nestseq/report.hpp"

namespace {

unsigned default_threads(std::ostream& err) {
  const char* env = std::getenv("NESTSEQ_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    err << "warning: ignoring invalid NESTSEQ_THREADS value '" << env << "'\n";
    return 1;
  }
  return static_cast<unsigned>(v);
}

std::optional<nestseq::CohortFormat> parse_format(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "csv") return nestseq::CohortFormat::kCsv;
  if (s == "jsonl") return nestseq::CohortFormat::kJsonl;
  throw std::invalid_argument("unknown format '" + s + "' (expected csv or jsonl)");
}

}  // namespace

int main(int argc, char** argv) {
  using nestseq::CohortFormat;

  CLI::App app{"Next-hospitalization AKI prediction from creatinine sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", nestseq::kToolVersion);
  const unsigned threads_default = default_threads(std::cerr);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic cohort");
  nestseq::GenerateOptions gen_opt;
  std::string gen_config_path, gen_format = "csv";
  std::size_t gen_patients = gen_opt.config.n_patients;
  std::uint64_t gen_seed = 0;
  double gen_signal = gen_opt.config.signal_strength;
  double gen_prevalence = gen_opt.config.target_prevalence;
  double gen_missing = gen_opt.config.missing_rate;
  gen->add_option("--out", gen_opt.out_dir, "Output directory")->required();
  gen->add_option("--patients", gen_patients, "Number of patients");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--signal", gen_signal, "Signal strength (0 = labels are coin flips)");
  gen->add_option("--prevalence", gen_prevalence, "Target label prevalence");
  gen->add_option("--missing-rate", gen_missing, "Fraction of values blanked out");
  gen->add_option("--format", gen_format, "Output format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  gen->add_option("--config", gen_config_path, "JSON file of generator overrides");

  // stats
  auto* stats = app.add_subcommand("stats", "Summarize a cohort file");
  nestseq::StatsOptions stats_opt;
  std::string stats_format;
  stats->add_option("--data", stats_opt.data_path, "Cohort file")->required();
  stats->add_option("--format", stats_format, "Input format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  stats->add_flag("--json", stats_opt.as_json, "Print JSON instead of text");

  // train
  auto* train = app.add_subcommand("train", "Train one configuration over several trials");
  nestseq::TrainOptions train_opt;
  std::string train_format, train_config_path;
  std::string train_model = "mlp", train_structure = "MARKOV", train_agg;
  train_opt.threads = threads_default;
  train->add_option("--data", train_opt.data_path, "Cohort file")->required();
  train->add_option("--out", train_opt.out_dir, "Output directory")->required();
  train->add_option("--format", train_format, "Input format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  train->add_option("--model", train_model, "mlp or rnn")
      ->check(CLI::IsMember({"mlp", "rnn"}));
  train->add_option("--structure", train_structure, "MARKOV, CONCAT, or NEST");
  train->add_option("--aggregation", train_agg, "SUM, MEAN, or MAX (MLP only)");
  train->add_option("--hidden", train_opt.config.hidden_units, "Hidden units");
  train->add_option("--epochs", train_opt.config.epochs, "Training epochs");
  train->add_option("--lr", train_opt.config.learning_rate, "AdaGrad learning rate");
  train->add_option("--trials", train_opt.n_trials, "Number of trials");
  train->add_option("--seed", train_opt.seed, "Root seed (split + trials)");
  train->add_option("--threads", train_opt.threads, "Worker threads");
  train->add_option("--test-fraction", train_opt.test_fraction, "Test fraction of patients");
  train->add_option("--val-fraction", train_opt.validation_fraction,
                    "Validation fraction of the non-test patients");
  train->add_option("--config", train_config_path, "JSON file of config overrides");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run the full model/structure grid");
  nestseq::ExperimentOptions exp_opt;
  std::string exp_format;
  exp_opt.threads = threads_default;
  exp->add_option("--data", exp_opt.data_path, "Cohort file")->required();
  exp->add_option("--out", exp_opt.out_dir, "Output directory")->required();
  exp->add_option("--format", exp_format, "Input format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  exp->add_option("--hidden", exp_opt.hidden_units, "Hidden unit counts")->delimiter(',');
  exp->add_option("--epochs", exp_opt.epochs, "Training epochs");
  exp->add_option("--lr", exp_opt.learning_rate, "AdaGrad learning rate");
  exp->add_option("--trials", exp_opt.n_trials, "Trials per configuration");
  exp->add_option("--seed", exp_opt.seed, "Root seed (split + trials)");
  exp->add_option("--threads", exp_opt.threads, "Worker threads");
  exp->add_option("--test-fraction", exp_opt.test_fraction, "Test fraction of patients");
  exp->add_option("--val-fraction", exp_opt.validation_fraction,
                  "Validation fraction of the non-test patients");

  // report
  auto* rep = app.add_subcommand("report", "Re-render tables from a saved experiment");
  nestseq::ReportOptions rep_opt;
  rep->add_option("--experiment", rep_opt.experiment_path, "experiment.json path")->required();
  rep->add_option("--out", rep_opt.out_dir, "Output directory")->required();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Compare gradients against central differences");
  nestseq::GradcheckOptions grad_opt;
  grad->add_option("--cases", grad_opt.cases_per_class, "Random cases per model class");
  grad->add_option("--seed", grad_opt.seed, "Case generator seed");
  grad->add_option("--tolerance", grad_opt.tolerance, "Worst relative error allowed");
  grad->add_flag("--corrupt", grad_opt.corrupt)->group("");  // negative control, hidden

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      if (!gen_config_path.empty()) {
        nestseq::apply_generator_config(gen_opt.config, nestseq::read_text_file(gen_config_path));
      }
      if (gen->count("--patients")) gen_opt.config.n_patients = gen_patients;
      if (gen->count("--seed")) gen_opt.config.seed = gen_seed;
      if (gen->count("--signal")) gen_opt.config.signal_strength = gen_signal;
      if (gen->count("--prevalence")) gen_opt.config.target_prevalence = gen_prevalence;
      if (gen->count("--missing-rate")) gen_opt.config.missing_rate = gen_missing;
      gen_opt.format = gen_format == "jsonl" ? CohortFormat::kJsonl : CohortFormat::kCsv;
      return nestseq::cmd_generate(gen_opt, std::cout, std::cerr);
    }
    if (stats->parsed()) {
      stats_opt.format = parse_format(stats_format);
      return nestseq::cmd_stats(stats_opt, std::cout, std::cerr);
    }
    if (train->parsed()) {
      if (!train_config_path.empty()) {
        nestseq::apply_trial_config(train_opt.config,
                                    nestseq::read_text_file(train_config_path));
      }
      if (train->count("--model")) {
        train_opt.config.model = nestseq::model_kind_from_string(train_model);
      }
      if (train->count("--structure")) {
        train_opt.config.structure = nestseq::input_structure_from_string(train_structure);
      }
      if (train->count("--aggregation")) {
        train_opt.config.aggregation = nestseq::aggregation_from_string(train_agg);
      }
      if (train_opt.config.model == nestseq::ModelKind::kMlp && !train_opt.config.aggregation) {
        train_opt.config.aggregation = nestseq::Aggregation::kSum;
      }
      train_opt.format = parse_format(train_format);
      return nestseq::cmd_train(train_opt, std::cout, std::cerr);
    }
    if (exp->parsed()) {
      exp_opt.format = parse_format(exp_format);
      return nestseq::cmd_experiment(exp_opt, std::cout, std::cerr);
    }
    if (rep->parsed()) {
      return nestseq::cmd_report(rep_opt, std::cout, std::cerr);
    }
    if (grad->parsed()) {
      return nestseq::cmd_gradcheck(grad_opt, std::cout, std::cerr);
    }
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
