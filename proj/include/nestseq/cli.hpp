#pragma once

// Command implementations behind the `nestseq` binary. The parsing layer in
// tools/main.cpp builds an options struct and dispatches here, so every
// command is callable from tests without spawning a process.
//
// Exit codes: 0 success, 1 operational failure (divergence, failed check),
// 2 usage error (mapped in main from std::invalid_argument).
//
// Commands that take a --seed derive two sub-seeds from it through a
// SeededRng: the first drives the patient split shuffle, the second the
// per-trial seeds. Output files never contain timing or host details, so a
// rerun with the same flags writes byte-identical artifacts.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nestseq/report.hpp"
#include "nestseq/synth.hpp"
#include "nestseq/training.hpp"

namespace nestseq {

/// Format from the flag if given, else from the extension (.jsonl/.json
/// mean JSONL, anything else CSV).
Cohort load_cohort(const std::string& path, std::optional<CohortFormat> format);

/// Apply a JSON object of overrides ({"n_patients": 500, ...}); keys match
/// the GeneratorConfig fields, unknown keys are rejected.
void apply_generator_config(GeneratorConfig& config, const std::string& json_text);

/// Same idea for TrialConfig ({"model": "rnn", "structure": "NEST", ...});
/// trial_seed is not accepted, it is drawn per trial.
void apply_trial_config(TrialConfig& config, const std::string& json_text);

struct GenerateOptions {
  std::string out_dir;
  GeneratorConfig config;
  CohortFormat format = CohortFormat::kCsv;
};
int cmd_generate(const GenerateOptions& opt, std::ostream& out, std::ostream& err);

struct StatsOptions {
  std::string data_path;
  std::optional<CohortFormat> format;
  bool as_json = false;
};
int cmd_stats(const StatsOptions& opt, std::ostream& out, std::ostream& err);

struct TrainOptions {
  std::string data_path;
  std::optional<CohortFormat> format;
  TrialConfig config;  // trial_seed is ignored; seeds come from `seed`
  std::size_t n_trials = 10;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  double validation_fraction = 0.2;
  unsigned threads = 1;
  std::string out_dir;
};
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);

struct ExperimentOptions {
  std::string data_path;
  std::optional<CohortFormat> format;
  std::vector<int> hidden_units = {10, 50, 100};
  int epochs = 20;
  double learning_rate = 0.01;
  std::size_t n_trials = 5;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  double validation_fraction = 0.2;
  unsigned threads = 1;
  std::string out_dir;
};
int cmd_experiment(const ExperimentOptions& opt, std::ostream& out, std::ostream& err);

struct ReportOptions {
  std::string experiment_path;
  std::string out_dir;
};
int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err);

struct GradcheckOptions {
  std::size_t cases_per_class = 50;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;
  bool corrupt = false;  // negative control: perturb one analytic component
};
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err);

struct TensorCheck {
  std::string model;
  std::string tensor;
  double worst_rel_err = 0.0;
};

struct GradCheckReport {
  std::size_t cases_per_class = 0;
  std::vector<TensorCheck> checks;
  double worst() const;
  bool passed(double tolerance) const;
};

/// Compare every analytic gradient against central differences on
/// `cases_per_class` random configurations per model class (hidden size in
/// {1, 3, 10}, input dim in {1, 3}, sequence length up to 6, up to 4
/// hospitalizations for the nested RNN). Relative error per component is
/// |g - g_fd| / max(1, |g_fd|); the report keeps the worst per tensor.
GradCheckReport run_gradient_check(std::size_t cases_per_class, std::uint64_t seed,
                                   bool corrupt = false);

}  // namespace nestseq
