// The experiment protocol: patient-grouped splitting, AdaGrad, per-trial
// training with shared initializations, selection by validation AUROC, and
// held-out test evaluation.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nestseq/cohort.hpp"
#include "nestseq/metrics.hpp"
#include "nestseq/models.hpp"
#include "nestseq/structures.hpp"

namespace nestseq {

struct AdaGradState {
  Vector accumulators;  // same length as the flat parameters, starts at zero
  double learning_rate = 0.01;
  double epsilon = 1e-8;
};

/// acc += g^2; theta -= lr * g / (sqrt(acc) + eps), elementwise.
/// Non-finite gradients are rejected; callers treat that as divergence.
void adagrad_step(Vector& theta, const Vector& grad, AdaGradState& state);

struct SplitSpec {
  double test_fraction = 0.2;
  double validation_fraction_of_train = 0.2;
  std::uint64_t seed = 0;
};

struct SplitCohorts {
  Cohort train;
  Cohort validation;
  Cohort test;
};

/// Partition patients (never hospitalizations) into train/validation/test.
/// Patient order is shuffled by the split seed; counts follow
/// round-half-to-even on fraction * N, so N = 10 gives 2 test, 2
/// validation, 6 train. Any empty part is rejected.
SplitCohorts patient_split(const Cohort& cohort, const SplitSpec& spec);

/// One cell of the experiment grid. `model` is kMlp or kRnn; NEST plus
/// kRnn selects the nested architecture. Aggregation applies to MLPs only.
struct TrialConfig {
  ModelKind model = ModelKind::kMlp;
  InputStructure structure = InputStructure::kMarkov;
  std::optional<Aggregation> aggregation;
  int hidden_units = 10;
  int epochs = 20;
  double learning_rate = 0.01;
  double adagrad_epsilon = 1e-8;
  double init_sd = 0.01;
  std::uint64_t trial_seed = 0;
};

void validate_config(const TrialConfig& config);

/// "RNN NEST", "MLP MARKOV-SUM", ... (Table-style display name).
std::string config_display_name(const TrialConfig& config);

struct EpochMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double log_loss = 0.0;
};

struct TrialResult {
  TrialConfig config;
  std::size_t trial_index = 0;
  bool diverged = false;
  int diverged_epoch = -1;              // 1-based epoch where training blew up
  EpochMetrics initial_metrics;         // untrained model on the validation set
  std::vector<EpochMetrics> epoch_metrics;  // one entry per completed epoch
  std::optional<ModelParams> final_params;  // absent for diverged trials
  double wall_clock_seconds = 0.0;      // informational only, never serialized
};

/// Validation metrics used for selection: after the last epoch, or the
/// untrained metrics when epochs = 0.
const EpochMetrics& selection_metrics(const TrialResult& result);

/// Train one configuration: parameters initialized from trial_seed,
/// per-sample stochastic updates (per-patient for NEST), the training
/// order reshuffled each epoch from the same seed stream, validation
/// metrics after every epoch, exactly config.epochs epochs.
TrialResult train_one(const TrialConfig& config, const Cohort& train, const Cohort& validation);

struct TestMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double log_loss = 0.0;
  double prevalence = 0.0;   // label prevalence of the scored samples
  std::size_t n_samples = 0;  // scored at the hospitalization level
};

/// Score every labeled hospitalization sample in `test` with the given
/// parameters under the config's input structure.
TestMetrics evaluate_test(const ModelParams& params, const Cohort& test,
                          const TrialConfig& config);

/// Probabilities + labels for every labeled hospitalization in the cohort.
ScoredLabels score_cohort(const ModelParams& params, const Cohort& cohort,
                          const TrialConfig& config);

/// Index of the non-diverged trial with the best selection AUROC (ties go
/// to the lowest trial index), or nullopt when every trial diverged.
std::optional<std::size_t> select_best(const std::vector<TrialResult>& trials);

struct SelectedModel {
  std::size_t trial_index = 0;
  EpochMetrics validation;
  TestMetrics test;
};

struct ExperimentResult {
  std::vector<TrialConfig> grid;                       // trial_seed unset
  std::vector<std::uint64_t> trial_seeds;              // shared across configs
  std::vector<std::vector<TrialResult>> trials;        // [grid index][trial]
  std::vector<std::optional<SelectedModel>> selected;  // per grid entry
};

/// Run n_trials trials of every grid entry. Trial t of every config uses
/// the same seed drawn from base_seed, so models with compatible shapes
/// start from identical parameters. Trials may run on several threads;
/// results are deterministic regardless of thread count.
ExperimentResult run_trials(const std::vector<TrialConfig>& grid, std::size_t n_trials,
                            std::uint64_t base_seed, const SplitCohorts& splits,
                            unsigned n_threads = 1);

/// The nine model/structure/aggregation combinations evaluated in the
/// study, in report order, for one hidden-unit count.
std::vector<TrialConfig> study_grid(int hidden_units, const TrialConfig& defaults);

}  // namespace nestseq
