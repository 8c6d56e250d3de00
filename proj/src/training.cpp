#include "nestseq/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nestseq {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::size_t round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  if (frac > 0.5) return static_cast<std::size_t>(f) + 1;
  if (frac < 0.5) return static_cast<std::size_t>(f);
  const auto n = static_cast<std::size_t>(f);
  return n % 2 == 0 ? n : n + 1;
}

// Per-config sample sets, converted to model inputs once per trial.
struct PreparedData {
  std::vector<std::pair<Vector, bool>> mlp;   // (aggregated feature, label)
  std::vector<std::pair<Matrix, bool>> seq;   // (1 x tau inputs, label)
  std::vector<NestedInput> nested;

  std::size_t size() const { return mlp.size() + seq.size() + nested.size(); }
};

PreparedData prepare(const Cohort& cohort, const TrialConfig& config) {
  PreparedData data;
  if (config.model == ModelKind::kMlp) {
    for (const AggregatedSample& s :
         build_aggregated_samples(cohort, config.structure, *config.aggregation)) {
      Vector x(1);
      x[0] = s.feature;
      data.mlp.emplace_back(std::move(x), s.label);
    }
  } else if (config.structure == InputStructure::kNest) {
    for (const NestedSample& s : build_nested_samples(cohort)) {
      data.nested.push_back(to_nested_input(s));
    }
  } else {
    for (const SequenceSample& s : build_sequence_samples(cohort, config.structure)) {
      data.seq.emplace_back(to_input_matrix(s), s.label);
    }
  }
  return data;
}

ScoredLabels score_prepared(const ModelParams& params, const PreparedData& data) {
  ScoredLabels out;
  if (const MlpParams* mlp = std::get_if<MlpParams>(&params)) {
    for (const auto& [x, label] : data.mlp) {
      out.scores.push_back(mlp_forward(x, *mlp).prob);
      out.labels.push_back(label);
    }
    return out;
  }
  const RnnParams& rnn = std::get<RnnParams>(params);
  for (const auto& [inputs, label] : data.seq) {
    out.scores.push_back(rnn_forward(inputs, rnn).prob);
    out.labels.push_back(label);
  }
  for (const NestedInput& input : data.nested) {
    const NestTrace trace = nest_forward(input, rnn);
    for (std::size_t k = 0; k < input.labeled_groups.size(); ++k) {
      out.scores.push_back(trace.probs[input.labeled_groups[k]]);
      out.labels.push_back(input.labels[k]);
    }
  }
  return out;
}

EpochMetrics eval_metrics(const ModelParams& params, const PreparedData& data) {
  const ScoredLabels sl = score_prepared(params, data);
  EpochMetrics m;
  m.auroc = auroc(sl);
  m.auprc = auprc(sl);
  m.log_loss = nestseq::log_loss(sl);
  return m;
}

Vector& flat_of(ModelParams& params) {
  return std::visit([](auto& p) -> Vector& { return p.flat(); }, params);
}

ModelParams init_params(const TrialConfig& config, SeededRng& rng) {
  if (config.model == ModelKind::kMlp) {
    return MlpParams::init(config.hidden_units, 1, rng, config.init_sd);
  }
  const bool nested = config.structure == InputStructure::kNest;
  return RnnParams::init(config.hidden_units, 1, nested, rng, config.init_sd);
}

}  // namespace

void adagrad_step(Vector& theta, const Vector& grad, AdaGradState& state) {
  if (theta.size() != grad.size() || theta.size() != state.accumulators.size()) {
    throw std::invalid_argument("adagrad_step: parameter, gradient, and accumulator sizes differ");
  }
  if (!grad.allFinite()) throw std::invalid_argument("adagrad_step: non-finite gradient");
  state.accumulators.array() += grad.array().square();
  theta.array() -=
      state.learning_rate * grad.array() / (state.accumulators.array().sqrt() + state.epsilon);
}

SplitCohorts patient_split(const Cohort& cohort, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) ||
      !(spec.validation_fraction_of_train > 0.0 && spec.validation_fraction_of_train < 1.0)) {
    throw std::invalid_argument("patient_split: fractions must lie in (0, 1)");
  }
  const std::size_t n = cohort.patients.size();
  if (n < 3) fail("patient_split: need at least 3 patients, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng(spec.seed);
  rng.shuffle(order);

  const std::size_t n_test = round_half_even(spec.test_fraction * static_cast<double>(n));
  const std::size_t n_val = round_half_even(spec.validation_fraction_of_train *
                                            static_cast<double>(n - n_test));
  if (n_test == 0 || n_val == 0 || n_test + n_val >= n) {
    std::ostringstream os;
    os << "patient_split: " << n << " patients leave an empty split (test " << n_test
       << ", validation " << n_val << ", train " << (n - n_test - n_val)
       << "); enlarge the cohort";
    fail(os.str());
  }

  SplitCohorts out;
  out.test.provenance = cohort.provenance;
  out.validation.provenance = cohort.provenance;
  out.train.provenance = cohort.provenance;
  for (std::size_t i = 0; i < n; ++i) {
    const Patient& p = cohort.patients[order[i]];
    if (i < n_test) {
      out.test.patients.push_back(p);
    } else if (i < n_test + n_val) {
      out.validation.patients.push_back(p);
    } else {
      out.train.patients.push_back(p);
    }
  }
  return out;
}

void validate_config(const TrialConfig& config) {
  if (config.model == ModelKind::kNestedRnn) {
    throw std::invalid_argument(
        "TrialConfig: use model RNN with structure NEST; the nested architecture is implied");
  }
  if (config.model == ModelKind::kMlp) {
    if (!config.aggregation) {
      throw std::invalid_argument("TrialConfig: MLP needs an aggregation (SUM, MEAN, or MAX)");
    }
    if (config.structure == InputStructure::kNest) {
      throw std::invalid_argument("TrialConfig: NEST is only defined for the RNN");
    }
  } else if (config.aggregation) {
    throw std::invalid_argument("TrialConfig: aggregation applies to the MLP only");
  }
  if (config.hidden_units < 1) throw std::invalid_argument("TrialConfig: hidden_units must be >= 1");
  if (config.epochs < 0) throw std::invalid_argument("TrialConfig: epochs must be >= 0");
  if (!(config.learning_rate > 0.0)) {
    throw std::invalid_argument("TrialConfig: learning_rate must be > 0");
  }
  if (!(config.adagrad_epsilon > 0.0)) {
    throw std::invalid_argument("TrialConfig: adagrad_epsilon must be > 0");
  }
  if (!(config.init_sd >= 0.0)) throw std::invalid_argument("TrialConfig: init_sd must be >= 0");
}

std::string config_display_name(const TrialConfig& config) {
  std::string name = config.model == ModelKind::kMlp ? "MLP " : "RNN ";
  name += to_string(config.structure);
  if (config.aggregation) name += "-" + to_string(*config.aggregation);
  return name;
}

const EpochMetrics& selection_metrics(const TrialResult& result) {
  return result.epoch_metrics.empty() ? result.initial_metrics : result.epoch_metrics.back();
}

TrialResult train_one(const TrialConfig& config, const Cohort& train, const Cohort& validation) {
  validate_config(config);
  const auto t_start = std::chrono::steady_clock::now();

  const PreparedData train_data = prepare(train, config);
  const PreparedData val_data = prepare(validation, config);
  if (train_data.size() == 0) fail("train_one: no labeled training samples");
  if (val_data.size() == 0) fail("train_one: no labeled validation samples");

  TrialResult result;
  result.config = config;

  SeededRng rng(config.trial_seed);
  ModelParams params = init_params(config, rng);
  AdaGradState state;
  state.accumulators = Vector::Zero(flat_of(params).size());
  state.learning_rate = config.learning_rate;
  state.epsilon = config.adagrad_epsilon;

  result.initial_metrics = eval_metrics(params, val_data);

  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs && !result.diverged; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      double loss = 0.0;
      Vector grad;
      if (MlpParams* mlp = std::get_if<MlpParams>(&params)) {
        const auto& [x, label] = train_data.mlp[idx];
        const MlpTrace trace = mlp_forward(x, *mlp);
        loss = bce_loss(trace.logit, label);
        grad = mlp_backward(trace, x, label, *mlp).flat();
      } else {
        RnnParams& rnn = std::get<RnnParams>(params);
        if (idx < train_data.seq.size()) {
          const auto& [inputs, label] = train_data.seq[idx];
          const RnnTrace trace = rnn_forward(inputs, rnn);
          loss = bce_loss(trace.logit, label);
          grad = rnn_backward(trace, inputs, label, rnn).flat();
        } else {
          const NestedInput& input = train_data.nested[idx - train_data.seq.size()];
          const NestTrace trace = nest_forward(input, rnn);
          loss = nest_loss(trace, input);
          grad = nest_backward(trace, input, rnn).flat();
        }
      }
      if (!std::isfinite(loss) || !grad.allFinite()) {
        result.diverged = true;
        result.diverged_epoch = epoch;
        break;
      }
      adagrad_step(flat_of(params), grad, state);
    }
    if (!result.diverged) result.epoch_metrics.push_back(eval_metrics(params, val_data));
  }

  if (!result.diverged) result.final_params = std::move(params);
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

ScoredLabels score_cohort(const ModelParams& params, const Cohort& cohort,
                          const TrialConfig& config) {
  validate_config(config);
  return score_prepared(params, prepare(cohort, config));
}

TestMetrics evaluate_test(const ModelParams& params, const Cohort& test,
                          const TrialConfig& config) {
  if (test.patients.empty()) fail("evaluate_test: empty test cohort");
  const ScoredLabels sl = score_cohort(params, test, config);
  if (sl.scores.empty()) fail("evaluate_test: test cohort has no labeled hospitalizations");
  TestMetrics m;
  m.auroc = auroc(sl);
  m.auprc = auprc(sl);
  m.log_loss = nestseq::log_loss(sl);
  m.n_samples = sl.scores.size();
  m.prevalence = static_cast<double>(std::count(sl.labels.begin(), sl.labels.end(), true)) /
                 static_cast<double>(sl.labels.size());
  return m;
}

std::optional<std::size_t> select_best(const std::vector<TrialResult>& trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].diverged) continue;
    if (!best || selection_metrics(trials[i]).auroc > selection_metrics(trials[*best]).auroc) {
      best = i;
    }
  }
  return best;
}

ExperimentResult run_trials(const std::vector<TrialConfig>& grid, std::size_t n_trials,
                            std::uint64_t base_seed, const SplitCohorts& splits,
                            unsigned n_threads) {
  if (grid.empty()) throw std::invalid_argument("run_trials: empty grid");
  for (const TrialConfig& config : grid) validate_config(config);

  ExperimentResult result;
  result.grid = grid;
  SeededRng seed_gen(base_seed);
  for (std::size_t t = 0; t < n_trials; ++t) result.trial_seeds.push_back(seed_gen.next_u64());

  // One slot per (config, trial); workers fill disjoint slots, so results
  // do not depend on the thread count.
  std::vector<std::vector<std::optional<TrialResult>>> slots(
      grid.size(), std::vector<std::optional<TrialResult>>(n_trials));
  std::atomic<std::size_t> next{0};
  const std::size_t n_tasks = grid.size() * n_trials;
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      const std::size_t gi = task / n_trials;
      const std::size_t ti = task % n_trials;
      try {
        TrialConfig config = grid[gi];
        config.trial_seed = result.trial_seeds[ti];
        TrialResult r = train_one(config, splits.train, splits.validation);
        r.trial_index = ti;
        slots[gi][ti] = std::move(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(n_threads, n_tasks));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<TrialResult> trials;
    for (std::size_t ti = 0; ti < n_trials; ++ti) trials.push_back(std::move(*slots[gi][ti]));
    const std::optional<std::size_t> best = select_best(trials);
    if (best) {
      SelectedModel sel;
      sel.trial_index = *best;
      sel.validation = selection_metrics(trials[*best]);
      TrialConfig config = grid[gi];
      config.trial_seed = result.trial_seeds[*best];
      sel.test = evaluate_test(*trials[*best].final_params, splits.test, config);
      result.selected.push_back(sel);
    } else {
      result.selected.push_back(std::nullopt);
    }
    result.trials.push_back(std::move(trials));
  }
  return result;
}

std::vector<TrialConfig> study_grid(int hidden_units, const TrialConfig& defaults) {
  std::vector<TrialConfig> grid;
  auto rnn = [&](InputStructure s) {
    TrialConfig c = defaults;
    c.model = ModelKind::kRnn;
    c.structure = s;
    c.aggregation.reset();
    c.hidden_units = hidden_units;
    grid.push_back(c);
  };
  auto mlp = [&](InputStructure s, Aggregation a) {
    TrialConfig c = defaults;
    c.model = ModelKind::kMlp;
    c.structure = s;
    c.aggregation = a;
    c.hidden_units = hidden_units;
    grid.push_back(c);
  };
  rnn(InputStructure::kNest);
  rnn(InputStructure::kMarkov);
  rnn(InputStructure::kConcat);
  mlp(InputStructure::kMarkov, Aggregation::kMax);
  mlp(InputStructure::kConcat, Aggregation::kMax);
  mlp(InputStructure::kMarkov, Aggregation::kMean);
  mlp(InputStructure::kConcat, Aggregation::kMean);
  mlp(InputStructure::kMarkov, Aggregation::kSum);
  mlp(InputStructure::kConcat, Aggregation::kSum);
  return grid;
}

}  // namespace nestseq
