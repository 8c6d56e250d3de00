#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "nestseq/synth.hpp"
#include "nestseq/training.hpp"

using namespace nestseq;

namespace {

const Cohort& fixture_cohort() {
  static const Cohort cohort = [] {
    GeneratorConfig cfg;
    cfg.n_patients = 150;
    cfg.seed = 424242;
    return forward_fill_cohort(generate_cohort(cfg)).cohort;
  }();
  return cohort;
}

const SplitCohorts& fixture_splits() {
  static const SplitCohorts splits = patient_split(fixture_cohort(), {0.2, 0.2, 5});
  return splits;
}

TrialConfig mlp_config(std::uint64_t trial_seed) {
  TrialConfig c;
  c.model = ModelKind::kMlp;
  c.structure = InputStructure::kMarkov;
  c.aggregation = Aggregation::kSum;
  c.hidden_units = 4;
  c.epochs = 3;
  c.learning_rate = 0.05;
  c.trial_seed = trial_seed;
  return c;
}

TrialConfig rnn_config(InputStructure s, std::uint64_t trial_seed) {
  TrialConfig c;
  c.model = ModelKind::kRnn;
  c.structure = s;
  c.hidden_units = 3;
  c.epochs = 2;
  c.trial_seed = trial_seed;
  return c;
}

const Vector& final_flat(const TrialResult& r) {
  REQUIRE(r.final_params.has_value());
  return std::visit([](const auto& p) -> const Vector& { return p.flat(); }, *r.final_params);
}

std::set<std::string> ids(const Cohort& c) {
  std::set<std::string> out;
  for (const Patient& p : c.patients) out.insert(p.id);
  return out;
}

std::size_t labeled_count(const Cohort& c) {
  std::size_t n = 0;
  for (const Patient& p : c.patients)
    for (const Hospitalization& h : p.hospitalizations) n += h.label.has_value() ? 1 : 0;
  return n;
}

// One unlabeled single-hospitalization patient per id.
Cohort unlabeled_cohort(int n) {
  Cohort c;
  for (int i = 0; i < n; ++i) {
    Patient p;
    p.id = "u" + std::to_string(i);
    Hospitalization h;
    h.measurements.push_back({1.0, 0.0});
    p.hospitalizations.push_back(h);
    c.patients.push_back(p);
  }
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("adagrad follows the accumulator recurrence") {
  Vector theta(1);
  theta << 1.0;
  Vector grad(1);
  grad << 2.0;
  AdaGradState state;
  state.accumulators = Vector::Zero(1);
  state.learning_rate = 0.1;
  state.epsilon = 1e-12;

  adagrad_step(theta, grad, state);
  CHECK(state.accumulators[0] == 4.0);
  CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 2.0 / 2.0).epsilon(1e-12));

  adagrad_step(theta, grad, state);
  CHECK(state.accumulators[0] == 8.0);
  CHECK(theta[0] ==
        doctest::Approx(0.9 - 0.1 * 2.0 / std::sqrt(8.0)).epsilon(1e-12));
}

TEST_CASE("adagrad rejects mismatched or non-finite input") {
  Vector theta = Vector::Zero(2);
  AdaGradState state;
  state.accumulators = Vector::Zero(3);
  Vector grad = Vector::Zero(2);
  CHECK_THROWS_WITH_AS(adagrad_step(theta, grad, state), doctest::Contains("sizes differ"),
                       std::invalid_argument);
  state.accumulators = Vector::Zero(2);
  grad[1] = std::nan("");
  CHECK_THROWS_WITH_AS(adagrad_step(theta, grad, state), doctest::Contains("non-finite"),
                       std::invalid_argument);
}

TEST_CASE("ten patients split two-two-six") {
  Cohort ten = unlabeled_cohort(10);
  const SplitCohorts s = patient_split(ten, {0.2, 0.2, 0});
  CHECK(s.test.patients.size() == 2);
  CHECK(s.validation.patients.size() == 2);
  CHECK(s.train.patients.size() == 6);
}

TEST_CASE("split counts round half to even") {
  Cohort ten = unlabeled_cohort(10);
  // 0.25 * 10 = 2.5 rounds down to the even 2; 0.35 * 10 = 3.5 rounds up to 4.
  CHECK(patient_split(ten, {0.25, 0.2, 0}).test.patients.size() == 2);
  const SplitCohorts s = patient_split(ten, {0.35, 0.2, 0});
  CHECK(s.test.patients.size() == 4);
  CHECK(s.validation.patients.size() == 1);  // 0.2 * 6 = 1.2
  CHECK(s.train.patients.size() == 5);
}

TEST_CASE("splits partition the patients for every seed") {
  Cohort c = unlabeled_cohort(23);
  const std::set<std::string> all = ids(c);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SplitCohorts s = patient_split(c, {0.2, 0.2, seed});
    const std::set<std::string> test = ids(s.test);
    const std::set<std::string> val = ids(s.validation);
    const std::set<std::string> train = ids(s.train);
    REQUIRE(!test.empty());
    REQUIRE(!val.empty());
    REQUIRE(!train.empty());
    CHECK(test.size() + val.size() + train.size() == all.size());
    std::set<std::string> merged = test;
    merged.insert(val.begin(), val.end());
    merged.insert(train.begin(), train.end());
    CHECK(merged == all);
  }
}

TEST_CASE("the split is a pure function of the seed") {
  Cohort c = unlabeled_cohort(30);
  const SplitCohorts a = patient_split(c, {0.2, 0.2, 7});
  const SplitCohorts b = patient_split(c, {0.2, 0.2, 7});
  CHECK(ids(a.test) == ids(b.test));
  CHECK(ids(a.validation) == ids(b.validation));
  const SplitCohorts other = patient_split(c, {0.2, 0.2, 8});
  CHECK(ids(a.test) != ids(other.test));
}

TEST_CASE("unusable splits are rejected") {
  Cohort c = unlabeled_cohort(10);
  CHECK_THROWS_WITH_AS(patient_split(c, {0.0, 0.2, 0}), doctest::Contains("(0, 1)"),
                       std::invalid_argument);
  CHECK_THROWS_AS(patient_split(c, {0.2, 1.0, 0}), std::invalid_argument);
  Cohort two = unlabeled_cohort(2);
  CHECK_THROWS_WITH_AS(patient_split(two, {0.2, 0.2, 0}),
                       doctest::Contains("at least 3 patients"), std::runtime_error);
  Cohort three = unlabeled_cohort(3);
  CHECK_THROWS_WITH_AS(patient_split(three, {0.2, 0.2, 0}),
                       doctest::Contains("empty split"), std::runtime_error);
}

TEST_CASE("config validation catches every misuse") {
  TrialConfig c = mlp_config(0);
  CHECK_NOTHROW(validate_config(c));

  TrialConfig nested = c;
  nested.model = ModelKind::kNestedRnn;
  CHECK_THROWS_WITH_AS(validate_config(nested), doctest::Contains("NEST"),
                       std::invalid_argument);

  TrialConfig no_agg = c;
  no_agg.aggregation.reset();
  CHECK_THROWS_WITH_AS(validate_config(no_agg), doctest::Contains("needs an aggregation"),
                       std::invalid_argument);

  TrialConfig mlp_nest = c;
  mlp_nest.structure = InputStructure::kNest;
  CHECK_THROWS_WITH_AS(validate_config(mlp_nest),
                       doctest::Contains("only defined for the RNN"), std::invalid_argument);

  TrialConfig rnn_agg = rnn_config(InputStructure::kMarkov, 0);
  rnn_agg.aggregation = Aggregation::kSum;
  CHECK_THROWS_WITH_AS(validate_config(rnn_agg), doctest::Contains("MLP only"),
                       std::invalid_argument);

  TrialConfig bad = c;
  bad.hidden_units = 0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = c;
  bad.epochs = -1;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = c;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = c;
  bad.adagrad_epsilon = 0.0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = c;
  bad.init_sd = -0.1;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = c;
  bad.init_sd = 0.0;
  CHECK_NOTHROW(validate_config(bad));
  bad = c;
  bad.epochs = 0;
  CHECK_NOTHROW(validate_config(bad));
  CHECK_NOTHROW(validate_config(rnn_config(InputStructure::kNest, 0)));
}

TEST_CASE("display names read like the report") {
  CHECK(config_display_name(rnn_config(InputStructure::kNest, 0)) == "RNN NEST");
  CHECK(config_display_name(rnn_config(InputStructure::kMarkov, 0)) == "RNN MARKOV");
  CHECK(config_display_name(mlp_config(0)) == "MLP MARKOV-SUM");
  TrialConfig c = mlp_config(0);
  c.structure = InputStructure::kConcat;
  c.aggregation = Aggregation::kMax;
  CHECK(config_display_name(c) == "MLP CONCAT-MAX");
}

TEST_CASE("selection metrics fall back to the untrained model") {
  TrialResult r;
  r.initial_metrics = {0.5, 0.2, 0.7};
  CHECK(selection_metrics(r).auroc == 0.5);
  r.epoch_metrics.push_back({0.6, 0.3, 0.6});
  r.epoch_metrics.push_back({0.7, 0.4, 0.5});
  CHECK(selection_metrics(r).auroc == 0.7);
  CHECK(selection_metrics(r).log_loss == 0.5);
}

TEST_CASE("training is deterministic in the config") {
  const SplitCohorts& s = fixture_splits();
  const TrialResult a = train_one(mlp_config(99), s.train, s.validation);
  const TrialResult b = train_one(mlp_config(99), s.train, s.validation);
  CHECK_FALSE(a.diverged);
  CHECK(a.epoch_metrics.size() == 3);
  REQUIRE(final_flat(a).size() == final_flat(b).size());
  for (Eigen::Index i = 0; i < final_flat(a).size(); ++i) {
    CHECK(final_flat(a)[i] == final_flat(b)[i]);
  }
  for (std::size_t e = 0; e < a.epoch_metrics.size(); ++e) {
    CHECK(a.epoch_metrics[e].auroc == b.epoch_metrics[e].auroc);
    CHECK(a.epoch_metrics[e].log_loss == b.epoch_metrics[e].log_loss);
  }
  CHECK(a.wall_clock_seconds >= 0.0);
}

TEST_CASE("zero epochs returns the untrained model") {
  const SplitCohorts& s = fixture_splits();
  TrialConfig c = mlp_config(3);
  c.epochs = 0;
  const TrialResult r = train_one(c, s.train, s.validation);
  CHECK(r.epoch_metrics.empty());
  CHECK(selection_metrics(r).auroc == r.initial_metrics.auroc);
  // The untrained parameters are exactly the seeded initialization.
  SeededRng rng(3);
  const MlpParams expect = MlpParams::init(4, 1, rng, c.init_sd);
  REQUIRE(final_flat(r).size() == expect.size());
  for (Eigen::Index i = 0; i < expect.size(); ++i) CHECK(final_flat(r)[i] == expect.flat()[i]);
}

TEST_CASE("configs with the same shapes share their initialization") {
  const SplitCohorts& s = fixture_splits();
  TrialConfig markov = rnn_config(InputStructure::kMarkov, 17);
  TrialConfig concat = rnn_config(InputStructure::kConcat, 17);
  TrialConfig nest = rnn_config(InputStructure::kNest, 17);
  markov.epochs = concat.epochs = nest.epochs = 0;

  const TrialResult rm = train_one(markov, s.train, s.validation);
  const TrialResult rc = train_one(concat, s.train, s.validation);
  const TrialResult rn = train_one(nest, s.train, s.validation);
  const Vector& fm = final_flat(rm);
  const Vector& fc = final_flat(rc);
  const Vector& fn = final_flat(rn);

  REQUIRE(fm.size() == fc.size());
  for (Eigen::Index i = 0; i < fm.size(); ++i) CHECK(fm[i] == fc[i]);
  // The nested parameter vector extends the plain one.
  REQUIRE(fn.size() > fm.size());
  for (Eigen::Index i = 0; i < fm.size(); ++i) CHECK(fn[i] == fm[i]);
}

TEST_CASE("a few epochs beat the untrained model on strong signal") {
  const SplitCohorts& s = fixture_splits();
  TrialConfig c = mlp_config(1);
  c.epochs = 5;
  c.hidden_units = 8;
  const TrialResult r = train_one(c, s.train, s.validation);
  CHECK_FALSE(r.diverged);
  CHECK(selection_metrics(r).log_loss < r.initial_metrics.log_loss);
  CHECK(selection_metrics(r).auroc > 0.62);
}

TEST_CASE("training needs labeled samples on both sides") {
  const SplitCohorts& s = fixture_splits();
  Cohort empty_labels = unlabeled_cohort(5);
  CHECK_THROWS_WITH_AS(train_one(mlp_config(0), empty_labels, s.validation),
                       doctest::Contains("no labeled training samples"), std::runtime_error);
  CHECK_THROWS_WITH_AS(train_one(mlp_config(0), s.train, empty_labels),
                       doctest::Contains("no labeled validation samples"), std::runtime_error);
}

TEST_CASE("selection prefers the best validation auroc") {
  std::vector<TrialResult> trials(4);
  trials[0].epoch_metrics.push_back({0.70, 0.0, 0.0});
  trials[1].epoch_metrics.push_back({0.90, 0.0, 0.0});
  trials[1].diverged = true;  // ignored despite the high score
  trials[2].epoch_metrics.push_back({0.80, 0.0, 0.0});
  trials[3].epoch_metrics.push_back({0.80, 0.0, 0.0});
  const auto best = select_best(trials);
  REQUIRE(best.has_value());
  CHECK(*best == 2);  // ties go to the lowest index

  for (TrialResult& t : trials) t.diverged = true;
  CHECK_FALSE(select_best(trials).has_value());
}

TEST_CASE("scoring covers every labeled hospitalization") {
  const SplitCohorts& s = fixture_splits();
  TrialConfig c = mlp_config(3);
  c.epochs = 0;
  const TrialResult r = train_one(c, s.train, s.validation);

  const ScoredLabels sl = score_cohort(*r.final_params, s.test, c);
  CHECK(sl.scores.size() == labeled_count(s.test));

  const TestMetrics tm = evaluate_test(*r.final_params, s.test, c);
  CHECK(tm.n_samples == sl.scores.size());
  const double positives =
      static_cast<double>(std::count(sl.labels.begin(), sl.labels.end(), true));
  CHECK(tm.prevalence == doctest::Approx(positives / static_cast<double>(sl.labels.size()))
                             .epsilon(1e-15));
  CHECK(std::isfinite(tm.auroc));
  CHECK(std::isfinite(tm.log_loss));

  // The nested structure also scores one sample per labeled hospitalization.
  TrialConfig nest = rnn_config(InputStructure::kNest, 3);
  nest.epochs = 0;
  const TrialResult rn = train_one(nest, s.train, s.validation);
  CHECK(score_cohort(*rn.final_params, s.test, nest).scores.size() == labeled_count(s.test));
}

TEST_CASE("test evaluation rejects unusable cohorts") {
  const SplitCohorts& s = fixture_splits();
  TrialConfig c = mlp_config(0);
  c.epochs = 0;
  const TrialResult r = train_one(c, s.train, s.validation);
  Cohort empty;
  CHECK_THROWS_WITH_AS(evaluate_test(*r.final_params, empty, c),
                       doctest::Contains("empty test cohort"), std::runtime_error);
  CHECK_THROWS_WITH_AS(evaluate_test(*r.final_params, unlabeled_cohort(3), c),
                       doctest::Contains("no labeled hospitalizations"), std::runtime_error);
}

TEST_CASE("trial seeds come from the base seed and are shared across configs") {
  const SplitCohorts& s = fixture_splits();
  std::vector<TrialConfig> grid = {mlp_config(0), rnn_config(InputStructure::kMarkov, 0)};
  grid[0].epochs = 1;
  grid[1].epochs = 1;
  const ExperimentResult res = run_trials(grid, 3, 9, s);

  SeededRng expect(9);
  REQUIRE(res.trial_seeds.size() == 3);
  for (std::uint64_t seed : res.trial_seeds) CHECK(seed == expect.next_u64());

  REQUIRE(res.trials.size() == 2);
  for (const auto& per_config : res.trials) {
    REQUIRE(per_config.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(per_config[t].trial_index == t);
      CHECK(per_config[t].config.trial_seed == res.trial_seeds[t]);
    }
  }
  REQUIRE(res.selected.size() == 2);
  CHECK(res.selected[0].has_value());
  CHECK(res.selected[1].has_value());
}

TEST_CASE("the thread count never changes the results") {
  const SplitCohorts& s = fixture_splits();
  std::vector<TrialConfig> grid = {mlp_config(0), rnn_config(InputStructure::kMarkov, 0),
                                   rnn_config(InputStructure::kNest, 0)};
  for (TrialConfig& c : grid) c.epochs = 1;
  const ExperimentResult one = run_trials(grid, 2, 31, s, 1);
  const ExperimentResult four = run_trials(grid, 2, 31, s, 4);

  CHECK(one.trial_seeds == four.trial_seeds);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t t = 0; t < 2; ++t) {
      const TrialResult& a = one.trials[g][t];
      const TrialResult& b = four.trials[g][t];
      CHECK(a.diverged == b.diverged);
      CHECK(selection_metrics(a).auroc == selection_metrics(b).auroc);
      CHECK(selection_metrics(a).auprc == selection_metrics(b).auprc);
      CHECK(selection_metrics(a).log_loss == selection_metrics(b).log_loss);
      const Vector& fa = final_flat(a);
      const Vector& fb = final_flat(b);
      REQUIRE(fa.size() == fb.size());
      for (Eigen::Index i = 0; i < fa.size(); ++i) CHECK(fa[i] == fb[i]);
    }
    REQUIRE(one.selected[g].has_value());
    REQUIRE(four.selected[g].has_value());
    CHECK(one.selected[g]->trial_index == four.selected[g]->trial_index);
    CHECK(one.selected[g]->test.auroc == four.selected[g]->test.auroc);
  }
}

TEST_CASE("an empty grid is rejected") {
  CHECK_THROWS_WITH_AS(run_trials({}, 1, 0, fixture_splits()),
                       doctest::Contains("empty grid"), std::invalid_argument);
}

TEST_CASE("the study grid lists nine configurations in report order") {
  TrialConfig defaults;
  defaults.learning_rate = 0.02;
  const std::vector<TrialConfig> grid = study_grid(50, defaults);
  REQUIRE(grid.size() == 9);
  const std::vector<std::string> expect = {
      "RNN NEST",        "RNN MARKOV",      "RNN CONCAT",
      "MLP MARKOV-MAX",  "MLP CONCAT-MAX",  "MLP MARKOV-MEAN",
      "MLP CONCAT-MEAN", "MLP MARKOV-SUM",  "MLP CONCAT-SUM"};
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(config_display_name(grid[i]) == expect[i]);
    CHECK(grid[i].hidden_units == 50);
    CHECK(grid[i].learning_rate == 0.02);
    CHECK_NOTHROW(validate_config(grid[i]));
  }
}

TEST_SUITE_END();
