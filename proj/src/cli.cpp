#include "nestseq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nestseq {

namespace {

using json = nlohmann::ordered_json;

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string compact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("output directory must be given");
  std::filesystem::create_directories(dir);
}

void print_stats(const CohortStats& st, std::ostream& out) {
  char buf[128];
  out << "patients           " << st.n_patients << "\n";
  out << "hospitalizations   " << st.n_hospitalizations << "\n";
  out << "measurements       " << st.n_measurements << "\n";
  out << "labeled            " << st.n_labeled << "\n";
  out << "positive           " << st.n_positive << "\n";
  if (std::isnan(st.prevalence)) {
    out << "prevalence         n/a\n";
  } else {
    std::snprintf(buf, sizeof(buf), "prevalence         %.4f\n", st.prevalence);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "hosp per patient   %.2f (sd %.2f)\n",
                st.mean_hosp_per_patient, st.sd_hosp_per_patient);
  out << buf;
  std::snprintf(buf, sizeof(buf), "meas per hosp      %.2f (sd %.2f)\n", st.mean_meas_per_hosp,
                st.sd_meas_per_hosp);
  out << buf;
}

json stats_to_json(const CohortStats& st) {
  json j;
  j["n_patients"] = st.n_patients;
  j["n_hospitalizations"] = st.n_hospitalizations;
  j["n_measurements"] = st.n_measurements;
  j["n_labeled"] = st.n_labeled;
  j["n_positive"] = st.n_positive;
  if (std::isnan(st.prevalence)) {
    j["prevalence"] = nullptr;
  } else {
    j["prevalence"] = st.prevalence;
  }
  j["mean_hosp_per_patient"] = st.mean_hosp_per_patient;
  j["sd_hosp_per_patient"] = st.sd_hosp_per_patient;
  j["mean_meas_per_hosp"] = st.mean_meas_per_hosp;
  j["sd_meas_per_hosp"] = st.sd_meas_per_hosp;
  return j;
}

void print_trial_lines(const ExperimentResult& res, std::ostream& out, std::ostream& err) {
  for (std::size_t gi = 0; gi < res.grid.size(); ++gi) {
    for (const TrialResult& r : res.trials[gi]) {
      out << config_display_name(r.config) << " hu=" << r.config.hidden_units << " trial "
          << r.trial_index;
      if (r.diverged) {
        out << ": diverged at epoch " << r.diverged_epoch << "\n";
      } else {
        out << ": val auroc " << fixed6(selection_metrics(r).auroc) << "\n";
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2fs", r.wall_clock_seconds);
      err << config_display_name(r.config) << " hu=" << r.config.hidden_units << " trial "
          << r.trial_index << " took " << buf << "\n";
    }
  }
}

struct SeedPlan {
  std::uint64_t split_seed;
  std::uint64_t trial_base_seed;
};

SeedPlan plan_seeds(std::uint64_t root_seed) {
  SeededRng root(root_seed);
  SeedPlan plan;
  plan.split_seed = root.next_u64();
  plan.trial_base_seed = root.next_u64();
  return plan;
}

}  // namespace

Cohort load_cohort(const std::string& path, std::optional<CohortFormat> format) {
  CohortFormat f;
  if (format) {
    f = *format;
  } else {
    const std::string ext = std::filesystem::path(path).extension().string();
    f = (ext == ".jsonl" || ext == ".json") ? CohortFormat::kJsonl : CohortFormat::kCsv;
  }
  return ingest(path, f);
}

void apply_generator_config(GeneratorConfig& config, const std::string& json_text) {
  const json j = json::parse(json_text);
  if (!j.is_object()) throw std::invalid_argument("generator config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "n_patients") {
      config.n_patients = value.get<std::size_t>();
    } else if (key == "hosp_count_mean") {
      config.hosp_count_mean = value.get<double>();
    } else if (key == "hosp_count_sd") {
      config.hosp_count_sd = value.get<double>();
    } else if (key == "meas_count_mean") {
      config.meas_count_mean = value.get<double>();
    } else if (key == "meas_count_sd") {
      config.meas_count_sd = value.get<double>();
    } else if (key == "baseline_log_mean") {
      config.baseline_log_mean = value.get<double>();
    } else if (key == "baseline_log_sd") {
      config.baseline_log_sd = value.get<double>();
    } else if (key == "within_noise_sd") {
      config.within_noise_sd = value.get<double>();
    } else if (key == "elevation_prob") {
      config.elevation_prob = value.get<double>();
    } else if (key == "elevation_scale") {
      config.elevation_scale = value.get<double>();
    } else if (key == "signal_strength") {
      config.signal_strength = value.get<double>();
    } else if (key == "target_prevalence") {
      config.target_prevalence = value.get<double>();
    } else if (key == "missing_rate") {
      config.missing_rate = value.get<double>();
    } else if (key == "seed") {
      config.seed = value.get<std::uint64_t>();
    } else {
      throw std::invalid_argument("generator config: unknown key '" + key + "'");
    }
  }
}

void apply_trial_config(TrialConfig& config, const std::string& json_text) {
  const json j = json::parse(json_text);
  if (!j.is_object()) throw std::invalid_argument("trial config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      config.model = model_kind_from_string(value.get<std::string>());
    } else if (key == "structure") {
      config.structure = input_structure_from_string(value.get<std::string>());
    } else if (key == "aggregation") {
      if (value.is_null()) {
        config.aggregation.reset();
      } else {
        config.aggregation = aggregation_from_string(value.get<std::string>());
      }
    } else if (key == "hidden_units") {
      config.hidden_units = value.get<int>();
    } else if (key == "epochs") {
      config.epochs = value.get<int>();
    } else if (key == "learning_rate") {
      config.learning_rate = value.get<double>();
    } else if (key == "adagrad_epsilon") {
      config.adagrad_epsilon = value.get<double>();
    } else if (key == "init_sd") {
      config.init_sd = value.get<double>();
    } else {
      throw std::invalid_argument("trial config: unknown key '" + key + "'");
    }
  }
}

int cmd_generate(const GenerateOptions& opt, std::ostream& out, std::ostream& err) {
  (void)err;
  ensure_dir(opt.out_dir);
  const Cohort cohort = generate_cohort(opt.config);
  const std::string fname = opt.format == CohortFormat::kCsv ? "cohort.csv" : "cohort.jsonl";
  const std::string path = join_path(opt.out_dir, fname);
  write_cohort(cohort, path, opt.format);

  RunManifest m;
  m.command = "generate";
  m.base_seed = opt.config.seed;
  m.n_trials = 0;
  m.cohort_provenance = cohort.provenance;
  m.details = {{"file", fname},
               {"n_patients", std::to_string(opt.config.n_patients)},
               {"signal_strength", compact(opt.config.signal_strength)},
               {"target_prevalence", compact(opt.config.target_prevalence)},
               {"missing_rate", compact(opt.config.missing_rate)}};
  write_text_file(join_path(opt.out_dir, "manifest.json"), manifest_json(m));

  out << "wrote " << path << "\n";
  print_stats(cohort_stats(cohort), out);
  return 0;
}

int cmd_stats(const StatsOptions& opt, std::ostream& out, std::ostream& err) {
  (void)err;
  const Cohort cohort = load_cohort(opt.data_path, opt.format);
  const CohortStats st = cohort_stats(cohort);
  if (opt.as_json) {
    out << stats_to_json(st).dump(2) << "\n";
  } else {
    print_stats(st, out);
  }
  return 0;
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  TrialConfig config = opt.config;
  validate_config(config);
  if (opt.n_trials == 0) throw std::invalid_argument("train: need at least 1 trial");
  ensure_dir(opt.out_dir);

  const Cohort raw = load_cohort(opt.data_path, opt.format);
  const CohortFillResult filled = forward_fill_cohort(raw);
  if (filled.dropped_leading > 0) {
    err << "note: dropped " << filled.dropped_leading << " unfillable leading measurements\n";
  }

  const SeedPlan seeds = plan_seeds(opt.seed);
  SplitSpec split;
  split.test_fraction = opt.test_fraction;
  split.validation_fraction_of_train = opt.validation_fraction;
  split.seed = seeds.split_seed;
  const SplitCohorts splits = patient_split(filled.cohort, split);
  out << "split: " << splits.train.patients.size() << " train / "
      << splits.validation.patients.size() << " validation / " << splits.test.patients.size()
      << " test patients\n";

  const ExperimentResult res =
      run_trials({config}, opt.n_trials, seeds.trial_base_seed, splits, opt.threads);
  print_trial_lines(res, out, err);

  write_text_file(join_path(opt.out_dir, "experiment.json"), experiment_to_json(res));

  RunManifest m;
  m.command = "train";
  m.base_seed = opt.seed;
  m.n_trials = opt.n_trials;
  m.cohort_provenance = raw.provenance;
  m.details = {{"config", config_display_name(config)},
               {"hidden_units", std::to_string(config.hidden_units)},
               {"epochs", std::to_string(config.epochs)},
               {"learning_rate", compact(config.learning_rate)},
               {"test_fraction", compact(opt.test_fraction)},
               {"validation_fraction", compact(opt.validation_fraction)},
               {"data", opt.data_path}};
  write_text_file(join_path(opt.out_dir, "manifest.json"), manifest_json(m));

  if (!res.selected[0]) {
    err << "error: every trial diverged, no model to save\n";
    return 1;
  }
  const SelectedModel& sel = *res.selected[0];
  const TrialResult& best = res.trials[0][sel.trial_index];
  save_params(*best.final_params, join_path(opt.out_dir, "model.nsqp"), ParamsFormat::kBinary);

  json metrics;
  metrics["format"] = "nestseq-train-metrics";
  metrics["version"] = 1;
  metrics["selected_trial"] = sel.trial_index;
  metrics["validation"] = json{{"auroc", sel.validation.auroc},
                               {"auprc", sel.validation.auprc},
                               {"log_loss", sel.validation.log_loss}};
  metrics["test"] = json{{"auroc", sel.test.auroc},
                         {"auprc", sel.test.auprc},
                         {"log_loss", sel.test.log_loss},
                         {"prevalence", sel.test.prevalence},
                         {"n_samples", sel.test.n_samples}};
  write_text_file(join_path(opt.out_dir, "metrics.json"), metrics.dump(2) + "\n");

  out << "selected trial " << sel.trial_index << " (val auroc " << fixed6(sel.validation.auroc)
      << ")\n";
  out << "test: auroc " << fixed6(sel.test.auroc) << ", auprc " << fixed6(sel.test.auprc)
      << ", log loss " << fixed6(sel.test.log_loss) << ", prevalence "
      << fixed6(sel.test.prevalence) << " (" << sel.test.n_samples << " hospitalizations)\n";
  return 0;
}

int cmd_experiment(const ExperimentOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.hidden_units.empty()) throw std::invalid_argument("experiment: no hidden unit counts");
  if (opt.n_trials == 0) throw std::invalid_argument("experiment: need at least 1 trial");
  ensure_dir(opt.out_dir);

  const Cohort raw = load_cohort(opt.data_path, opt.format);
  const CohortFillResult filled = forward_fill_cohort(raw);
  if (filled.dropped_leading > 0) {
    err << "note: dropped " << filled.dropped_leading << " unfillable leading measurements\n";
  }

  const SeedPlan seeds = plan_seeds(opt.seed);
  SplitSpec split;
  split.test_fraction = opt.test_fraction;
  split.validation_fraction_of_train = opt.validation_fraction;
  split.seed = seeds.split_seed;
  const SplitCohorts splits = patient_split(filled.cohort, split);
  out << "split: " << splits.train.patients.size() << " train / "
      << splits.validation.patients.size() << " validation / " << splits.test.patients.size()
      << " test patients\n";

  TrialConfig defaults;
  defaults.epochs = opt.epochs;
  defaults.learning_rate = opt.learning_rate;
  std::vector<TrialConfig> grid;
  for (int hu : opt.hidden_units) {
    for (const TrialConfig& c : study_grid(hu, defaults)) grid.push_back(c);
  }

  const ExperimentResult res =
      run_trials(grid, opt.n_trials, seeds.trial_base_seed, splits, opt.threads);
  print_trial_lines(res, out, err);

  write_text_file(join_path(opt.out_dir, "experiment.json"), experiment_to_json(res));
  const std::string table_md = render_table_markdown(res);
  write_text_file(join_path(opt.out_dir, "table.md"), table_md);
  write_text_file(join_path(opt.out_dir, "table.csv"), render_table_csv(res));
  write_text_file(join_path(opt.out_dir, "quantiles.csv"), render_quantiles_csv(res));

  RunManifest m;
  m.command = "experiment";
  m.base_seed = opt.seed;
  m.n_trials = opt.n_trials;
  m.cohort_provenance = raw.provenance;
  std::string hu_list;
  for (int hu : opt.hidden_units) {
    if (!hu_list.empty()) hu_list += ",";
    hu_list += std::to_string(hu);
  }
  m.details = {{"hidden_units", hu_list},
               {"epochs", std::to_string(opt.epochs)},
               {"learning_rate", compact(opt.learning_rate)},
               {"test_fraction", compact(opt.test_fraction)},
               {"validation_fraction", compact(opt.validation_fraction)},
               {"data", opt.data_path}};
  write_text_file(join_path(opt.out_dir, "manifest.json"), manifest_json(m));

  out << "\n" << table_md;
  return 0;
}

int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
  (void)err;
  ensure_dir(opt.out_dir);
  const ExperimentResult res = experiment_from_json(read_text_file(opt.experiment_path));
  const std::string table_md = render_table_markdown(res);
  write_text_file(join_path(opt.out_dir, "table.md"), table_md);
  write_text_file(join_path(opt.out_dir, "table.csv"), render_table_csv(res));
  write_text_file(join_path(opt.out_dir, "quantiles.csv"), render_quantiles_csv(res));

  RunManifest m;
  m.command = "report";
  m.n_trials = res.trial_seeds.size();
  m.details = {{"source", opt.experiment_path}};
  write_text_file(join_path(opt.out_dir, "manifest.json"), manifest_json(m));

  out << table_md;
  return 0;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const TensorCheck& c : checks) w = std::max(w, c.worst_rel_err);
  return w;
}

bool GradCheckReport::passed(double tolerance) const { return worst() < tolerance; }

namespace {

struct TensorRange {
  const char* name;
  Eigen::Index begin;
  Eigen::Index end;
};

std::vector<TensorRange> rnn_ranges(const RnnParams& p) {
  const Eigen::Index h = p.hidden();
  const Eigen::Index d = p.input_dim();
  std::vector<TensorRange> r;
  Eigen::Index off = 0;
  auto push = [&](const char* name, Eigen::Index n) {
    r.push_back({name, off, off + n});
    off += n;
  };
  push("w_in", h * d);
  push("u_rec", h * h);
  push("v_out", h);
  push("b_hid", h);
  push("c_out", 1);
  if (p.nested()) {
    push("w_hosp", h * h);
    push("b_hosp", h);
  }
  return r;
}

std::vector<TensorRange> mlp_ranges(const MlpParams& p) {
  const Eigen::Index h = p.hidden();
  const Eigen::Index d = p.input_dim();
  return {{"w_in", 0, h * d},
          {"b_hid", h * d, h * d + h},
          {"v_out", h * d + h, h * d + 2 * h},
          {"c_out", h * d + 2 * h, h * d + 2 * h + 1}};
}

class WorstTracker {
 public:
  explicit WorstTracker(GradCheckReport& report) : report_(report) {}

  void update(const std::string& model, const std::vector<TensorRange>& ranges,
              const Vector& analytic, const Vector& fd) {
    for (const TensorRange& range : ranges) {
      double worst = 0.0;
      for (Eigen::Index i = range.begin; i < range.end; ++i) {
        const double rel = std::abs(analytic[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
        worst = std::max(worst, rel);
      }
      TensorCheck* slot = nullptr;
      for (TensorCheck& c : report_.checks) {
        if (c.model == model && c.tensor == range.name) {
          slot = &c;
          break;
        }
      }
      if (!slot) {
        report_.checks.push_back({model, range.name, 0.0});
        slot = &report_.checks.back();
      }
      slot->worst_rel_err = std::max(slot->worst_rel_err, worst);
    }
  }

 private:
  GradCheckReport& report_;
};

Matrix random_inputs(SeededRng& rng, Eigen::Index d, Eigen::Index tau) {
  Matrix m(d, tau);
  for (Eigen::Index t = 0; t < tau; ++t) m.col(t) = rng.normals(d, 0.0, 1.0);
  return m;
}

}  // namespace

GradCheckReport run_gradient_check(std::size_t cases_per_class, std::uint64_t seed,
                                   bool corrupt) {
  constexpr int kHidden[] = {1, 3, 10};
  constexpr int kInputDim[] = {1, 3};
  SeededRng rng(seed);
  GradCheckReport report;
  report.cases_per_class = cases_per_class;
  WorstTracker tracker(report);

  for (std::size_t i = 0; i < cases_per_class; ++i) {
    {
      const int h = kHidden[rng.next_below(3)];
      const int d = kInputDim[rng.next_below(2)];
      MlpParams params = MlpParams::init(h, d, rng, 0.5);
      const Vector x = rng.normals(d, 0.0, 1.0);
      const bool label = rng.uniform01() < 0.5;
      Vector analytic = mlp_backward(mlp_forward(x, params), x, label, params).flat();
      if (corrupt) analytic[0] += 1e-3;
      tracker.update("mlp", mlp_ranges(params), analytic, fd_mlp_gradients(x, label, params).flat());
    }
    {
      const int h = kHidden[rng.next_below(3)];
      const int d = kInputDim[rng.next_below(2)];
      const Eigen::Index tau = 1 + static_cast<Eigen::Index>(rng.next_below(6));
      RnnParams params = RnnParams::init(h, d, false, rng, 0.5);
      const Matrix inputs = random_inputs(rng, d, tau);
      const bool label = rng.uniform01() < 0.5;
      Vector analytic = rnn_backward(rnn_forward(inputs, params), inputs, label, params).flat();
      if (corrupt) analytic[0] += 1e-3;
      tracker.update("rnn", rnn_ranges(params), analytic,
                     fd_rnn_gradients(inputs, label, params).flat());
    }
    {
      const int h = kHidden[rng.next_below(3)];
      const int d = kInputDim[rng.next_below(2)];
      const std::size_t n_groups = 1 + rng.next_below(4);
      RnnParams params = RnnParams::init(h, d, true, rng, 0.5);
      NestedInput input;
      for (std::size_t a = 0; a < n_groups; ++a) {
        const Eigen::Index tau = 1 + static_cast<Eigen::Index>(rng.next_below(6));
        input.groups.push_back(random_inputs(rng, d, tau));
      }
      for (std::size_t a = 0; a < n_groups; ++a) {
        if (rng.uniform01() < 0.7) {
          input.labeled_groups.push_back(a);
          input.labels.push_back(rng.uniform01() < 0.5);
        }
      }
      if (input.labeled_groups.empty()) {
        input.labeled_groups.push_back(n_groups - 1);
        input.labels.push_back(rng.uniform01() < 0.5);
      }
      Vector analytic = nest_backward(nest_forward(input, params), input, params).flat();
      if (corrupt) analytic[0] += 1e-3;
      tracker.update("nested-rnn", rnn_ranges(params), analytic,
                     fd_nest_gradients(input, params).flat());
    }
  }
  return report;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  const GradCheckReport report = run_gradient_check(opt.cases_per_class, opt.seed, opt.corrupt);
  if (opt.cases_per_class == 0) {
    err << "warning: 0 cases requested, nothing was checked\n";
    out << "gradient check: PASS (vacuous, 0 cases)\n";
    return 0;
  }
  for (const TensorCheck& c : report.checks) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", c.worst_rel_err);
    out << c.model << " " << c.tensor << " worst relative error " << buf << "\n";
  }
  const bool ok = report.passed(opt.tolerance);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", opt.tolerance);
  out << "gradient check: " << (ok ? "PASS" : "FAIL") << " (" << report.cases_per_class
      << " cases per model class, tolerance " << buf << ")\n";
  if (!ok) err << "reproduce with --seed " << opt.seed << "\n";
  return ok ? 0 : 1;
}

}  // namespace nestseq
