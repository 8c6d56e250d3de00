#include "nestseq/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
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

std::string struct_column(const TrialConfig& config) {
  std::string s = to_string(config.structure);
  if (config.aggregation) s += "-" + to_string(*config.aggregation);
  return s;
}

json config_to_json(const TrialConfig& c) {
  json j;
  j["model"] = to_string(c.model);
  j["structure"] = to_string(c.structure);
  if (c.aggregation) j["aggregation"] = to_string(*c.aggregation);
  j["hidden_units"] = c.hidden_units;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["adagrad_epsilon"] = c.adagrad_epsilon;
  j["init_sd"] = c.init_sd;
  j["trial_seed"] = c.trial_seed;
  return j;
}

TrialConfig config_from_json(const json& j) {
  TrialConfig c;
  c.model = model_kind_from_string(j.at("model").get<std::string>());
  c.structure = input_structure_from_string(j.at("structure").get<std::string>());
  if (j.contains("aggregation")) {
    c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  }
  c.hidden_units = j.at("hidden_units").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adagrad_epsilon = j.at("adagrad_epsilon").get<double>();
  c.init_sd = j.at("init_sd").get<double>();
  c.trial_seed = j.at("trial_seed").get<std::uint64_t>();
  return c;
}

json metrics_to_json(const EpochMetrics& m) {
  return json{{"auroc", m.auroc}, {"auprc", m.auprc}, {"log_loss", m.log_loss}};
}

EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics m;
  m.auroc = j.at("auroc").get<double>();
  m.auprc = j.at("auprc").get<double>();
  m.log_loss = j.at("log_loss").get<double>();
  return m;
}

json trial_to_json(const TrialResult& r) {
  json j;
  j["config"] = config_to_json(r.config);
  j["trial_index"] = r.trial_index;
  j["diverged"] = r.diverged;
  if (r.diverged) j["diverged_epoch"] = r.diverged_epoch;
  j["initial_metrics"] = metrics_to_json(r.initial_metrics);
  j["epoch_metrics"] = json::array();
  for (const EpochMetrics& m : r.epoch_metrics) j["epoch_metrics"].push_back(metrics_to_json(m));
  return j;
}

TrialResult trial_from_json(const json& j) {
  TrialResult r;
  r.config = config_from_json(j.at("config"));
  r.trial_index = j.at("trial_index").get<std::size_t>();
  r.diverged = j.at("diverged").get<bool>();
  if (j.contains("diverged_epoch")) r.diverged_epoch = j.at("diverged_epoch").get<int>();
  r.initial_metrics = metrics_from_json(j.at("initial_metrics"));
  for (const json& m : j.at("epoch_metrics")) r.epoch_metrics.push_back(metrics_from_json(m));
  return r;
}

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

std::string trial_result_to_json(const TrialResult& result) {
  return trial_to_json(result).dump(2) + "\n";
}

TrialResult trial_result_from_json(const std::string& text) {
  return trial_from_json(json::parse(text));
}

std::string experiment_to_json(const ExperimentResult& result) {
  json j;
  j["format"] = "nestseq-experiment";
  j["version"] = 1;
  j["grid"] = json::array();
  for (const TrialConfig& c : result.grid) j["grid"].push_back(config_to_json(c));
  j["trial_seeds"] = result.trial_seeds;
  j["trials"] = json::array();
  for (const auto& per_config : result.trials) {
    json arr = json::array();
    for (const TrialResult& r : per_config) arr.push_back(trial_to_json(r));
    j["trials"].push_back(std::move(arr));
  }
  j["selected"] = json::array();
  for (const auto& sel : result.selected) {
    if (!sel) {
      j["selected"].push_back(nullptr);
      continue;
    }
    json s;
    s["trial_index"] = sel->trial_index;
    s["validation"] = metrics_to_json(sel->validation);
    s["test"] = json{{"auroc", sel->test.auroc},
                     {"auprc", sel->test.auprc},
                     {"log_loss", sel->test.log_loss},
                     {"prevalence", sel->test.prevalence},
                     {"n_samples", sel->test.n_samples}};
    j["selected"].push_back(std::move(s));
  }
  return j.dump(2) + "\n";
}

ExperimentResult experiment_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != std::string("nestseq-experiment")) {
    throw std::runtime_error("experiment_from_json: not an experiment file");
  }
  if (j.at("version").get<int>() != 1) {
    throw std::runtime_error("experiment_from_json: unsupported version");
  }
  ExperimentResult result;
  for (const json& c : j.at("grid")) result.grid.push_back(config_from_json(c));
  result.trial_seeds = j.at("trial_seeds").get<std::vector<std::uint64_t>>();
  for (const json& per_config : j.at("trials")) {
    std::vector<TrialResult> trials;
    for (const json& t : per_config) trials.push_back(trial_from_json(t));
    result.trials.push_back(std::move(trials));
  }
  for (const json& s : j.at("selected")) {
    if (s.is_null()) {
      result.selected.push_back(std::nullopt);
      continue;
    }
    SelectedModel sel;
    sel.trial_index = s.at("trial_index").get<std::size_t>();
    sel.validation = metrics_from_json(s.at("validation"));
    const json& t = s.at("test");
    sel.test.auroc = t.at("auroc").get<double>();
    sel.test.auprc = t.at("auprc").get<double>();
    sel.test.log_loss = t.at("log_loss").get<double>();
    sel.test.prevalence = t.at("prevalence").get<double>();
    sel.test.n_samples = t.at("n_samples").get<std::size_t>();
    result.selected.push_back(sel);
  }
  return result;
}

std::string render_table_markdown(const ExperimentResult& result) {
  std::ostringstream os;
  os << "| # HU | Model | Input Struct | LL | AUPRC | AUROC |\n";
  os << "| ---: | :--- | :--- | ---: | ---: | ---: |\n";
  for (std::size_t i = 0; i < result.grid.size(); ++i) {
    const TrialConfig& c = result.grid[i];
    os << "| " << c.hidden_units << " | " << (c.model == ModelKind::kMlp ? "MLP" : "RNN")
       << " | " << struct_column(c) << " | ";
    if (i < result.selected.size() && result.selected[i]) {
      const TestMetrics& t = result.selected[i]->test;
      os << fixed6(t.log_loss) << " | " << fixed6(t.auprc) << " | " << fixed6(t.auroc);
    } else {
      os << "- | - | -";
    }
    os << " |\n";
  }
  return os.str();
}

std::string render_table_csv(const ExperimentResult& result) {
  std::ostringstream os;
  os << "# HU,Model,Input Struct,LL,AUPRC,AUROC\n";
  for (std::size_t i = 0; i < result.grid.size(); ++i) {
    const TrialConfig& c = result.grid[i];
    os << c.hidden_units << ',' << (c.model == ModelKind::kMlp ? "MLP" : "RNN") << ','
       << struct_column(c) << ',';
    if (i < result.selected.size() && result.selected[i]) {
      const TestMetrics& t = result.selected[i]->test;
      os << fixed6(t.log_loss) << ',' << fixed6(t.auprc) << ',' << fixed6(t.auroc);
    } else {
      os << ",,";
    }
    os << '\n';
  }
  return os.str();
}

std::string render_quantiles_csv(const ExperimentResult& result) {
  std::ostringstream os;
  os << "config,hidden_units,metric,min,q1,median,q3,max,n_diverged\n";
  for (std::size_t i = 0; i < result.grid.size(); ++i) {
    const TrialConfig& c = result.grid[i];
    const std::vector<TrialResult>& trials = result.trials[i];
    std::size_t n_diverged = 0;
    std::vector<double> auroc, auprc, ll;
    for (const TrialResult& r : trials) {
      if (r.diverged) {
        ++n_diverged;
        continue;
      }
      const EpochMetrics& m = selection_metrics(r);
      auroc.push_back(m.auroc);
      auprc.push_back(m.auprc);
      ll.push_back(m.log_loss);
    }
    auto row = [&](const char* name, const std::vector<double>& xs) {
      os << config_display_name(c) << ',' << c.hidden_units << ',' << name << ',';
      if (xs.empty()) {
        os << ",,,,";
      } else {
        os << fixed6(quantile(xs, 0.0)) << ',' << fixed6(quantile(xs, 0.25)) << ','
           << fixed6(quantile(xs, 0.5)) << ',' << fixed6(quantile(xs, 0.75)) << ','
           << fixed6(quantile(xs, 1.0));
      }
      os << ',' << n_diverged << '\n';
    };
    row("auroc", auroc);
    row("auprc", auprc);
    row("log_loss", ll);
  }
  return os.str();
}

std::string manifest_json(const RunManifest& manifest) {
  json j;
  j["format"] = "nestseq-manifest";
  j["version"] = 1;
  j["tool_version"] = kToolVersion;
  j["command"] = manifest.command;
  j["base_seed"] = manifest.base_seed;
  j["n_trials"] = manifest.n_trials;
  j["cohort_provenance"] = manifest.cohort_provenance;
  json details = json::object();
  for (const auto& [k, v] : manifest.details) details[k] = v;
  j["details"] = details;
  return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace nestseq
