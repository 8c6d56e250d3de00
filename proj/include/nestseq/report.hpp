#pragma once

// Serialization and rendering of experiment results: JSON dumps, the
// results table, and per-config spread summaries of validation metrics.
//
// Serialized experiments carry configs, seeds, per-epoch metrics, selection
// and test results. Trained weights are not included (save_params covers
// those) and neither are wall-clock times, so a rerun of a seeded experiment
// writes byte-identical files.

#include <cstdint>
#include <string>
#include <vector>

#include "nestseq/training.hpp"

namespace nestseq {

inline constexpr const char* kToolVersion = "0.1.0";

/// Linear-interpolation quantile over the sorted values: with n points and
/// h = (n - 1) * p, the result is x[floor(h)] + frac(h) * (x[floor(h)+1] -
/// x[floor(h)]). p must lie in [0, 1] and values must be nonempty.
double quantile(std::vector<double> values, double p);

std::string trial_result_to_json(const TrialResult& result);
TrialResult trial_result_from_json(const std::string& text);

std::string experiment_to_json(const ExperimentResult& result);
/// Inverse of experiment_to_json except for final_params, which are not
/// serialized and come back absent.
ExperimentResult experiment_from_json(const std::string& text);

/// One row per grid entry with the selected model's test metrics.
/// Columns: # HU | Model | Input Struct | LL | AUPRC | AUROC, metrics with
/// six decimal places. Configs whose trials all diverged render as "-".
std::string render_table_markdown(const ExperimentResult& result);
std::string render_table_csv(const ExperimentResult& result);

/// Spread of each config's final validation metrics across trials: one row
/// per (config, metric) with min, q1, median, q3, max over the non-diverged
/// trials, plus the diverged count.
std::string render_quantiles_csv(const ExperimentResult& result);

struct RunManifest {
  std::string command;
  std::uint64_t base_seed = 0;
  std::size_t n_trials = 0;
  std::string cohort_provenance;
  std::vector<std::pair<std::string, std::string>> details;  // extra key/value pairs
};

/// Reproducibility record written next to every output artifact. Contains
/// the tool version, the command, seeds, and cohort provenance; nothing
/// time- or host-dependent.
std::string manifest_json(const RunManifest& manifest);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace nestseq
