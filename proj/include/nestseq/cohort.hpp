// Nested clinical records: patients -> hospitalizations -> sCr measurements,
// plus ingestion, forward fill, and the configurable AKI trajectory labeler.
//
// A hospitalization's `label` is the prediction target: whether AKI occurred
// in the hospitalization directly following it. Labels either arrive already
// shifted (JSONL) or are derived by shifting per-hospitalization AKI flags
// (CSV `aki_this_hosp` column, or the trajectory labeler).

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nestseq/numerics.hpp"

namespace nestseq {

struct Measurement {
  std::optional<double> value;      // sCr in mg/dL, > 0 when present
  std::optional<double> timestamp;  // epoch seconds; ordering only, models ignore it
};

struct Hospitalization {
  std::vector<Measurement> measurements;  // length tau >= 1
  std::optional<bool> label;              // AKI in the NEXT hospitalization
  std::optional<bool> aki_this_hosp;      // raw ingested/generated flag, kept for round-trips
};

struct Patient {
  std::string id;
  std::vector<Hospitalization> hospitalizations;  // length A >= 1
};

struct Cohort {
  std::vector<Patient> patients;
  std::string provenance;
};

enum class CohortFormat { kCsv, kJsonl };

/// Diagnostic thresholds for the trajectory labeler. The defaults follow
/// the KDIGO-style guideline values (0.3 mg/dL rise within 48h, or 1.5x
/// within 7 days); they are configuration, not a fixed rule.
struct AkiCriteria {
  double absolute_rise = 0.3;      // mg/dL
  double absolute_window = 48.0;   // hours
  double relative_rise = 1.5;      // ratio
  double relative_window = 168.0;  // hours
};

struct CohortStats {
  std::size_t n_measurements = 0;
  std::size_t n_patients = 0;
  std::size_t n_hospitalizations = 0;
  std::size_t n_labeled = 0;
  std::size_t n_positive = 0;
  double prevalence = 0.0;  // n_positive / n_labeled; NaN when nothing is labeled
  double mean_hosp_per_patient = 0.0;
  double sd_hosp_per_patient = 0.0;
  double mean_meas_per_hosp = 0.0;
  double sd_meas_per_hosp = 0.0;
};

/// Load a cohort file. CSV rows must be grouped by patient and sorted by
/// (hosp_index, meas_index); JSONL carries one patient object per line.
/// Malformed input is rejected with the offending line in the message.
Cohort ingest(const std::string& path, CohortFormat format);
Cohort ingest_csv(const std::string& path);
Cohort ingest_jsonl(const std::string& path);

void write_cohort(const Cohort& cohort, const std::string& path, CohortFormat format);
void write_csv(const Cohort& cohort, const std::string& path);
void write_jsonl(const Cohort& cohort, const std::string& path);

struct FillResult {
  Hospitalization hospitalization;
  std::size_t dropped_leading = 0;  // leading MISSING measurements removed
};

/// Replace each MISSING value with the nearest preceding present value.
/// Leading MISSING entries have no predecessor and are dropped (counted in
/// `dropped_leading`); a hospitalization that would become empty is rejected.
FillResult forward_fill(const Hospitalization& hosp);

struct CohortFillResult {
  Cohort cohort;
  std::size_t dropped_leading = 0;
};

CohortFillResult forward_fill_cohort(const Cohort& cohort);

/// True iff some pair of measurements i < j shows a rise meeting the
/// absolute criterion (value_j - value_i >= absolute_rise within
/// absolute_window hours) or the relative one (value_j / value_i >=
/// relative_rise within relative_window hours). Requires timestamps and
/// filled values on every measurement.
bool label_aki(const Hospitalization& hosp, const AkiCriteria& criteria);

/// Shift per-hospitalization AKI flags into next-visit labels:
/// label[a] = aki[a+1]; the final hospitalization stays unlabeled.
Patient attach_next_visit_labels(const Patient& patient, const std::vector<bool>& per_hosp_aki);

CohortStats cohort_stats(const Cohort& cohort);

}  // namespace nestseq
