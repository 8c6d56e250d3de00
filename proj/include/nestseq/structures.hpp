// Turn labeled patients into model-ready samples.
//
// Three input structures: MARKOV keeps each labeled hospitalization's own
// measurements, CONCAT prepends all earlier measurements from the same
// patient, NEST keeps the per-hospitalization grouping as one nested
// sequence per patient. MLPs consume a SUM/MEAN/MAX aggregate instead of
// the raw sequence.
//
// Builders require forward-filled input; a MISSING value is an error here.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nestseq/cohort.hpp"

namespace nestseq {

enum class InputStructure { kMarkov, kConcat, kNest };
enum class Aggregation { kSum, kMean, kMax };

std::string to_string(InputStructure s);
std::string to_string(Aggregation a);
InputStructure input_structure_from_string(const std::string& s);
Aggregation aggregation_from_string(const std::string& s);

struct SequenceSample {
  std::vector<double> features;  // nonempty sCr values
  bool label = false;
  std::string patient_id;
  std::size_t hosp_index = 0;
};

/// One nested sequence per patient. Groups run from the first
/// hospitalization through the last labeled one; `labeled_groups` lists
/// which group indices carry a label, aligned with `labels`.
struct NestedSample {
  std::vector<std::vector<double>> feature_groups;
  std::vector<bool> labels;
  std::vector<std::size_t> labeled_groups;
  std::string patient_id;
};

struct AggregatedSample {
  double feature = 0.0;
  bool label = false;
  std::string patient_id;
  std::size_t hosp_index = 0;
};

/// One sample per labeled hospitalization, features from that
/// hospitalization alone. Patients without labels yield an empty list.
std::vector<SequenceSample> build_markov(const Patient& patient);

/// One sample per labeled hospitalization a, features concatenated from
/// hospitalizations 1..a in order.
std::vector<SequenceSample> build_concat(const Patient& patient);

/// The patient's nested sequence, or nullopt when nothing is labeled.
std::optional<NestedSample> build_nest(const Patient& patient);

AggregatedSample aggregate(const SequenceSample& sample, Aggregation how);

// Cohort-level conveniences used by training and evaluation.
std::vector<SequenceSample> build_sequence_samples(const Cohort& cohort, InputStructure structure);
std::vector<NestedSample> build_nested_samples(const Cohort& cohort);
std::vector<AggregatedSample> build_aggregated_samples(const Cohort& cohort,
                                                       InputStructure structure, Aggregation how);

}  // namespace nestseq
