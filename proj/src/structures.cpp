#include "nestseq/structures.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace nestseq {

namespace {

double present_value(const Measurement& m, const std::string& patient_id) {
  if (!m.value) {
    throw std::invalid_argument("structures: patient '" + patient_id +
                                "' has a MISSING measurement; run forward_fill first");
  }
  return *m.value;
}

void append_values(std::vector<double>& out, const Hospitalization& h, const std::string& id) {
  for (const Measurement& m : h.measurements) out.push_back(present_value(m, id));
}

}  // namespace

std::string to_string(InputStructure s) {
  switch (s) {
    case InputStructure::kMarkov: return "MARKOV";
    case InputStructure::kConcat: return "CONCAT";
    case InputStructure::kNest: return "NEST";
  }
  throw std::logic_error("unknown InputStructure");
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kSum: return "SUM";
    case Aggregation::kMean: return "MEAN";
    case Aggregation::kMax: return "MAX";
  }
  throw std::logic_error("unknown Aggregation");
}

InputStructure input_structure_from_string(const std::string& s) {
  if (s == "MARKOV") return InputStructure::kMarkov;
  if (s == "CONCAT") return InputStructure::kConcat;
  if (s == "NEST") return InputStructure::kNest;
  throw std::invalid_argument("unknown input structure '" + s + "' (MARKOV, CONCAT, or NEST)");
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "SUM") return Aggregation::kSum;
  if (s == "MEAN") return Aggregation::kMean;
  if (s == "MAX") return Aggregation::kMax;
  throw std::invalid_argument("unknown aggregation '" + s + "' (SUM, MEAN, or MAX)");
}

std::vector<SequenceSample> build_markov(const Patient& patient) {
  std::vector<SequenceSample> out;
  for (std::size_t a = 0; a < patient.hospitalizations.size(); ++a) {
    const Hospitalization& h = patient.hospitalizations[a];
    if (!h.label) continue;
    SequenceSample s;
    s.patient_id = patient.id;
    s.hosp_index = a;
    s.label = *h.label;
    append_values(s.features, h, patient.id);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SequenceSample> build_concat(const Patient& patient) {
  std::vector<SequenceSample> out;
  std::vector<double> prefix;
  for (std::size_t a = 0; a < patient.hospitalizations.size(); ++a) {
    const Hospitalization& h = patient.hospitalizations[a];
    append_values(prefix, h, patient.id);
    if (!h.label) continue;
    SequenceSample s;
    s.patient_id = patient.id;
    s.hosp_index = a;
    s.label = *h.label;
    s.features = prefix;
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<NestedSample> build_nest(const Patient& patient) {
  std::size_t last_labeled = 0;
  bool any = false;
  for (std::size_t a = 0; a < patient.hospitalizations.size(); ++a) {
    if (patient.hospitalizations[a].label) {
      last_labeled = a;
      any = true;
    }
  }
  if (!any) return std::nullopt;

  // Groups stop at the last labeled hospitalization, so the flattened
  // sequence has exactly the length of the longest CONCAT sample.
  NestedSample ns;
  ns.patient_id = patient.id;
  for (std::size_t a = 0; a <= last_labeled; ++a) {
    const Hospitalization& h = patient.hospitalizations[a];
    std::vector<double> group;
    append_values(group, h, patient.id);
    ns.feature_groups.push_back(std::move(group));
    if (h.label) {
      ns.labeled_groups.push_back(a);
      ns.labels.push_back(*h.label);
    }
  }
  return ns;
}

AggregatedSample aggregate(const SequenceSample& sample, Aggregation how) {
  if (sample.features.empty()) {
    throw std::invalid_argument("aggregate: empty feature list");
  }
  AggregatedSample out;
  out.label = sample.label;
  out.patient_id = sample.patient_id;
  out.hosp_index = sample.hosp_index;
  switch (how) {
    case Aggregation::kSum:
      out.feature = std::accumulate(sample.features.begin(), sample.features.end(), 0.0);
      break;
    case Aggregation::kMean:
      out.feature = std::accumulate(sample.features.begin(), sample.features.end(), 0.0) /
                    static_cast<double>(sample.features.size());
      break;
    case Aggregation::kMax:
      out.feature = *std::max_element(sample.features.begin(), sample.features.end());
      break;
  }
  return out;
}

std::vector<SequenceSample> build_sequence_samples(const Cohort& cohort, InputStructure structure) {
  if (structure == InputStructure::kNest) {
    throw std::invalid_argument("build_sequence_samples: NEST yields nested samples, not flat ones");
  }
  std::vector<SequenceSample> out;
  for (const Patient& p : cohort.patients) {
    std::vector<SequenceSample> samples =
        structure == InputStructure::kMarkov ? build_markov(p) : build_concat(p);
    out.insert(out.end(), std::make_move_iterator(samples.begin()),
               std::make_move_iterator(samples.end()));
  }
  return out;
}

std::vector<NestedSample> build_nested_samples(const Cohort& cohort) {
  std::vector<NestedSample> out;
  for (const Patient& p : cohort.patients) {
    if (std::optional<NestedSample> ns = build_nest(p)) out.push_back(std::move(*ns));
  }
  return out;
}

std::vector<AggregatedSample> build_aggregated_samples(const Cohort& cohort,
                                                       InputStructure structure, Aggregation how) {
  std::vector<AggregatedSample> out;
  for (const SequenceSample& s : build_sequence_samples(cohort, structure)) {
    out.push_back(aggregate(s, how));
  }
  return out;
}

}  // namespace nestseq
