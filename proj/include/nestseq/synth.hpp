#pragma once

// Synthetic cohort generator. Produces creatinine trajectories whose
// per-hospitalization sums carry a tunable logistic signal for the AKI flag
// of the following hospitalization, so models that read a hospitalization's
// aggregate can recover the risk while signal_strength = 0 yields labels that
// are pure coin flips.

#include <cstdint>
#include <vector>

#include "nestseq/cohort.hpp"
#include "nestseq/numerics.hpp"

namespace nestseq {

struct GeneratorConfig {
  std::size_t n_patients = 2000;

  // Hospitalization and measurement counts are 1 + negative binomial, so the
  // supports start at 1 while the mean and sd match the targets below.
  double hosp_count_mean = 2.1;
  double hosp_count_sd = 2.4;
  double meas_count_mean = 5.1;
  double meas_count_sd = 9.9;

  // Baseline creatinine is lognormal (median ~0.9 mg/dL); each measurement
  // multiplies it by exp(noise), and some hospitalizations get a transient
  // elevation peaking mid-stay.
  double baseline_log_mean = -0.10536051565782630;  // log(0.9)
  double baseline_log_sd = 0.25;
  double within_noise_sd = 0.15;
  double elevation_prob = 0.3;
  double elevation_scale = 0.8;

  // AKI flag of hospitalization a+1 ~ Bernoulli(sigmoid(alpha + signal_strength * z_a))
  // where z_a is the z-scored sum of hospitalization a's creatinine values and
  // alpha is calibrated so the mean probability hits target_prevalence.
  // The first hospitalization of each patient draws at sigmoid(alpha).
  double signal_strength = 2.0;
  double target_prevalence = 0.157;

  // Fraction of measurements whose value is blanked out. The first measurement
  // of a hospitalization is never blanked, so forward filling always succeeds.
  double missing_rate = 0.05;

  std::uint64_t seed = 0;
};

// Deterministic in the config; labels are attached (label of hospitalization a
// is the AKI flag of hospitalization a+1, final ones unlabeled).
Cohort generate_cohort(const GeneratorConfig& config);

// Count with support {1, 2, ...} whose mean and sd match the arguments,
// sampled as 1 + a gamma-Poisson mixture. Requires sd^2 > mean - 1 > 0.
std::size_t shifted_negbin(SeededRng& rng, double mean, double sd);

// Solves mean_i sigmoid(alpha + signal_terms[i]) = target for alpha by
// bisection. When every signal term is zero the closed form logit(target)
// is returned exactly.
double calibrate_prevalence(const std::vector<double>& signal_terms, double target);

}  // namespace nestseq
