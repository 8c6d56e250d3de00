#include "nestseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nestseq {

namespace {

constexpr double kEpoch2023 = 1672531200.0;  // 2023-01-01T00:00:00Z
constexpr double kDay = 86400.0;

void validate(const GeneratorConfig& c) {
  auto bad = [](const std::string& what) {
    throw std::invalid_argument("GeneratorConfig: " + what);
  };
  if (c.n_patients == 0) bad("n_patients must be >= 1");
  if (!(c.target_prevalence > 0.0 && c.target_prevalence < 1.0)) {
    bad("target_prevalence must lie in (0, 1)");
  }
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) bad("missing_rate must lie in [0, 1)");
  if (!(c.elevation_prob >= 0.0 && c.elevation_prob <= 1.0)) {
    bad("elevation_prob must lie in [0, 1]");
  }
  if (!(c.elevation_scale >= 0.0)) bad("elevation_scale must be >= 0");
  if (!(c.baseline_log_sd >= 0.0)) bad("baseline_log_sd must be >= 0");
  if (!(c.within_noise_sd >= 0.0)) bad("within_noise_sd must be >= 0");
  if (!std::isfinite(c.signal_strength)) bad("signal_strength must be finite");
}

std::string patient_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05zu", index);
  return buf;
}

double round_lab(double scr) { return std::max(0.1, std::round(scr * 100.0) / 100.0); }

}  // namespace

std::size_t shifted_negbin(SeededRng& rng, double mean, double sd) {
  const double m = mean - 1.0;
  const double v = sd * sd;
  if (!(m > 0.0)) throw std::invalid_argument("shifted_negbin: mean must exceed 1");
  if (!(v > m)) {
    throw std::invalid_argument(
        "shifted_negbin: variance must exceed mean - 1 (the mixture is overdispersed)");
  }
  const double shape = m * m / (v - m);
  const double scale = (v - m) / m;
  const double lambda = rng.gamma(shape) * scale;
  return 1 + static_cast<std::size_t>(rng.poisson(lambda));
}

double calibrate_prevalence(const std::vector<double>& signal_terms, double target) {
  if (signal_terms.empty()) {
    throw std::invalid_argument("calibrate_prevalence: no signal terms");
  }
  if (!(target > 0.0 && target < 1.0)) {
    throw std::invalid_argument("calibrate_prevalence: target must lie in (0, 1)");
  }
  bool all_zero = true;
  for (double t : signal_terms) {
    if (!std::isfinite(t)) throw std::invalid_argument("calibrate_prevalence: non-finite term");
    if (t != 0.0) all_zero = false;
  }
  if (all_zero) return std::log(target / (1.0 - target));

  auto mean_prob = [&](double alpha) {
    double s = 0.0;
    for (double t : signal_terms) s += sigmoid(alpha + t);
    return s / static_cast<double>(signal_terms.size());
  };
  double lo = -40.0, hi = 40.0;
  if (mean_prob(lo) > target || mean_prob(hi) < target) {
    std::ostringstream os;
    os << "calibrate_prevalence: target " << target << " unreachable; achievable range is ["
       << mean_prob(lo) << ", " << mean_prob(hi) << "]";
    throw std::runtime_error(os.str());
  }
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Cohort generate_cohort(const GeneratorConfig& config) {
  validate(config);
  SeededRng rng(config.seed);

  struct Draft {
    std::vector<std::vector<Measurement>> hosps;
    std::vector<double> sums;
  };
  std::vector<Draft> drafts(config.n_patients);

  for (Draft& d : drafts) {
    const std::size_t n_hosp = shifted_negbin(rng, config.hosp_count_mean, config.hosp_count_sd);
    const double baseline =
        std::exp(rng.normal(config.baseline_log_mean, config.baseline_log_sd));
    double admit = kEpoch2023 + rng.uniform01() * 365.0 * kDay;

    for (std::size_t a = 0; a < n_hosp; ++a) {
      const std::size_t n_meas =
          shifted_negbin(rng, config.meas_count_mean, config.meas_count_sd);
      const bool elevated = rng.uniform01() < config.elevation_prob;
      const double amp = elevated ? config.elevation_scale * std::abs(rng.normal(0.0, 1.0)) : 0.0;

      std::vector<Measurement> ms;
      double sum = 0.0;
      double last_ts = admit;
      for (std::size_t k = 0; k < n_meas; ++k) {
        const double bump = amp * std::sin(std::numbers::pi * static_cast<double>(k + 1) /
                                           static_cast<double>(n_meas + 1));
        const double noise = rng.normal(0.0, config.within_noise_sd);
        const double value = round_lab(baseline * (1.0 + bump) * std::exp(noise));
        // Roughly daily draws; the jitter stays below the daily spacing so
        // timestamps are strictly increasing.
        last_ts = admit + static_cast<double>(k) * kDay + rng.uniform01() * 0.25 * kDay;
        ms.push_back(Measurement{value, last_ts});
        sum += value;
      }
      d.hosps.push_back(std::move(ms));
      d.sums.push_back(sum);
      admit = last_ts + (30.0 + 300.0 * rng.uniform01()) * kDay;
    }
  }

  // Z-score the sums of non-final hospitalizations; those are the ones whose
  // aggregate drives the next hospitalization's AKI flag.
  std::vector<double> prior_sums;
  for (const Draft& d : drafts) {
    for (std::size_t a = 0; a + 1 < d.sums.size(); ++a) prior_sums.push_back(d.sums[a]);
  }
  double alpha;
  double z_mean = 0.0, z_sd = 1.0;
  if (prior_sums.empty()) {
    alpha = std::log(config.target_prevalence / (1.0 - config.target_prevalence));
  } else {
    if (prior_sums.size() < 2) {
      throw std::runtime_error(
          "generate_cohort: calibration needs at least 2 repeat hospitalizations; "
          "increase n_patients");
    }
    double s = 0.0;
    for (double x : prior_sums) s += x;
    z_mean = s / static_cast<double>(prior_sums.size());
    double ss = 0.0;
    for (double x : prior_sums) ss += (x - z_mean) * (x - z_mean);
    z_sd = std::sqrt(ss / static_cast<double>(prior_sums.size() - 1));
    std::vector<double> terms;
    terms.reserve(prior_sums.size());
    for (double x : prior_sums) {
      terms.push_back(z_sd > 0.0 ? config.signal_strength * (x - z_mean) / z_sd : 0.0);
    }
    alpha = calibrate_prevalence(terms, config.target_prevalence);
  }

  Cohort cohort;
  {
    std::ostringstream os;
    os << "synthetic n_patients=" << config.n_patients << " seed=" << config.seed;
    cohort.provenance = os.str();
  }
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    Draft& d = drafts[i];
    Patient p;
    p.id = patient_id(i);
    std::vector<bool> aki;
    for (std::size_t a = 0; a < d.hosps.size(); ++a) {
      double logit = alpha;
      if (a > 0 && z_sd > 0.0) {
        logit += config.signal_strength * (d.sums[a - 1] - z_mean) / z_sd;
      }
      aki.push_back(rng.uniform01() < sigmoid(logit));
      Hospitalization h;
      h.measurements = std::move(d.hosps[a]);
      p.hospitalizations.push_back(std::move(h));
    }
    cohort.patients.push_back(attach_next_visit_labels(p, aki));
  }

  if (config.missing_rate > 0.0) {
    for (Patient& p : cohort.patients) {
      for (Hospitalization& h : p.hospitalizations) {
        for (std::size_t k = 1; k < h.measurements.size(); ++k) {
          if (rng.uniform01() < config.missing_rate) h.measurements[k].value.reset();
        }
      }
    }
  }
  return cohort;
}

}  // namespace nestseq
