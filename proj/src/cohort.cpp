#include "nestseq/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace nestseq {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

[[noreturn]] void fail_line(const std::string& path, std::size_t line, const std::string& msg) {
  std::ostringstream os;
  os << path << ":" << line << ": " << msg;
  throw std::runtime_error(os.str());
}

std::vector<std::string> split_csv(const std::string& line) {
  // Plain comma split; the schema has no quoted fields.
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

bool parse_index(const std::string& s, long* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || v < 0) return false;
  *out = v;
  return true;
}

// Days since 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's
// days_from_civil), so timestamp parsing does not depend on the host tz.
long long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const long long yoe = y - era * 400;
  const long long doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const long long doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + doe - 719468;
}

// Accepts epoch seconds (any float) or ISO-8601 "YYYY-MM-DD[T ]HH:MM:SS[Z]".
bool parse_timestamp(const std::string& s, double* out) {
  if (parse_double(s, out)) return true;
  int y, mo, d, h, mi, se;
  char sep;
  char tail[2] = {0, 0};
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%1s", &y, &mo, &d, &sep, &h, &mi,
                            &se, tail);
  if (n < 7 || (sep != 'T' && sep != ' ')) return false;
  if (n == 8 && tail[0] != 'Z') return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) return false;
  *out = static_cast<double>(days_from_civil(y, mo, d)) * 86400.0 + h * 3600.0 + mi * 60.0 + se;
  return true;
}

struct CsvRow {
  std::size_t line = 0;
  std::string patient_id;
  long hosp_index = 0;
  long meas_index = 0;
  Measurement meas;
  std::optional<bool> aki;
};

void validate_patient(const Patient& p, const std::string& where) {
  if (p.hospitalizations.empty()) fail(where + ": patient '" + p.id + "' has no hospitalizations");
  for (std::size_t a = 0; a < p.hospitalizations.size(); ++a) {
    const Hospitalization& h = p.hospitalizations[a];
    if (h.measurements.empty()) {
      fail(where + ": patient '" + p.id + "' hospitalization " + std::to_string(a) +
           " has no measurements");
    }
    std::optional<double> prev_ts;
    for (const Measurement& m : h.measurements) {
      if (m.value && !(*m.value > 0.0)) {
        fail(where + ": patient '" + p.id + "' has a nonpositive sCr value");
      }
      if (m.timestamp) {
        if (prev_ts && *m.timestamp < *prev_ts) {
          fail(where + ": patient '" + p.id + "' hospitalization " + std::to_string(a) +
               " has decreasing timestamps");
        }
        prev_ts = m.timestamp;
      }
    }
  }
}

Patient assemble_patient(const std::string& path, std::vector<CsvRow>& rows, bool aki_column) {
  Patient p;
  p.id = rows.front().patient_id;
  long expect_hosp = 0;
  long expect_meas = 0;
  std::vector<std::optional<bool>> aki_flags;
  for (const CsvRow& row : rows) {
    if (row.hosp_index == expect_hosp + 1 && row.meas_index == 0) {
      ++expect_hosp;
      expect_meas = 0;
    }
    if (row.hosp_index != expect_hosp || row.meas_index != expect_meas) {
      if (row.hosp_index < expect_hosp ||
          (row.hosp_index == expect_hosp && row.meas_index < expect_meas)) {
        fail_line(path, row.line,
                  "duplicate or out-of-order (hosp_index, meas_index) for patient '" + p.id + "'");
      }
      fail_line(path, row.line,
                "non-contiguous indices for patient '" + p.id + "': expected hosp " +
                    std::to_string(expect_hosp) + " meas " + std::to_string(expect_meas));
    }
    if (row.meas_index == 0) {
      p.hospitalizations.emplace_back();
      aki_flags.push_back(row.aki);
    } else if (aki_column && row.aki != aki_flags.back()) {
      fail_line(path, row.line, "aki_this_hosp differs within one hospitalization");
    }
    p.hospitalizations.back().measurements.push_back(row.meas);
    ++expect_meas;
  }
  // An aki flag on any hospitalization requires flags on all of them,
  // otherwise the shifted labels would be ambiguous.
  const bool any_flag =
      std::any_of(aki_flags.begin(), aki_flags.end(), [](const auto& f) { return f.has_value(); });
  if (any_flag) {
    std::vector<bool> flags;
    for (std::size_t a = 0; a < aki_flags.size(); ++a) {
      if (!aki_flags[a]) {
        fail(path + ": patient '" + p.id + "' has aki_this_hosp on some hospitalizations only");
      }
      flags.push_back(*aki_flags[a]);
    }
    p = attach_next_visit_labels(p, flags);
  }
  return p;
}

double sample_sd(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Cohort ingest(const std::string& path, CohortFormat format) {
  return format == CohortFormat::kCsv ? ingest_csv(path) : ingest_jsonl(path);
}

Cohort ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(path + ": empty file, expected a header row");

  const std::vector<std::string> header = split_csv(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"patient_id", "hosp_index", "meas_index", "scr_mg_dl"}) {
    if (!col.count(required)) fail(path + ": header is missing column '" + required + "'");
  }
  const bool has_ts = col.count("timestamp") > 0;
  const bool has_aki = col.count("aki_this_hosp") > 0;

  Cohort cohort;
  cohort.provenance = path;
  std::unordered_set<std::string> seen_ids;
  std::vector<CsvRow> current;
  std::size_t line_no = 1;

  auto flush = [&] {
    if (current.empty()) return;
    cohort.patients.push_back(assemble_patient(path, current, has_aki));
    current.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != header.size()) {
      fail_line(path, line_no,
                "expected " + std::to_string(header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    }
    CsvRow row;
    row.line = line_no;
    row.patient_id = fields[col["patient_id"]];
    if (row.patient_id.empty()) fail_line(path, line_no, "empty patient_id");
    if (!parse_index(fields[col["hosp_index"]], &row.hosp_index)) {
      fail_line(path, line_no, "bad hosp_index '" + fields[col["hosp_index"]] + "'");
    }
    if (!parse_index(fields[col["meas_index"]], &row.meas_index)) {
      fail_line(path, line_no, "bad meas_index '" + fields[col["meas_index"]] + "'");
    }
    const std::string& scr = fields[col["scr_mg_dl"]];
    if (!scr.empty()) {
      double v;
      if (!parse_double(scr, &v)) fail_line(path, line_no, "bad scr_mg_dl '" + scr + "'");
      if (!(v > 0.0)) fail_line(path, line_no, "nonpositive scr_mg_dl " + scr);
      if (!std::isfinite(v)) fail_line(path, line_no, "non-finite scr_mg_dl");
      row.meas.value = v;
    }
    if (has_ts) {
      const std::string& ts = fields[col["timestamp"]];
      if (!ts.empty()) {
        double t;
        if (!parse_timestamp(ts, &t)) fail_line(path, line_no, "bad timestamp '" + ts + "'");
        row.meas.timestamp = t;
      }
    }
    if (has_aki) {
      const std::string& aki = fields[col["aki_this_hosp"]];
      if (aki == "0") {
        row.aki = false;
      } else if (aki == "1") {
        row.aki = true;
      } else if (!aki.empty()) {
        fail_line(path, line_no, "aki_this_hosp must be 0, 1, or empty, got '" + aki + "'");
      }
    }

    if (!current.empty() && current.front().patient_id != row.patient_id) {
      if (seen_ids.count(row.patient_id)) {
        fail_line(path, line_no,
                  "rows for patient '" + row.patient_id +
                      "' are interleaved with another patient; rows must be grouped by patient");
      }
      flush();
    }
    if (current.empty()) {
      if (!seen_ids.insert(row.patient_id).second) {
        fail_line(path, line_no,
                  "rows for patient '" + row.patient_id +
                      "' are interleaved with another patient; rows must be grouped by patient");
      }
      if (row.hosp_index != 0 || row.meas_index != 0) {
        fail_line(path, line_no, "patient '" + row.patient_id + "' must start at indices (0, 0)");
      }
    }
    current.push_back(row);
  }
  flush();
  if (cohort.patients.empty()) fail(path + ": no data rows");
  for (const Patient& p : cohort.patients) validate_patient(p, path);
  return cohort;
}

Cohort ingest_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  Cohort cohort;
  cohort.provenance = path;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      fail_line(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("hospitalizations")) {
      fail_line(path, line_no, "patient object needs 'id' and 'hospitalizations'");
    }
    Patient p;
    p.id = obj.at("id").get<std::string>();
    if (!seen_ids.insert(p.id).second) {
      fail_line(path, line_no, "duplicate patient id '" + p.id + "'");
    }
    for (const json& hj : obj.at("hospitalizations")) {
      Hospitalization h;
      for (const json& mj : hj.at("measurements")) {
        Measurement m;
        if (mj.contains("value") && !mj.at("value").is_null()) {
          m.value = mj.at("value").get<double>();
        }
        if (mj.contains("timestamp") && !mj.at("timestamp").is_null()) {
          m.timestamp = mj.at("timestamp").get<double>();
        }
        h.measurements.push_back(m);
      }
      if (hj.contains("label") && !hj.at("label").is_null()) {
        h.label = hj.at("label").get<bool>();
      }
      if (hj.contains("aki_this_hosp") && !hj.at("aki_this_hosp").is_null()) {
        h.aki_this_hosp = hj.at("aki_this_hosp").get<bool>();
      }
      p.hospitalizations.push_back(std::move(h));
    }
    validate_patient(p, path + ":" + std::to_string(line_no));
    cohort.patients.push_back(std::move(p));
  }
  if (cohort.patients.empty()) fail(path + ": no patient lines");
  return cohort;
}

void write_cohort(const Cohort& cohort, const std::string& path, CohortFormat format) {
  if (format == CohortFormat::kCsv) {
    write_csv(cohort, path);
  } else {
    write_jsonl(cohort, path);
  }
}

void write_csv(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write '" + path + "'");
  out << "patient_id,hosp_index,meas_index,scr_mg_dl,timestamp,aki_this_hosp\n";
  for (const Patient& p : cohort.patients) {
    for (std::size_t a = 0; a < p.hospitalizations.size(); ++a) {
      const Hospitalization& h = p.hospitalizations[a];
      for (std::size_t t = 0; t < h.measurements.size(); ++t) {
        const Measurement& m = h.measurements[t];
        out << p.id << ',' << a << ',' << t << ',';
        if (m.value) out << format_double(*m.value);
        out << ',';
        if (m.timestamp) out << format_double(*m.timestamp);
        out << ',';
        if (h.aki_this_hosp) out << (*h.aki_this_hosp ? '1' : '0');
        out << '\n';
      }
    }
  }
  if (!out) fail("write to '" + path + "' failed");
}

void write_jsonl(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write '" + path + "'");
  for (const Patient& p : cohort.patients) {
    json pj;
    pj["id"] = p.id;
    pj["hospitalizations"] = json::array();
    for (const Hospitalization& h : p.hospitalizations) {
      json hj;
      hj["measurements"] = json::array();
      for (const Measurement& m : h.measurements) {
        json mj;
        mj["value"] = m.value ? json(*m.value) : json(nullptr);
        if (m.timestamp) mj["timestamp"] = *m.timestamp;
        hj["measurements"].push_back(mj);
      }
      if (h.label) hj["label"] = *h.label;
      if (h.aki_this_hosp) hj["aki_this_hosp"] = *h.aki_this_hosp;
      pj["hospitalizations"].push_back(hj);
    }
    out << pj.dump() << '\n';
  }
  if (!out) fail("write to '" + path + "' failed");
}

FillResult forward_fill(const Hospitalization& hosp) {
  FillResult res;
  res.hospitalization.label = hosp.label;
  res.hospitalization.aki_this_hosp = hosp.aki_this_hosp;
  std::optional<double> last;
  for (const Measurement& m : hosp.measurements) {
    if (m.value) {
      last = m.value;
      res.hospitalization.measurements.push_back(m);
    } else if (last) {
      Measurement filled = m;
      filled.value = last;
      res.hospitalization.measurements.push_back(filled);
    } else {
      // No predecessor to carry forward; back-filling would leak future
      // information, so the measurement is dropped.
      ++res.dropped_leading;
    }
  }
  if (res.hospitalization.measurements.empty()) {
    fail("forward_fill: hospitalization has no present values at all");
  }
  return res;
}

CohortFillResult forward_fill_cohort(const Cohort& cohort) {
  CohortFillResult res;
  res.cohort.provenance = cohort.provenance;
  for (const Patient& p : cohort.patients) {
    Patient filled;
    filled.id = p.id;
    for (const Hospitalization& h : p.hospitalizations) {
      FillResult fr = forward_fill(h);
      res.dropped_leading += fr.dropped_leading;
      filled.hospitalizations.push_back(std::move(fr.hospitalization));
    }
    res.cohort.patients.push_back(std::move(filled));
  }
  return res;
}

bool label_aki(const Hospitalization& hosp, const AkiCriteria& criteria) {
  if (!(criteria.absolute_rise > 0.0) || !(criteria.absolute_window > 0.0) ||
      !(criteria.relative_rise > 0.0) || !(criteria.relative_window > 0.0)) {
    throw std::invalid_argument("label_aki: all criteria must be strictly positive");
  }
  for (const Measurement& m : hosp.measurements) {
    if (!m.timestamp) {
      throw std::invalid_argument(
          "label_aki: measurement lacks a timestamp; trajectory labeling needs timestamped data, "
          "supply labels at ingestion instead");
    }
    if (!m.value) throw std::invalid_argument("label_aki: measurement is missing; forward fill first");
  }
  const std::vector<Measurement>& ms = hosp.measurements;
  const double abs_window_s = criteria.absolute_window * 3600.0;
  const double rel_window_s = criteria.relative_window * 3600.0;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    for (std::size_t j = i + 1; j < ms.size(); ++j) {
      const double dv = *ms[j].value - *ms[i].value;
      const double dt = *ms[j].timestamp - *ms[i].timestamp;
      if (dv >= criteria.absolute_rise && dt <= abs_window_s) return true;
      if (*ms[j].value / *ms[i].value >= criteria.relative_rise && dt <= rel_window_s) return true;
    }
  }
  return false;
}

Patient attach_next_visit_labels(const Patient& patient, const std::vector<bool>& per_hosp_aki) {
  if (per_hosp_aki.size() != patient.hospitalizations.size()) {
    std::ostringstream os;
    os << "attach_next_visit_labels: patient '" << patient.id << "' has "
       << patient.hospitalizations.size() << " hospitalizations but " << per_hosp_aki.size()
       << " aki flags";
    throw std::invalid_argument(os.str());
  }
  Patient out = patient;
  const std::size_t n = out.hospitalizations.size();
  for (std::size_t a = 0; a < n; ++a) {
    out.hospitalizations[a].aki_this_hosp = per_hosp_aki[a];
    out.hospitalizations[a].label =
        a + 1 < n ? std::optional<bool>(per_hosp_aki[a + 1]) : std::nullopt;
  }
  return out;
}

CohortStats cohort_stats(const Cohort& cohort) {
  if (cohort.patients.empty()) fail("cohort_stats: empty cohort");
  CohortStats s;
  s.n_patients = cohort.patients.size();
  std::vector<double> hosp_counts;
  std::vector<double> meas_counts;
  for (const Patient& p : cohort.patients) {
    hosp_counts.push_back(static_cast<double>(p.hospitalizations.size()));
    for (const Hospitalization& h : p.hospitalizations) {
      ++s.n_hospitalizations;
      s.n_measurements += h.measurements.size();
      meas_counts.push_back(static_cast<double>(h.measurements.size()));
      if (h.label) {
        ++s.n_labeled;
        if (*h.label) ++s.n_positive;
      }
    }
  }
  s.prevalence = s.n_labeled > 0
                     ? static_cast<double>(s.n_positive) / static_cast<double>(s.n_labeled)
                     : std::numeric_limits<double>::quiet_NaN();
  s.mean_hosp_per_patient =
      static_cast<double>(s.n_hospitalizations) / static_cast<double>(s.n_patients);
  s.sd_hosp_per_patient = sample_sd(hosp_counts, s.mean_hosp_per_patient);
  s.mean_meas_per_hosp =
      static_cast<double>(s.n_measurements) / static_cast<double>(s.n_hospitalizations);
  s.sd_meas_per_hosp = sample_sd(meas_counts, s.mean_meas_per_hosp);
  return s;
}

}  // namespace nestseq
