#pragma once

// Hospitalization records, corpus files, training-table extraction, the
// train/test split, the synthetic corpus generator and the model artifact.
//
// Corpus, line-delimited JSON (one record per line):
//   {"record_id":"syn-0000001",
//    "alpha":{"gender":false,"age_years":63.5,"admission_type":"emergency",
//             "from_healthcare_facility":false,"cerebrovascular_history":false,
//             "diabetes":true,"hospitalized_past_90d":false,"mrsa_positive_past_90d":false},
//    "events":[{"test_type":"nare","result":0,"delay_before":0,
//               "beta":{"ab_days_30":2,"icu_days_7":0,"dialysis_7d":false}}, ...]}
//
// Corpus, CSV: one row per test, rows of a record contiguous and in order:
//   record_id,gender,age_years,admission_type,from_healthcare_facility,
//   cerebrovascular_history,diabetes,hospitalized_past_90d,
//   mrsa_positive_past_90d,test_index,test_type,result,delay_before,
//   ab_days_30,icu_days_7,dialysis_7d
// Bits are written 0/1. Reals use the shortest representation that reads
// back to the same double.
//
// Feature windows: ab_days_30 counts antibiotic days in the 30 days before
// the test, icu_days_7 ICU days in the 7 days before, dialysis_7d any
// dialysis in the 7 days before. delay_before is in days since the previous
// test of the same record (0 for the first test).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "genhai/error.hpp"
#include "genhai/patient_model.hpp"
#include "genhai/queries.hpp"
#include "genhai/rng.hpp"
#include "genhai/simulators.hpp"
#include "genhai/subprograms.hpp"
#include "genhai/svi.hpp"
#include "json.hpp"

namespace genhai {

struct HospitalizationRecord {
  std::string record_id;
  AdmissionFeatures alpha;
  std::vector<TestEvent> events;

  bool operator==(const HospitalizationRecord&) const = default;
};

// ------------------------------------------------------------------ ingest

enum class CorpusFormat { jsonl, csv };

inline CorpusFormat format_for_path(std::string_view path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? CorpusFormat::csv : CorpusFormat::jsonl;
}

enum class RejectCode { culture_neg, nonpositive_delay, first_delay_nonzero, beta_out_of_bounds, age_out_of_range, no_events };

inline std::string_view to_string(RejectCode c) {
  switch (c) {
    case RejectCode::culture_neg: return "CULTURE_NEG";
    case RejectCode::nonpositive_delay: return "NONPOSITIVE_DELAY";
    case RejectCode::first_delay_nonzero: return "FIRST_DELAY_NONZERO";
    case RejectCode::beta_out_of_bounds: return "BETA_OUT_OF_BOUNDS";
    case RejectCode::age_out_of_range: return "AGE_OUT_OF_RANGE";
    case RejectCode::no_events: return "NO_EVENTS";
  }
  return "?";
}

struct Reject {
  std::size_t line = 0;  ///< first line of the record
  std::string record_id;
  RejectCode code = RejectCode::no_events;
  std::string detail;
};

struct IngestResult {
  std::vector<HospitalizationRecord> records;
  std::vector<Reject> rejects;
};

/// First invariant a record violates, if any.
inline std::optional<std::pair<RejectCode, std::string>> check_record(const HospitalizationRecord& r) {
  if (!(r.alpha.age_years >= 0.0 && r.alpha.age_years <= 120.0)) {
    return std::pair{RejectCode::age_out_of_range, "age_years outside [0, 120]"};
  }
  if (r.events.empty()) return std::pair{RejectCode::no_events, "record has no tests"};
  for (std::size_t i = 0; i < r.events.size(); ++i) {
    const TestEvent& e = r.events[i];
    const std::string at = "test " + std::to_string(i);
    if (e.test_type == TestType::culture && e.result != 1) {
      return std::pair{RejectCode::culture_neg, at + ": culture tests are recorded only when positive"};
    }
    if (e.beta.ab_days_30 < 0 || e.beta.ab_days_30 > kAbCensor || e.beta.icu_days_7 < 0 ||
        e.beta.icu_days_7 > kIcuCensor) {
      return std::pair{RejectCode::beta_out_of_bounds, at + ": ab_days_30 must lie in [0, 30], icu_days_7 in [0, 7]"};
    }
    if (i == 0 && e.delay_before != 0.0) {
      return std::pair{RejectCode::first_delay_nonzero, "first test must have delay_before 0"};
    }
    if (i > 0 && !(e.delay_before > 0.0 && std::isfinite(e.delay_before))) {
      return std::pair{RejectCode::nonpositive_delay, at + ": delay_before must be a positive number of days"};
    }
  }
  return std::nullopt;
}

namespace detail {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

inline const Json& field(const Json& j, const char* name, std::size_t line) {
  if (!j.is_object() || !j.contains(name)) throw ParseError(line, std::string("missing field '") + name + "'");
  return j[name];
}

inline bool bit_of(const Json& j, const char* name, std::size_t line) {
  const Json& v = field(j, name, line);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v.get<std::int64_t>() == 0 || v.get<std::int64_t>() == 1)) return v.get<std::int64_t>() == 1;
  throw ParseError(line, std::string("field '") + name + "' must be a boolean or 0/1");
}

inline double number_of(const Json& j, const char* name, std::size_t line) {
  const Json& v = field(j, name, line);
  if (!v.is_number()) throw ParseError(line, std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline int int_of(const Json& j, const char* name, std::size_t line) {
  const Json& v = field(j, name, line);
  if (!v.is_number_integer()) throw ParseError(line, std::string("field '") + name + "' must be an integer");
  const std::int64_t x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw ParseError(line, std::string("field '") + name + "' out of range");
  return static_cast<int>(x);
}

inline std::string string_of(const Json& j, const char* name, std::size_t line) {
  const Json& v = field(j, name, line);
  if (!v.is_string()) throw ParseError(line, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline AdmissionType admission_type_of(const std::string& s, std::size_t line) {
  try {
    return parse_admission_type(s);
  } catch (const DomainError& e) {
    throw ParseError(line, e.what());
  }
}

inline TestType test_type_of(const std::string& s, std::size_t line) {
  try {
    return parse_test_type(s);
  } catch (const DomainError& e) {
    throw ParseError(line, e.what());
  }
}

inline int result_of(int r, std::size_t line) {
  if (r != 0 && r != 1) throw ParseError(line, "result must be 0 or 1");
  return r;
}

inline HospitalizationRecord record_from_json(const Json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "record must be a JSON object");
  HospitalizationRecord r;
  r.record_id = string_of(j, "record_id", line);
  const Json& a = field(j, "alpha", line);
  r.alpha.gender = bit_of(a, "gender", line);
  r.alpha.age_years = number_of(a, "age_years", line);
  r.alpha.admission_type = admission_type_of(string_of(a, "admission_type", line), line);
  r.alpha.from_healthcare_facility = bit_of(a, "from_healthcare_facility", line);
  r.alpha.cerebrovascular_history = bit_of(a, "cerebrovascular_history", line);
  r.alpha.diabetes = bit_of(a, "diabetes", line);
  r.alpha.hospitalized_past_90d = bit_of(a, "hospitalized_past_90d", line);
  r.alpha.mrsa_positive_past_90d = bit_of(a, "mrsa_positive_past_90d", line);
  const Json& evs = field(j, "events", line);
  if (!evs.is_array()) throw ParseError(line, "field 'events' must be an array");
  for (const Json& e : evs) {
    TestEvent ev;
    ev.test_type = test_type_of(string_of(e, "test_type", line), line);
    ev.result = result_of(int_of(e, "result", line), line);
    ev.delay_before = number_of(e, "delay_before", line);
    const Json& b = field(e, "beta", line);
    ev.beta.ab_days_30 = int_of(b, "ab_days_30", line);
    ev.beta.icu_days_7 = int_of(b, "icu_days_7", line);
    ev.beta.dialysis_7d = bit_of(b, "dialysis_7d", line);
    r.events.push_back(ev);
  }
  return r;
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline double csv_double(std::string_view s, const char* name, std::size_t line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(line, std::string("column '") + name + "' must be a number");
  }
  return v;
}

inline long long csv_int(std::string_view s, const char* name, std::size_t line) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(line, std::string("column '") + name + "' must be an integer");
  }
  return v;
}

inline bool csv_bit(std::string_view s, const char* name, std::size_t line) {
  if (s == "0" || s == "false") return false;
  if (s == "1" || s == "true") return true;
  throw ParseError(line, std::string("column '") + name + "' must be 0 or 1");
}

inline constexpr std::array<std::string_view, 16> kCsvColumns = {
    "record_id",      "gender",  "age_years",    "admission_type", "from_healthcare_facility",
    "cerebrovascular_history", "diabetes", "hospitalized_past_90d", "mrsa_positive_past_90d",
    "test_index",     "test_type", "result",     "delay_before",   "ab_days_30",
    "icu_days_7",     "dialysis_7d",
};

inline std::string_view strip_cr(std::string_view s) {
  return !s.empty() && s.back() == '\r' ? s.substr(0, s.size() - 1) : s;
}

inline void admit(IngestResult& out, HospitalizationRecord&& r, std::size_t line) {
  if (auto bad = check_record(r)) {
    out.rejects.push_back(Reject{line, r.record_id, bad->first, bad->second});
  } else {
    out.records.push_back(std::move(r));
  }
}

inline IngestResult ingest_jsonl(std::istream& in) {
  IngestResult out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    const std::string_view s = strip_cr(text);
    if (s.find_first_not_of(" \t") == std::string_view::npos) continue;
    Json j;
    try {
      j = Json::parse(s);
    } catch (const Json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    admit(out, record_from_json(j, line), line);
  }
  return out;
}

inline IngestResult ingest_csv(std::istream& in) {
  IngestResult out;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  std::optional<HospitalizationRecord> cur;
  std::size_t cur_line = 0;
  while (std::getline(in, text)) {
    ++line;
    const std::string_view s = strip_cr(text);
    if (s.empty()) continue;
    const auto cols = split_commas(s);
    if (!header) {
      if (cols.size() != kCsvColumns.size() || !std::equal(cols.begin(), cols.end(), kCsvColumns.begin())) {
        throw ParseError(line, "CSV header does not match the corpus columns");
      }
      header = true;
      continue;
    }
    if (cols.size() != kCsvColumns.size()) {
      throw ParseError(line, "expected " + std::to_string(kCsvColumns.size()) + " columns, found " +
                                 std::to_string(cols.size()));
    }
    if (s.find('"') != std::string_view::npos) throw ParseError(line, "quoted CSV fields are not supported");
    const std::string id(cols[0]);
    if (id.empty()) throw ParseError(line, "record_id must not be empty");
    const long long idx = csv_int(cols[9], "test_index", line);
    if (!cur || cur->record_id != id) {
      if (cur) admit(out, std::move(*cur), cur_line);
      if (idx != 0) throw ParseError(line, "record " + id + " must start at test_index 0");
      cur.emplace();
      cur_line = line;
      cur->record_id = id;
      cur->alpha.gender = csv_bit(cols[1], "gender", line);
      cur->alpha.age_years = csv_double(cols[2], "age_years", line);
      cur->alpha.admission_type = admission_type_of(std::string(cols[3]), line);
      cur->alpha.from_healthcare_facility = csv_bit(cols[4], "from_healthcare_facility", line);
      cur->alpha.cerebrovascular_history = csv_bit(cols[5], "cerebrovascular_history", line);
      cur->alpha.diabetes = csv_bit(cols[6], "diabetes", line);
      cur->alpha.hospitalized_past_90d = csv_bit(cols[7], "hospitalized_past_90d", line);
      cur->alpha.mrsa_positive_past_90d = csv_bit(cols[8], "mrsa_positive_past_90d", line);
    } else if (idx != static_cast<long long>(cur->events.size())) {
      throw ParseError(line, "record " + id + ": test_index out of order");
    }
    TestEvent ev;
    ev.test_type = test_type_of(std::string(cols[10]), line);
    ev.result = result_of(static_cast<int>(csv_int(cols[11], "result", line)), line);
    ev.delay_before = csv_double(cols[12], "delay_before", line);
    ev.beta.ab_days_30 = static_cast<int>(csv_int(cols[13], "ab_days_30", line));
    ev.beta.icu_days_7 = static_cast<int>(csv_int(cols[14], "icu_days_7", line));
    ev.beta.dialysis_7d = csv_bit(cols[15], "dialysis_7d", line);
    cur->events.push_back(ev);
  }
  if (cur) admit(out, std::move(*cur), cur_line);
  return out;
}

inline std::string shortest(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

/// Parses a corpus. Syntax and type errors throw ParseError with the line
/// number; records violating data invariants are reported as rejects.
inline IngestResult ingest(std::istream& in, CorpusFormat format) {
  return format == CorpusFormat::csv ? detail::ingest_csv(in) : detail::ingest_jsonl(in);
}

inline IngestResult ingest_file(const std::string& path, std::optional<CorpusFormat> format = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus '" + path + "'");
  return ingest(in, format.value_or(format_for_path(path)));
}

inline nlohmann::ordered_json record_to_json(const HospitalizationRecord& r) {
  using OJson = nlohmann::ordered_json;
  OJson a = {{"gender", r.alpha.gender},
             {"age_years", r.alpha.age_years},
             {"admission_type", to_string(r.alpha.admission_type)},
             {"from_healthcare_facility", r.alpha.from_healthcare_facility},
             {"cerebrovascular_history", r.alpha.cerebrovascular_history},
             {"diabetes", r.alpha.diabetes},
             {"hospitalized_past_90d", r.alpha.hospitalized_past_90d},
             {"mrsa_positive_past_90d", r.alpha.mrsa_positive_past_90d}};
  OJson events = OJson::array();
  for (const TestEvent& e : r.events) {
    events.push_back(OJson{{"test_type", to_string(e.test_type)},
                           {"result", e.result},
                           {"delay_before", e.delay_before},
                           {"beta",
                            {{"ab_days_30", e.beta.ab_days_30},
                             {"icu_days_7", e.beta.icu_days_7},
                             {"dialysis_7d", e.beta.dialysis_7d}}}});
  }
  return OJson{{"record_id", r.record_id}, {"alpha", std::move(a)}, {"events", std::move(events)}};
}

inline void write_jsonl(std::ostream& os, const std::vector<HospitalizationRecord>& records) {
  for (const auto& r : records) os << record_to_json(r).dump() << '\n';
}

inline void write_csv(std::ostream& os, const std::vector<HospitalizationRecord>& records) {
  for (std::size_t i = 0; i < detail::kCsvColumns.size(); ++i) os << (i ? "," : "") << detail::kCsvColumns[i];
  os << '\n';
  for (const auto& r : records) {
    if (r.record_id.find_first_of(",\"\n\r") != std::string::npos) {
      throw DomainError("record_id '" + r.record_id + "' cannot be written to CSV");
    }
    const AdmissionFeatures& a = r.alpha;
    for (std::size_t i = 0; i < r.events.size(); ++i) {
      const TestEvent& e = r.events[i];
      os << r.record_id << ',' << int(a.gender) << ',' << detail::shortest(a.age_years) << ','
         << to_string(a.admission_type) << ',' << int(a.from_healthcare_facility) << ','
         << int(a.cerebrovascular_history) << ',' << int(a.diabetes) << ',' << int(a.hospitalized_past_90d) << ','
         << int(a.mrsa_positive_past_90d) << ',' << i << ',' << to_string(e.test_type) << ',' << e.result << ','
         << detail::shortest(e.delay_before) << ',' << e.beta.ab_days_30 << ',' << e.beta.icu_days_7 << ','
         << int(e.beta.dialysis_7d) << '\n';
    }
  }
}

inline void write_corpus(std::ostream& os, const std::vector<HospitalizationRecord>& records, CorpusFormat format) {
  format == CorpusFormat::csv ? write_csv(os, records) : write_jsonl(os, records);
}

// -------------------------------------------------------- training tables

/// Routes every observed step to the tables of the sub-programs that
/// generate it. Culture results are fixed by the test type and never become
/// D_r rows.
inline TrainingTables extract_training_tables(const std::vector<HospitalizationRecord>& records) {
  TrainingTables tables;
  for (SubProgramId id : kAllSubPrograms) tables[index_of(id)] = TrainingTable(id);
  std::vector<double> x;
  auto add = [&](SubProgramId id, const StepContext& ctx, double y) {
    conditioning_vector_into(id, ctx, x);
    tables[index_of(id)].add(x, y);
  };
  for (const HospitalizationRecord& rec : records) {
    for (std::size_t i = 0; i < rec.events.size(); ++i) {
      const TestEvent& e = rec.events[i];
      const bool first = i == 0;
      StepContext ctx;
      ctx.alpha = rec.alpha;
      if (!first) {
        const TestEvent& prev = rec.events[i - 1];
        StepContext dctx;
        dctx.alpha = rec.alpha;
        dctx.beta_prev = prev.beta;
        add(prev.result == 0 ? SubProgramId::d_neg : SubProgramId::d_pos, dctx, e.delay_before);
        ctx.beta_prev = prev.beta;
        ctx.r_prev = prev.result;
        ctx.d_prev = e.delay_before;
      }
      add(first ? SubProgramId::beta1_ab : SubProgramId::betai_ab, ctx, e.beta.ab_days_30);
      ctx.ab = e.beta.ab_days_30;
      add(first ? SubProgramId::beta1_icu : SubProgramId::betai_icu, ctx, e.beta.icu_days_7);
      ctx.icu = e.beta.icu_days_7;
      add(first ? SubProgramId::beta1_dia : SubProgramId::betai_dia, ctx, e.beta.dialysis_7d ? 1.0 : 0.0);
      ctx.dia = e.beta.dialysis_7d;
      const bool nare = e.test_type == TestType::nare;
      add(first ? SubProgramId::t1 : SubProgramId::t_i, ctx, nare ? 1.0 : 0.0);
      if (nare) add(first ? SubProgramId::r1 : SubProgramId::r_i, ctx, e.result);
      ctx.r = e.result;
      add(SubProgramId::cont, ctx, i + 1 < rec.events.size() ? 1.0 : 0.0);
    }
  }
  return tables;
}

// -------------------------------------------------------------------- split

/// Record-level split: a seeded shuffle picks round(ratio * n) training
/// records. Both parts keep the input order.
inline std::pair<std::vector<HospitalizationRecord>, std::vector<HospitalizationRecord>> split(
    const std::vector<HospitalizationRecord>& records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split ratio must lie in (0, 1)");
  const std::size_t n = records.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng::for_stream(seed, 0x5b117);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<char> in_train(n, 0);
  for (std::size_t k = 0; k < n_train; ++k) in_train[idx[k]] = 1;
  std::pair<std::vector<HospitalizationRecord>, std::vector<HospitalizationRecord>> out;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? out.first : out.second).push_back(records[i]);
  return out;
}

// ---------------------------------------------------------------- synthetic

/// Independent marginals of the admission features.
struct AlphaDistribution {
  double p_gender = 0.5;
  /// Age is a two-component mixture of normals (truncated to [0, 120]).
  double age_mean1 = 62.0, age_sd1 = 16.0;
  double age_mean2 = 62.0, age_sd2 = 16.0;
  double p_age2 = 0.0;
  std::array<double, 4> admission_type_probs{0.6, 0.25, 0.05, 0.1};
  double p_from_hcf = 0.2;
  double p_cerebrovascular = 0.1;
  double p_diabetes = 0.25;
  double p_hospitalized_90d = 0.3;
  double p_mrsa_90d = 0.08;

  AdmissionFeatures sample(Rng& rng) const {
    AdmissionFeatures a;
    a.gender = rng.uniform() < p_gender;
    const bool second = rng.uniform() < p_age2;
    const double m = second ? age_mean2 : age_mean1, s = second ? age_sd2 : age_sd1;
    a.age_years = std::clamp(m + s * standard_normal(rng), 0.0, 120.0);
    double u = rng.uniform();
    int k = 0;
    while (k < 3 && u >= admission_type_probs[k]) u -= admission_type_probs[k++];
    a.admission_type = static_cast<AdmissionType>(k);
    a.from_healthcare_facility = rng.uniform() < p_from_hcf;
    a.cerebrovascular_history = rng.uniform() < p_cerebrovascular;
    a.diabetes = rng.uniform() < p_diabetes;
    a.hospitalized_past_90d = rng.uniform() < p_hospitalized_90d;
    a.mrsa_positive_past_90d = rng.uniform() < p_mrsa_90d;
    return a;
  }
};

inline nlohmann::ordered_json to_json(const AlphaDistribution& d) {
  return {{"p_gender", d.p_gender},
          {"age_mean1", d.age_mean1},
          {"age_sd1", d.age_sd1},
          {"age_mean2", d.age_mean2},
          {"age_sd2", d.age_sd2},
          {"p_age2", d.p_age2},
          {"admission_type_probs", d.admission_type_probs},
          {"p_from_hcf", d.p_from_hcf},
          {"p_cerebrovascular", d.p_cerebrovascular},
          {"p_diabetes", d.p_diabetes},
          {"p_hospitalized_90d", d.p_hospitalized_90d},
          {"p_mrsa_90d", d.p_mrsa_90d}};
}

namespace detail {

/// Writes `value` at the coefficient of conditioning field `field` in the
/// weight slice `slice` (or the scalar slice itself when field is empty).
inline void set_truth(ThetaTable& t, SubProgramId id, std::string_view slice, std::string_view field, double value) {
  const SubProgramSpec spec = registry_spec(id);
  const Slice& s = ParamLayout::for_spec(spec).slice(slice);
  std::size_t i = 0;
  if (!field.empty()) {
    const auto layout = conditioning_layout(id);
    const auto it = std::find(layout.begin(), layout.end(), field);
    if (it == layout.end()) throw DomainError(std::string(name_of(id)) + " has no field " + std::string(field));
    i = static_cast<std::size_t>(it - layout.begin());
  }
  t[index_of(id)].at(s.offset + i) = value;
}

inline ThetaTable zero_truth() {
  ThetaTable t;
  for (SubProgramId id : kAllSubPrograms) {
    const ParamLayout l = ParamLayout::for_spec(registry_spec(id));
    std::vector<double> v(l.total_dim, 0.0);
    for (const Slice& s : l.slices) {
      if (s.log_scale) std::fill(v.begin() + s.offset, v.begin() + s.offset + s.size, 1.0);
    }
    t[index_of(id)] = std::move(v);
  }
  return t;
}

}  // namespace detail

/// Directions of the unconstrained parameter space along which the
/// likelihood is flat: the admission-type one-hot block against the
/// intercept of every linear predictor, and (mixture only) a common shift of
/// the three component logits.
inline std::vector<std::vector<double>> likelihood_null_directions(const SubProgramSpec& spec) {
  const ParamLayout layout = ParamLayout::for_spec(spec);
  const auto fields = conditioning_layout(spec.id);
  std::vector<std::size_t> onehot;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].rfind("alpha.adm_", 0) == 0) onehot.push_back(i);
  }
  std::vector<std::vector<double>> dirs;
  auto predictor = [&](std::size_t offset) {
    std::vector<double> v(layout.total_dim, 0.0);
    v[offset + spec.input_dim] = 1.0;
    for (std::size_t i : onehot) v[offset + i] = -1.0;
    dirs.push_back(std::move(v));
  };
  if (spec.family == Family::lognormal_mixture3) {
    for (const char* w : {"w_z1", "w_z2", "w_z3", "w_mu3"}) predictor(layout.slice(w).offset);
    for (std::size_t j = 0; j <= spec.input_dim; ++j) {
      std::vector<double> v(layout.total_dim, 0.0);
      for (const char* w : {"w_z1", "w_z2", "w_z3"}) v[layout.slice(w).offset + j] = 1.0;
      dirs.push_back(std::move(v));
    }
  } else {
    predictor(0);
  }
  return dirs;
}

/// Moves a constrained parameter vector along the likelihood-flat directions
/// to the point of smallest norm, which is where a zero-mean isotropic prior
/// puts the posterior mean.
inline std::vector<double> canonical_gauge(const SubProgramSpec& spec, std::vector<double> theta) {
  auto dirs = likelihood_null_directions(spec);
  // Gram-Schmidt, then remove the projection.
  std::vector<std::vector<double>> basis;
  for (auto& v : dirs) {
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  for (const auto& b : basis) {
    double dot = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) dot += theta[i] * b[i];
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= dot * b[i];
  }
  return theta;
}

struct SyntheticSpec {
  std::size_t n_records = 20000;
  ThetaTable truth;
  AlphaDistribution alpha;
  std::uint64_t seed = 0;
  SimLimits limits;
  std::array<double, 2> fixed_means = kDefaultFixedDelayMeans;

  /// Hand-set parameters giving about one positive test in five, three tests
  /// per stay, censoring spikes at 30 and 7 days and retest delays peaking
  /// near one day and one week.
  static SyntheticSpec standard(std::size_t n, std::uint64_t seed) {
    using S = SubProgramId;
    using detail::set_truth;
    SyntheticSpec s;
    s.n_records = n;
    s.seed = seed;
    ThetaTable& t = s.truth = detail::zero_truth();

    set_truth(t, S::beta1_ab, "c", "", 1.2);
    set_truth(t, S::beta1_ab, "w", "alpha.hospitalized_past_90d", 0.8);
    set_truth(t, S::beta1_ab, "w", "alpha.from_healthcare_facility", 0.5);
    set_truth(t, S::beta1_ab, "w", "alpha.age_over_100", 0.3);
    set_truth(t, S::beta1_ab, "log_alpha", "", 2.0);
    set_truth(t, S::beta1_icu, "c", "", -0.4);
    set_truth(t, S::beta1_icu, "w", "ab", 1.0);
    set_truth(t, S::beta1_icu, "w", "alpha.adm_emergency", 0.4);
    set_truth(t, S::beta1_icu, "log_alpha", "", 1.5);
    set_truth(t, S::beta1_dia, "c", "", -3.2);
    set_truth(t, S::beta1_dia, "w", "icu", 1.2);
    set_truth(t, S::beta1_dia, "w", "alpha.diabetes", 0.8);
    set_truth(t, S::beta1_dia, "w", "alpha.age_over_100", 0.6);

    set_truth(t, S::t1, "c", "", 3.0);
    set_truth(t, S::t1, "w", "beta.ab_over_30", -0.8);
    set_truth(t, S::t1, "w", "beta.icu_over_7", -0.6);
    set_truth(t, S::t1, "w", "alpha.from_healthcare_facility", -0.3);
    set_truth(t, S::r1, "c", "", -2.9);
    set_truth(t, S::r1, "w", "alpha.mrsa_positive_past_90d", 2.2);
    set_truth(t, S::r1, "w", "alpha.from_healthcare_facility", 0.7);
    set_truth(t, S::r1, "w", "beta.ab_over_30", 0.6);
    set_truth(t, S::r1, "w", "beta.dialysis_7d", 0.5);

    set_truth(t, S::cont, "c", "", 0.45);
    set_truth(t, S::cont, "w", "r", 0.5);
    set_truth(t, S::cont, "w", "beta.icu_over_7", 0.4);
    set_truth(t, S::cont, "w", "alpha.age_over_100", 0.3);
    set_truth(t, S::cont, "w", "alpha.adm_elective", -0.4);

    set_truth(t, S::d_pos, "c", "", 1.1);
    set_truth(t, S::d_pos, "w", "beta_prev.icu_over_7", -0.3);
    set_truth(t, S::d_pos, "log_sigma", "", 0.6);
    set_truth(t, S::d_neg, "c_z1", "", 0.5);
    set_truth(t, S::d_neg, "c_z2", "", 0.3);
    set_truth(t, S::d_neg, "w_z1", "beta_prev.icu_over_7", 0.6);
    set_truth(t, S::d_neg, "c_mu3", "", 1.2);
    set_truth(t, S::d_neg, "w_mu3", "alpha.age_over_100", 0.3);
    set_truth(t, S::d_neg, "log_sigma1", "", 0.25);
    set_truth(t, S::d_neg, "log_sigma2", "", 0.15);
    set_truth(t, S::d_neg, "log_sigma3", "", 0.6);

    set_truth(t, S::betai_ab, "c", "", 0.9);
    set_truth(t, S::betai_ab, "w", "beta_prev.ab_over_30", 2.0);
    set_truth(t, S::betai_ab, "w", "log1p_d_prev", 0.3);
    set_truth(t, S::betai_ab, "w", "r_prev", 0.5);
    set_truth(t, S::betai_ab, "log_alpha", "", 1.2);
    set_truth(t, S::betai_icu, "c", "", -0.8);
    set_truth(t, S::betai_icu, "w", "beta_prev.icu_over_7", 2.0);
    set_truth(t, S::betai_icu, "w", "ab", 0.6);
    set_truth(t, S::betai_icu, "log_alpha", "", 1.2);
    set_truth(t, S::betai_dia, "c", "", -3.8);
    set_truth(t, S::betai_dia, "w", "beta_prev.dialysis_7d", 5.5);
    set_truth(t, S::betai_dia, "w", "icu", 0.6);

    set_truth(t, S::t_i, "c", "", 3.0);
    set_truth(t, S::t_i, "w", "r_prev", -0.6);
    set_truth(t, S::t_i, "w", "beta.ab_over_30", -0.4);
    set_truth(t, S::r_i, "c", "", -3.0);
    set_truth(t, S::r_i, "w", "r_prev", 2.2);
    set_truth(t, S::r_i, "w", "alpha.mrsa_positive_past_90d", 1.2);
    set_truth(t, S::r_i, "w", "log1p_d_prev", 0.3);
    set_truth(t, S::r_i, "w", "beta.ab_over_30", 0.4);
    return s;
  }

  /// Well-conditioned design for parameter recovery: balanced bits, a
  /// bimodal age, moderate random coefficients, outcome rates near one half,
  /// well separated delay components, and truth placed in the prior's gauge.
  /// The coefficients depend on `truth_seed` only, so corpora with different
  /// seeds share one truth.
  static SyntheticSpec recovery(std::size_t n, std::uint64_t seed, std::uint64_t truth_seed = 0x7e57) {
    using S = SubProgramId;
    using detail::set_truth;
    SyntheticSpec s;
    s.n_records = n;
    s.seed = seed;
    s.alpha = AlphaDistribution{0.5, 10.0, 6.0, 110.0, 6.0, 0.5, {0.25, 0.25, 0.25, 0.25}, 0.5, 0.5, 0.5, 0.5, 0.5};
    ThetaTable& t = s.truth = detail::zero_truth();
    Rng rng = Rng::for_stream(truth_seed, 0);
    for (SubProgramId id : kAllSubPrograms) {
      const SubProgramSpec spec = registry_spec(id);
      const ParamLayout l = ParamLayout::for_spec(spec);
      auto& v = t[index_of(id)];
      for (const Slice& sl : l.slices) {
        if (sl.log_scale) continue;
        for (std::size_t i = sl.offset; i < sl.offset + sl.size; ++i) v[i] = (rng.uniform() * 2 - 1) * 0.4;
      }
    }
    // Outcome-rate anchors.
    set_truth(t, S::beta1_ab, "c", "", 3.2);
    set_truth(t, S::betai_ab, "c", "", 3.2);
    set_truth(t, S::beta1_icu, "c", "", 1.6);
    set_truth(t, S::betai_icu, "c", "", 1.6);
    for (S id : {S::betai_ab, S::betai_icu}) set_truth(t, id, "log_alpha", "", 0.5);
    for (S id : {S::beta1_ab, S::beta1_icu}) set_truth(t, id, "log_alpha", "", 1.0);
    set_truth(t, S::t1, "c", "", 1.5);
    set_truth(t, S::t_i, "c", "", 1.0);
    set_truth(t, S::cont, "c", "", 1.0);
    set_truth(t, S::d_pos, "c", "", 1.0);
    set_truth(t, S::d_pos, "log_sigma", "", 0.5);
    set_truth(t, S::d_neg, "c_mu3", "", 3.0);
    set_truth(t, S::d_neg, "log_sigma1", "", 0.3);
    set_truth(t, S::d_neg, "log_sigma2", "", 0.3);
    set_truth(t, S::d_neg, "log_sigma3", "", 0.35);
    for (SubProgramId id : kAllSubPrograms) t[index_of(id)] = canonical_gauge(registry_spec(id), t[index_of(id)]);
    return s;
  }
};

struct SyntheticCorpus {
  std::vector<HospitalizationRecord> records;
  nlohmann::ordered_json manifest;
};

/// Constrained parameters of one sub-program keyed by slice name.
inline nlohmann::ordered_json theta_to_json(const SubProgramSpec& spec, std::span<const double> theta) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const Slice& s : ParamLayout::for_spec(spec).slices) {
    const std::string key = s.log_scale ? s.name.substr(4) : s.name;  // log_alpha -> alpha
    if (s.size == 1) {
      j[key] = theta[s.offset];
    } else {
      j[key] = std::vector<double>(theta.begin() + s.offset, theta.begin() + s.offset + s.size);
    }
  }
  return j;
}

inline nlohmann::ordered_json truth_manifest(const SyntheticSpec& spec) {
  nlohmann::ordered_json subs = nlohmann::ordered_json::array();
  for (SubProgramId id : kAllSubPrograms) {
    const SubProgramSpec ss = registry_spec(id, spec.fixed_means);
    nlohmann::ordered_json e = {{"name", ss.name()}, {"family", to_string(ss.family)}, {"input_dim", ss.input_dim}};
    if (ss.censor_bound) e["censor_bound"] = *ss.censor_bound;
    if (ss.fixed_means) e["fixed_means"] = *ss.fixed_means;
    e["fields"] = std::vector<std::string>(conditioning_layout(id).begin(), conditioning_layout(id).end());
    e["theta"] = theta_to_json(ss, spec.truth[index_of(id)]);
    subs.push_back(std::move(e));
  }
  return {{"format", "genhai-truth"},
          {"version", 1},
          {"seed", spec.seed},
          {"n_records", spec.n_records},
          {"max_events", spec.limits.max_events},
          {"alpha_distribution", to_json(spec.alpha)},
          {"subprograms", std::move(subs)}};
}

/// Simulates one record per stream (seed, k) from the true parameters.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  const Registry reg = point_mass_registry(spec.truth, spec.fixed_means);
  ThetaBundle theta;
  theta.theta = spec.truth;
  SyntheticCorpus out;
  out.records.reserve(spec.n_records);
  char id[32];
  for (std::size_t k = 0; k < spec.n_records; ++k) {
    Rng rng = Rng::for_stream(spec.seed, k);
    HospitalizationRecord rec;
    std::snprintf(id, sizeof id, "syn-%07zu", k + 1);
    rec.record_id = id;
    rec.alpha = spec.alpha.sample(rng);
    rec.events = simulate_full(rng, reg, rec.alpha, spec.limits, &theta).events;
    out.records.push_back(std::move(rec));
  }
  out.manifest = truth_manifest(spec);
  return out;
}

// ----------------------------------------------------------------- artifact

inline constexpr int kArtifactVersion = 1;

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// A trained model: any subset of the 13 sub-programs plus provenance.
struct ModelArtifact {
  std::array<std::optional<FittedSubProgram>, kNumSubPrograms> programs;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  static ModelArtifact from_registry(const Registry& reg, nlohmann::ordered_json provenance = nlohmann::ordered_json::object()) {
    ModelArtifact a;
    for (SubProgramId id : kAllSubPrograms) a.programs[index_of(id)] = at(reg, id);
    a.provenance = std::move(provenance);
    return a;
  }

  bool complete() const {
    return std::all_of(programs.begin(), programs.end(), [](const auto& p) { return p.has_value(); });
  }

  /// Throws ArtifactError naming the first missing sub-program.
  Registry registry() const {
    Registry reg;
    for (SubProgramId id : kAllSubPrograms) {
      const auto& p = programs[index_of(id)];
      if (!p) throw ArtifactError("model artifact is missing sub-program " + std::string(name_of(id)));
      reg[index_of(id)] = *p;
    }
    return reg;
  }
};

namespace detail {

inline nlohmann::ordered_json program_to_json(const FittedSubProgram& f) {
  using OJson = nlohmann::ordered_json;
  const ParamLayout layout = ParamLayout::for_spec(f.spec);
  OJson slices = OJson::array();
  for (const Slice& s : layout.slices) {
    slices.push_back(OJson{{"name", s.name}, {"offset", s.offset}, {"size", s.size}, {"log_scale", s.log_scale}});
  }
  const std::size_t d = f.posterior.dim();
  std::vector<double> lower;
  lower.reserve(d * (d + 1) / 2);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) lower.push_back(f.posterior.at(i, j));
  }
  OJson j = {{"name", f.spec.name()}, {"family", to_string(f.spec.family)}, {"input_dim", f.spec.input_dim}};
  if (f.spec.censor_bound) j["censor_bound"] = *f.spec.censor_bound;
  if (f.spec.fixed_means) j["fixed_means"] = *f.spec.fixed_means;
  j["fields"] = std::vector<std::string>(conditioning_layout(f.spec.id).begin(), conditioning_layout(f.spec.id).end());
  j["slices"] = std::move(slices);
  j["posterior"] = {{"mean", f.posterior.mean}, {"chol_lower", std::move(lower)}};
  return j;
}

inline FittedSubProgram program_from_json(const nlohmann::json& j) {
  auto fail = [&](const std::string& what) -> ArtifactError {
    return ArtifactError("model artifact: " + (j.contains("name") ? j["name"].dump() + ": " : std::string()) + what);
  };
  try {
    const SubProgramId id = parse_subprogram(j.at("name").get<std::string>());
    const std::array<double, 2> fixed =
        j.contains("fixed_means") ? j.at("fixed_means").get<std::array<double, 2>>() : kDefaultFixedDelayMeans;
    const SubProgramSpec spec = registry_spec(id, fixed);
    if (j.at("family").get<std::string>() != to_string(spec.family)) throw fail("family does not match the registry");
    if (j.at("input_dim").get<std::size_t>() != spec.input_dim) throw fail("input_dim does not match the layout table");
    if (spec.censor_bound && (!j.contains("censor_bound") || j.at("censor_bound").get<int>() != *spec.censor_bound)) {
      throw fail("censor bound does not match the registry");
    }
    const ParamLayout layout = ParamLayout::for_spec(spec);
    const auto mean = j.at("posterior").at("mean").get<std::vector<double>>();
    const auto lower = j.at("posterior").at("chol_lower").get<std::vector<double>>();
    const std::size_t d = layout.total_dim;
    if (mean.size() != d || lower.size() != d * (d + 1) / 2) throw fail("posterior has the wrong dimension");
    std::vector<double> chol(d * d, 0.0);
    std::size_t k = 0;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c <= r; ++c) chol[r * d + c] = lower[k++];
    }
    FittedSubProgram f{spec, GaussianChol(mean, std::move(chol))};
    f.validate();
    return f;
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what());
  }
}

}  // namespace detail

/// Hash of the serialized sub-programs; identifies a trained model.
inline std::string model_hash(const ModelArtifact& a) {
  nlohmann::ordered_json subs = nlohmann::ordered_json::array();
  for (const auto& p : a.programs) {
    if (p) subs.push_back(detail::program_to_json(*p));
  }
  return hex64(fnv1a64(subs.dump()));
}

inline nlohmann::ordered_json model_to_json(const ModelArtifact& a) {
  nlohmann::ordered_json subs = nlohmann::ordered_json::array();
  for (const auto& p : a.programs) {
    if (p) subs.push_back(detail::program_to_json(*p));
  }
  const std::string hash = hex64(fnv1a64(subs.dump()));
  return {{"format", "genhai-model"},
          {"version", kArtifactVersion},
          {"provenance", a.provenance},
          {"model_hash", hash},
          {"subprograms", std::move(subs)}};
}

/// Parses an artifact. With `require_complete` every sub-program must be
/// present.
inline ModelArtifact model_from_json(const nlohmann::json& j, bool require_complete = true) {
  if (!j.is_object() || j.value("format", "") != "genhai-model") throw ArtifactError("not a model artifact");
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kArtifactVersion) {
    throw ArtifactError("unsupported model artifact version " + (j.contains("version") ? j["version"].dump() : "?") +
                        " (expected " + std::to_string(kArtifactVersion) + ")");
  }
  if (!j.contains("subprograms") || !j["subprograms"].is_array()) throw ArtifactError("model artifact has no sub-programs");
  ModelArtifact a;
  for (const auto& p : j["subprograms"]) {
    FittedSubProgram f = detail::program_from_json(p);
    auto& slot = a.programs[index_of(f.spec.id)];
    if (slot) throw ArtifactError("model artifact lists " + std::string(f.spec.name()) + " twice");
    slot = std::move(f);
  }
  if (j.contains("provenance")) a.provenance = j["provenance"];
  if (require_complete) {
    for (SubProgramId id : kAllSubPrograms) {
      if (!a.programs[index_of(id)]) throw ArtifactError("model artifact is missing sub-program " + std::string(name_of(id)));
    }
  }
  if (j.contains("model_hash") && j["model_hash"] != model_hash(a)) {
    throw ArtifactError("model artifact hash does not match its contents");
  }
  return a;
}

inline void save_model(const std::string& path, const ModelArtifact& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model artifact '" + path + "'");
  out << model_to_json(a).dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing model artifact '" + path + "'");
}

inline ModelArtifact load_model(const std::string& path, bool require_complete = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open model artifact '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArtifactError("model artifact '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j, require_complete);
}

/// Layout table: every sub-program's ordered conditioning fields.
inline nlohmann::ordered_json layout_table() {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (SubProgramId id : kAllSubPrograms) {
    const SubProgramSpec s = registry_spec(id);
    j.push_back({{"name", s.name()},
                 {"family", to_string(s.family)},
                 {"input_dim", s.input_dim},
                 {"fields", std::vector<std::string>(conditioning_layout(id).begin(), conditioning_layout(id).end())}});
  }
  return j;
}

}  // namespace genhai
