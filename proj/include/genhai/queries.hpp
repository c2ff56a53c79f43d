#pragma once

// Monte Carlo estimators for the four what-if questions.
//
// Work is split into B = min(n_posterior_draws, n_sequences) parameter
// bundles. Bundle b draws one parameter vector per sub-program from the
// posterior on stream (seed, b) and simulates its share of the sequences at
// those parameters; sequence i runs on its own stream so every sequence sees
// the same random numbers whatever the other inputs (stay length, delay) are.
// The posterior band is the 5th..95th percentile of the per-bundle means.
// Results do not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "genhai/error.hpp"
#include "genhai/patient_model.hpp"
#include "genhai/rng.hpp"
#include "genhai/simulators.hpp"
#include "genhai/subprograms.hpp"
#include "json.hpp"

namespace genhai {

enum class QueryKind { admission_risk, extended_stay_risk, retest_now, deisolation };

inline std::string_view to_string(QueryKind k) {
  switch (k) {
    case QueryKind::admission_risk: return "admission_risk";
    case QueryKind::extended_stay_risk: return "extended_stay_risk";
    case QueryKind::retest_now: return "retest_now";
    case QueryKind::deisolation: return "deisolation";
  }
  return "?";
}

inline std::optional<QueryKind> parse_query_kind(std::string_view s) {
  for (QueryKind k : {QueryKind::admission_risk, QueryKind::extended_stay_risk, QueryKind::retest_now,
                      QueryKind::deisolation}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// A rejected query field. `kind_mismatch` separates fields that are
/// well-formed but wrong for the query kind from malformed values.
class QueryFieldError : public DomainError {
 public:
  QueryFieldError(std::string field, const std::string& message, bool kind_mismatch = false)
      : DomainError(field + ": " + message), field_(std::move(field)), kind_mismatch_(kind_mismatch) {}

  const std::string& field() const noexcept { return field_; }
  bool kind_mismatch() const noexcept { return kind_mismatch_; }

 private:
  std::string field_;
  bool kind_mismatch_;
};

class InsufficientAcceptance : public std::runtime_error {
 public:
  InsufficientAcceptance(std::size_t accepted, std::size_t total)
      : std::runtime_error("insufficient acceptance: " + std::to_string(accepted) + " of " + std::to_string(total) +
                           " sequences accepted (rate " + std::to_string(rate(accepted, total)) + ", need 100)"),
        accepted_(accepted),
        acceptance_rate_(rate(accepted, total)) {}

  std::size_t accepted() const noexcept { return accepted_; }
  double acceptance_rate() const noexcept { return acceptance_rate_; }

 private:
  static double rate(std::size_t a, std::size_t t) { return t ? static_cast<double>(a) / t : 0.0; }
  std::size_t accepted_;
  double acceptance_rate_;
};

inline constexpr int kMaxQuerySequences = 2'000'000;
inline constexpr std::size_t kMinAccepted = 100;

struct QuerySpec {
  QueryKind kind = QueryKind::admission_risk;
  AdmissionFeatures alpha;
  std::optional<TestTimeFeatures> beta1;
  std::optional<int> r1;
  std::optional<double> tau_p;
  std::optional<double> tau_m;
  int n_sequences = 10000;
  int n_posterior_draws = 50;
  std::uint64_t seed = 0;
  SimLimits limits;

  /// Throws QueryFieldError naming the first offending field.
  void validate() const {
    if (!(alpha.age_years >= 0.0 && alpha.age_years <= 120.0)) {
      throw QueryFieldError("alpha.age_years", "must lie in [0, 120]");
    }
    if (beta1) {
      if (beta1->ab_days_30 < 0 || beta1->ab_days_30 > kAbCensor) {
        throw QueryFieldError("beta1.ab_days_30", "must be an integer in [0, 30]");
      }
      if (beta1->icu_days_7 < 0 || beta1->icu_days_7 > kIcuCensor) {
        throw QueryFieldError("beta1.icu_days_7", "must be an integer in [0, 7]");
      }
    }
    if (r1 && *r1 != 0 && *r1 != 1) throw QueryFieldError("r1", "must be 0 or 1");
    if (tau_p && !(std::isfinite(*tau_p) && *tau_p >= 0.0)) throw QueryFieldError("tau_p", "must be a finite number >= 0");
    if (tau_m && !(std::isfinite(*tau_m) && *tau_m > 0.0)) throw QueryFieldError("tau_m", "must be a finite number > 0");
    if (n_sequences < 1 || n_sequences > kMaxQuerySequences) {
      throw QueryFieldError("n_sequences", "must lie in [1, " + std::to_string(kMaxQuerySequences) + "]");
    }
    if (n_posterior_draws < 1) throw QueryFieldError("n_posterior_draws", "must be >= 1");
    if (limits.max_events < 1) throw QueryFieldError("max_events", "must be >= 1");

    const std::string k(to_string(kind));
    auto require = [&](bool present, const char* field) {
      if (!present) throw QueryFieldError(field, "required for kind " + k, true);
    };
    auto forbid = [&](bool present, const char* field) {
      if (present) throw QueryFieldError(field, "not used by kind " + k, true);
    };
    switch (kind) {
      case QueryKind::admission_risk:
        forbid(beta1.has_value(), "beta1");
        forbid(r1.has_value(), "r1");
        forbid(tau_p.has_value(), "tau_p");
        forbid(tau_m.has_value(), "tau_m");
        break;
      case QueryKind::extended_stay_risk:
        require(beta1.has_value(), "beta1");
        require(r1.has_value(), "r1");
        require(tau_p.has_value(), "tau_p");
        require(tau_m.has_value(), "tau_m");
        break;
      case QueryKind::retest_now:
        require(beta1.has_value(), "beta1");
        require(r1.has_value(), "r1");
        require(tau_p.has_value(), "tau_p");
        forbid(tau_m.has_value(), "tau_m");
        break;
      case QueryKind::deisolation:
        require(beta1.has_value(), "beta1");
        require(tau_p.has_value(), "tau_p");
        forbid(tau_m.has_value(), "tau_m");
        if (r1 && *r1 != 0) throw QueryFieldError("r1", "deisolation follows a negative test (r1 = 0)", true);
        if (!alpha.mrsa_positive_past_90d) {
          throw QueryFieldError("alpha.mrsa_positive_past_90d", "deisolation applies to previously positive patients",
                                true);
        }
        break;
    }
  }
};

struct QueryResult {
  double estimate = 0.0;
  double mc_stderr = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
  std::int64_t n_effective = 0;  ///< sequences the estimate averages over
  int n_bundles = 0;
  std::optional<double> acceptance_rate;  ///< rejection queries only
};

namespace detail {

inline constexpr std::uint64_t kSequenceStreamSalt = 0x5e9c0de5a1u;

/// Linear-interpolation percentile of a sorted sample, q in [0, 1].
inline double percentile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BundleTally {
  std::int64_t hits = 0;
  std::int64_t trials = 0;
};

/// Outcome of one simulated sequence: nullopt if rejected, else the indicator.
using SequenceFn = std::function<std::optional<bool>(Rng&, const ThetaBundle&)>;

/// Runs n sequences split over bundles, fanning bundles out over `workers`
/// threads. Tallies are returned in bundle order.
inline std::vector<BundleTally> run_bundles(const Registry& registry, int n, int n_bundles, std::uint64_t seed,
                                            int workers, const SequenceFn& fn) {
  const int b_count = std::max(1, std::min(n_bundles, n));
  std::vector<BundleTally> tallies(static_cast<std::size_t>(b_count));
  const std::uint64_t seq_seed = Rng::mix64(seed ^ kSequenceStreamSalt);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int b = next++; b < b_count; b = next++) {
      Rng theta_rng = Rng::for_stream(seed, static_cast<std::uint64_t>(b));
      const ThetaBundle theta = ThetaBundle::draw(theta_rng, registry);
      const std::int64_t begin = static_cast<std::int64_t>(n) * b / b_count;
      const std::int64_t end = static_cast<std::int64_t>(n) * (b + 1) / b_count;
      BundleTally& t = tallies[static_cast<std::size_t>(b)];
      for (std::int64_t i = begin; i < end; ++i) {
        Rng rng = Rng::for_stream(seq_seed, static_cast<std::uint64_t>(i));
        const std::optional<bool> hit = fn(rng, theta);
        if (!hit) continue;
        ++t.trials;
        t.hits += *hit ? 1 : 0;
      }
    }
  };
  const int w = std::max(1, std::min(workers, b_count));
  if (w == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(work);
  }
  return tallies;
}

inline QueryResult summarize(const std::vector<BundleTally>& tallies) {
  QueryResult r;
  std::int64_t hits = 0, trials = 0;
  std::vector<double> means;
  for (const BundleTally& t : tallies) {
    hits += t.hits;
    trials += t.trials;
    if (t.trials > 0) means.push_back(static_cast<double>(t.hits) / static_cast<double>(t.trials));
  }
  r.n_effective = trials;
  r.n_bundles = static_cast<int>(tallies.size());
  if (trials == 0) return r;
  const double p = static_cast<double>(hits) / static_cast<double>(trials);
  r.estimate = p;
  r.mc_stderr = std::sqrt(p * (1 - p) / static_cast<double>(trials));
  std::sort(means.begin(), means.end());
  r.band_lo = percentile_sorted(means, 0.05);
  r.band_hi = percentile_sorted(means, 0.95);
  return r;
}

inline void expect_kind(const QuerySpec& spec, QueryKind kind) {
  if (spec.kind != kind) {
    throw QueryFieldError("kind", "expected " + std::string(to_string(kind)) + ", got " +
                                      std::string(to_string(spec.kind)),
                          true);
  }
  spec.validate();
}

}  // namespace detail

/// Deisolation indicator over the events generated after a negative test:
/// the next test is a NARE, it is negative, and nothing later is positive.
/// Because cultures are always positive this equals "no generated event is
/// positive".
inline bool deisolation_indicator(const SimulatedSequence& seq) {
  if (seq.events.empty()) return false;
  const TestEvent& next = seq.events.front();
  return next.test_type == TestType::nare && next.result == 0 && !seq.any_positive();
}

/// P(any positive test during the stay).
inline QueryResult estimate_admission_risk(const Registry& registry, const QuerySpec& spec, int workers = 1) {
  detail::expect_kind(spec, QueryKind::admission_risk);
  return detail::summarize(detail::run_bundles(
      registry, spec.n_sequences, spec.n_posterior_draws, spec.seed, workers,
      [&](Rng& rng, const ThetaBundle& theta) -> std::optional<bool> {
        return simulate_full(rng, registry, spec.alpha, spec.limits, &theta).any_positive();
      }));
}

/// P(a positive test within the next tau_m days of stay), given the last
/// result r1 from tau_p days ago.
inline QueryResult estimate_extended_stay_risk(const Registry& registry, const QuerySpec& spec, int workers = 1) {
  detail::expect_kind(spec, QueryKind::extended_stay_risk);
  return detail::summarize(detail::run_bundles(
      registry, spec.n_sequences, spec.n_posterior_draws, spec.seed, workers,
      [&](Rng& rng, const ThetaBundle& theta) -> std::optional<bool> {
        return simulate_partial_a(rng, registry, spec.alpha, *spec.beta1, *spec.r1, *spec.tau_p, *spec.tau_m,
                                  spec.limits, &theta)
            .any_positive();
      }));
}

/// P(positive) for a NARE done now, tau_p days after the last test.
inline QueryResult estimate_retest_now(const Registry& registry, const QuerySpec& spec, int workers = 1) {
  detail::expect_kind(spec, QueryKind::retest_now);
  return detail::summarize(detail::run_bundles(
      registry, spec.n_sequences, spec.n_posterior_draws, spec.seed, workers,
      [&](Rng& rng, const ThetaBundle& theta) -> std::optional<bool> {
        return simulate_partial_b(rng, registry, spec.alpha, *spec.beta1, *spec.r1, *spec.tau_p, &theta).result == 1;
      }));
}

/// P(next NARE negative and no later positive) after a negative test.
inline QueryResult estimate_deisolation(const Registry& registry, const QuerySpec& spec, int workers = 1) {
  detail::expect_kind(spec, QueryKind::deisolation);
  return detail::summarize(detail::run_bundles(
      registry, spec.n_sequences, spec.n_posterior_draws, spec.seed, workers,
      [&](Rng& rng, const ThetaBundle& theta) -> std::optional<bool> {
        return deisolation_indicator(
            simulate_partial_c(rng, registry, spec.alpha, *spec.beta1, *spec.tau_p, spec.limits, &theta));
      }));
}

inline QueryResult run_query(const Registry& registry, const QuerySpec& spec, int workers = 1) {
  switch (spec.kind) {
    case QueryKind::admission_risk: return estimate_admission_risk(registry, spec, workers);
    case QueryKind::extended_stay_risk: return estimate_extended_stay_risk(registry, spec, workers);
    case QueryKind::retest_now: return estimate_retest_now(registry, spec, workers);
    case QueryKind::deisolation: return estimate_deisolation(registry, spec, workers);
  }
  throw QueryFieldError("kind", "unknown query kind");
}

using SequencePredicate = std::function<bool(const SimulatedSequence&)>;

struct RejectionSpec {
  AdmissionFeatures alpha;
  int n_sequences = 100000;
  int n_posterior_draws = 50;
  std::uint64_t seed = 0;
  SimLimits limits;
};

/// Reference estimator: simulate whole sequences, keep those satisfying
/// `conditioner`, report the mean of `predicate` over the survivors.
inline QueryResult rejection_query(const Registry& registry, const RejectionSpec& spec,
                                   const SequencePredicate& predicate, const SequencePredicate& conditioner,
                                   int workers = 1) {
  if (spec.n_sequences < 1) throw QueryFieldError("n_sequences", "must be >= 1");
  spec.alpha.validate();
  const auto tallies = detail::run_bundles(
      registry, spec.n_sequences, spec.n_posterior_draws, spec.seed, workers,
      [&](Rng& rng, const ThetaBundle& theta) -> std::optional<bool> {
        const SimulatedSequence seq = simulate_full(rng, registry, spec.alpha, spec.limits, &theta);
        if (!conditioner(seq)) return std::nullopt;
        return predicate(seq);
      });
  QueryResult r = detail::summarize(tallies);
  const auto accepted = static_cast<std::size_t>(r.n_effective);
  r.acceptance_rate = static_cast<double>(accepted) / spec.n_sequences;
  if (accepted < kMinAccepted) throw InsufficientAcceptance(accepted, static_cast<std::size_t>(spec.n_sequences));
  return r;
}

/// Events of a full sequence after its first test, as a partial simulator
/// would report them.
inline SimulatedSequence after_first(const SimulatedSequence& seq) {
  SimulatedSequence out;
  out.alpha = seq.alpha;
  out.terminated_by = seq.terminated_by;
  if (seq.events.size() > 1) out.events.assign(seq.events.begin() + 1, seq.events.end());
  return out;
}

// -------------------------------------------------------------------- sweeps

enum class SweepAxis { tau_m, tau_p };

inline std::string_view to_string(SweepAxis a) { return a == SweepAxis::tau_m ? "tau_m" : "tau_p"; }

inline constexpr std::size_t kMaxSweepPoints = 200;

struct SweepPoint {
  double x = 0.0;
  QueryResult result;
};

/// Runs `base` at every grid value of `axis`, all under the base seed.
inline std::vector<SweepPoint> sweep(const Registry& registry, const QuerySpec& base, SweepAxis axis,
                                     const std::vector<double>& grid, int workers = 1) {
  if (grid.empty()) throw QueryFieldError("grid", "must contain at least one point");
  if (grid.size() > kMaxSweepPoints) {
    throw QueryFieldError("grid", "at most " + std::to_string(kMaxSweepPoints) + " points");
  }
  const bool ok = axis == SweepAxis::tau_p ? base.kind != QueryKind::admission_risk
                                           : base.kind == QueryKind::extended_stay_risk;
  if (!ok) {
    throw QueryFieldError("axis", std::string(to_string(axis)) + " cannot vary for kind " +
                                      std::string(to_string(base.kind)),
                          true);
  }
  std::vector<SweepPoint> out;
  out.reserve(grid.size());
  for (double x : grid) {
    QuerySpec s = base;
    (axis == SweepAxis::tau_m ? s.tau_m : s.tau_p) = x;
    out.push_back(SweepPoint{x, run_query(registry, s, workers)});
  }
  return out;
}

// ---------------------------------------------------------------------- JSON

namespace detail {

using Json = nlohmann::json;

inline void check_known_fields(const Json& j, std::string_view prefix, std::initializer_list<std::string_view> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw QueryFieldError(std::string(prefix) + it.key(), "unknown field");
    }
  }
}

inline bool json_bit(const Json& j, const std::string& field) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer() && (j.get<std::int64_t>() == 0 || j.get<std::int64_t>() == 1)) return j.get<std::int64_t>() == 1;
  throw QueryFieldError(field, "must be a boolean");
}

inline double json_number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw QueryFieldError(field, "must be a number");
  return j.get<double>();
}

inline std::int64_t json_int(const Json& j, const std::string& field) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
  }
  throw QueryFieldError(field, "must be an integer");
}

inline int json_int32(const Json& j, const std::string& field) {
  const std::int64_t v = json_int(j, field);
  if (v < INT32_MIN || v > INT32_MAX) throw QueryFieldError(field, "out of range");
  return static_cast<int>(v);
}

}  // namespace detail

inline nlohmann::json to_json(const AdmissionFeatures& a) {
  return {{"gender", a.gender},
          {"age_years", a.age_years},
          {"admission_type", to_string(a.admission_type)},
          {"from_healthcare_facility", a.from_healthcare_facility},
          {"cerebrovascular_history", a.cerebrovascular_history},
          {"diabetes", a.diabetes},
          {"hospitalized_past_90d", a.hospitalized_past_90d},
          {"mrsa_positive_past_90d", a.mrsa_positive_past_90d}};
}

inline nlohmann::json to_json(const TestTimeFeatures& b) {
  return {{"ab_days_30", b.ab_days_30}, {"icu_days_7", b.icu_days_7}, {"dialysis_7d", b.dialysis_7d}};
}

/// Missing bits default to false; age is required.
inline AdmissionFeatures alpha_from_json(const nlohmann::json& j, std::string_view prefix = "alpha.") {
  using namespace detail;
  const std::string p(prefix);
  if (!j.is_object()) throw QueryFieldError(p.substr(0, p.size() - 1), "must be an object");
  check_known_fields(j, p,
                     {"gender", "age_years", "admission_type", "from_healthcare_facility", "cerebrovascular_history",
                      "diabetes", "hospitalized_past_90d", "mrsa_positive_past_90d"});
  AdmissionFeatures a;
  if (!j.contains("age_years")) throw QueryFieldError(p + "age_years", "required");
  a.age_years = json_number(j["age_years"], p + "age_years");
  if (j.contains("admission_type")) {
    if (!j["admission_type"].is_string()) throw QueryFieldError(p + "admission_type", "must be a string");
    try {
      a.admission_type = parse_admission_type(j["admission_type"].get<std::string>());
    } catch (const DomainError&) {
      throw QueryFieldError(p + "admission_type", "must be one of emergency, elective, newborn, other");
    }
  }
  auto bit = [&](const char* name, bool& out) {
    if (j.contains(name)) out = json_bit(j[name], p + name);
  };
  bit("gender", a.gender);
  bit("from_healthcare_facility", a.from_healthcare_facility);
  bit("cerebrovascular_history", a.cerebrovascular_history);
  bit("diabetes", a.diabetes);
  bit("hospitalized_past_90d", a.hospitalized_past_90d);
  bit("mrsa_positive_past_90d", a.mrsa_positive_past_90d);
  return a;
}

inline TestTimeFeatures beta_from_json(const nlohmann::json& j, std::string_view prefix = "beta1.") {
  using namespace detail;
  const std::string p(prefix);
  if (!j.is_object()) throw QueryFieldError(p.substr(0, p.size() - 1), "must be an object");
  check_known_fields(j, p, {"ab_days_30", "icu_days_7", "dialysis_7d"});
  TestTimeFeatures b;
  if (j.contains("ab_days_30")) b.ab_days_30 = json_int32(j["ab_days_30"], p + "ab_days_30");
  if (j.contains("icu_days_7")) b.icu_days_7 = json_int32(j["icu_days_7"], p + "icu_days_7");
  if (j.contains("dialysis_7d")) b.dialysis_7d = json_bit(j["dialysis_7d"], p + "dialysis_7d");
  return b;
}

/// Parses and validates a query document. A missing seed leaves
/// `seed_present` false so the caller can assign one.
inline QuerySpec query_from_json(const nlohmann::json& j, bool* seed_present = nullptr) {
  using namespace detail;
  if (!j.is_object()) throw QueryFieldError("body", "must be a JSON object");
  check_known_fields(j, "", {"kind", "alpha", "beta1", "r1", "tau_p", "tau_m", "n_sequences", "n_posterior_draws",
                             "seed", "max_events"});
  QuerySpec s;
  if (!j.contains("kind") || !j["kind"].is_string()) throw QueryFieldError("kind", "required string");
  const auto kind = parse_query_kind(j["kind"].get<std::string>());
  if (!kind) throw QueryFieldError("kind", "unknown query kind '" + j["kind"].get<std::string>() + "'");
  s.kind = *kind;
  if (!j.contains("alpha")) throw QueryFieldError("alpha", "required");
  s.alpha = alpha_from_json(j["alpha"]);
  if (j.contains("beta1")) s.beta1 = beta_from_json(j["beta1"]);
  if (j.contains("r1")) s.r1 = json_int32(j["r1"], "r1");
  if (j.contains("tau_p")) s.tau_p = json_number(j["tau_p"], "tau_p");
  if (j.contains("tau_m")) s.tau_m = json_number(j["tau_m"], "tau_m");
  if (j.contains("n_sequences")) s.n_sequences = json_int32(j["n_sequences"], "n_sequences");
  if (j.contains("n_posterior_draws")) s.n_posterior_draws = json_int32(j["n_posterior_draws"], "n_posterior_draws");
  if (j.contains("max_events")) s.limits.max_events = json_int32(j["max_events"], "max_events");
  if (seed_present) *seed_present = j.contains("seed");
  if (j.contains("seed")) {
    const Json& v = j["seed"];
    if (v.is_number_unsigned()) {
      s.seed = v.get<std::uint64_t>();
    } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      s.seed = static_cast<std::uint64_t>(v.get<std::int64_t>());
    } else {
      throw QueryFieldError("seed", "must be a non-negative integer");
    }
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const QuerySpec& s) {
  nlohmann::json j = {{"kind", to_string(s.kind)},
                      {"alpha", to_json(s.alpha)},
                      {"n_sequences", s.n_sequences},
                      {"n_posterior_draws", s.n_posterior_draws},
                      {"seed", s.seed},
                      {"max_events", s.limits.max_events}};
  if (s.beta1) j["beta1"] = to_json(*s.beta1);
  if (s.r1) j["r1"] = *s.r1;
  if (s.tau_p) j["tau_p"] = *s.tau_p;
  if (s.tau_m) j["tau_m"] = *s.tau_m;
  return j;
}

inline nlohmann::json to_json(const QueryResult& r) {
  nlohmann::json j = {{"estimate", r.estimate},
                      {"mc_stderr", r.mc_stderr},
                      {"posterior_band", {r.band_lo, r.band_hi}},
                      {"n_effective", r.n_effective},
                      {"n_bundles", r.n_bundles}};
  if (r.acceptance_rate) j["acceptance_rate"] = *r.acceptance_rate;
  return j;
}

}  // namespace genhai
