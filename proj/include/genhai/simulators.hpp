#pragma once

// Sequence simulators: the full generative program and its three conditional
// variants (delay-truncated with a stay horizon, intervened immediate retest,
// and negative-first continuation).
//
// Delays are sampled conditioned on the beta of the test that precedes them.
// Partial simulators return only the events they generate; the delay_before
// of the first generated event is measured from the known first test.

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "genhai/error.hpp"
#include "genhai/patient_model.hpp"
#include "genhai/rng.hpp"
#include "genhai/subprograms.hpp"

namespace genhai {

enum class TestType { culture = 0, nare = 1 };

inline std::string_view to_string(TestType t) { return t == TestType::culture ? "culture" : "nare"; }

inline TestType parse_test_type(std::string_view s) {
  if (s == "culture") return TestType::culture;
  if (s == "nare") return TestType::nare;
  throw DomainError("unknown test_type '" + std::string(s) + "'");
}

struct TestEvent {
  TestType test_type = TestType::nare;
  int result = 0;
  double delay_before = 0.0;  ///< days since the previous test, 0 for a sequence's first test
  TestTimeFeatures beta;

  bool operator==(const TestEvent&) const = default;
};

enum class Termination { cont_zero, horizon, cap };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::cont_zero: return "cont_zero";
    case Termination::horizon: return "horizon";
    case Termination::cap: return "cap";
  }
  return "?";
}

struct SimulatedSequence {
  AdmissionFeatures alpha;
  std::vector<TestEvent> events;
  Termination terminated_by = Termination::cont_zero;

  bool any_positive() const {
    for (const TestEvent& e : events) {
      if (e.result == 1) return true;
    }
    return false;
  }

  bool operator==(const SimulatedSequence&) const = default;
};

struct SimLimits {
  int max_events = 200;

  void validate() const {
    if (max_events < 1) throw DomainError("max_events must be >= 1");
  }
};

/// One constrained parameter vector per sub-program. Passing a bundle to a
/// simulator fixes the parameters for the whole sequence instead of redrawing
/// them from the posterior at every sub-program call.
struct ThetaBundle {
  std::array<std::vector<double>, kNumSubPrograms> theta;

  static ThetaBundle draw(Rng& rng, const Registry& registry) {
    ThetaBundle b;
    for (SubProgramId id : kAllSubPrograms) b.theta[index_of(id)] = draw_theta(rng, at(registry, id));
    return b;
  }

  static ThetaBundle posterior_mean(const Registry& registry) {
    ThetaBundle b;
    for (SubProgramId id : kAllSubPrograms) {
      const FittedSubProgram& f = at(registry, id);
      b.theta[index_of(id)] = constrain(f.posterior.mean, f.spec);
    }
    return b;
  }

  std::span<const double> operator[](SubProgramId id) const { return theta[index_of(id)]; }
};

namespace detail {

/// Draws sub-program outcomes for one sequence, either hierarchically or at a
/// fixed parameter bundle.
class StepSampler {
 public:
  StepSampler(Rng& rng, const Registry& registry, const ThetaBundle* bundle)
      : rng_(rng), registry_(registry), bundle_(bundle) {}

  double draw(SubProgramId id, const StepContext& ctx) {
    conditioning_vector_into(id, ctx, x_);
    const FittedSubProgram& f = at(registry_, id);
    if (bundle_) return sample_outcome(rng_, (*bundle_)[id], f.spec, x_);
    const std::vector<double> theta = draw_theta(rng_, f);
    return sample_outcome(rng_, theta, f.spec, x_);
  }

  double draw_truncated(SubProgramId id, const StepContext& ctx, double lower) {
    conditioning_vector_into(id, ctx, x_);
    const FittedSubProgram& f = at(registry_, id);
    if (bundle_) return sample_outcome_truncated(rng_, (*bundle_)[id], f.spec, x_, lower);
    const std::vector<double> theta = draw_theta(rng_, f);
    return sample_outcome_truncated(rng_, theta, f.spec, x_, lower);
  }

  /// Samples the beta chain ab -> icu -> dia into `ctx`.
  TestTimeFeatures draw_beta(StepContext& ctx, bool first) {
    ctx.ab = static_cast<int>(draw(first ? SubProgramId::beta1_ab : SubProgramId::betai_ab, ctx));
    ctx.icu = static_cast<int>(draw(first ? SubProgramId::beta1_icu : SubProgramId::betai_icu, ctx));
    ctx.dia = draw(first ? SubProgramId::beta1_dia : SubProgramId::betai_dia, ctx) != 0.0;
    return TestTimeFeatures{*ctx.ab, *ctx.icu, *ctx.dia};
  }

  /// Test type then result; cultures are positive by construction.
  void draw_test(StepContext& ctx, bool first, TestEvent& ev) {
    const bool nare = draw(first ? SubProgramId::t1 : SubProgramId::t_i, ctx) != 0.0;
    ev.test_type = nare ? TestType::nare : TestType::culture;
    ev.result = nare ? static_cast<int>(draw(first ? SubProgramId::r1 : SubProgramId::r_i, ctx)) : 1;
    ctx.r = ev.result;
  }

  bool draw_cont(const StepContext& ctx) { return draw(SubProgramId::cont, ctx) != 0.0; }

  double draw_delay(const AdmissionFeatures& alpha, const TestEvent& prev, std::optional<double> lower = {}) {
    StepContext ctx;
    ctx.alpha = alpha;
    ctx.beta_prev = prev.beta;
    const SubProgramId id = prev.result == 0 ? SubProgramId::d_neg : SubProgramId::d_pos;
    return lower ? draw_truncated(id, ctx, *lower) : draw(id, ctx);
  }

  /// Context of a follow-up test: current beta chain still empty.
  static StepContext follow_up(const AdmissionFeatures& alpha, const TestEvent& prev, double delay) {
    StepContext ctx;
    ctx.alpha = alpha;
    ctx.beta_prev = prev.beta;
    ctx.r_prev = prev.result;
    ctx.d_prev = delay;
    return ctx;
  }

  /// Beta chain, test type and result of a follow-up test.
  TestEvent draw_follow_up(const AdmissionFeatures& alpha, const TestEvent& prev, double delay, StepContext& ctx) {
    ctx = follow_up(alpha, prev, delay);
    TestEvent ev;
    ev.delay_before = delay;
    ev.beta = draw_beta(ctx, false);
    draw_test(ctx, false, ev);
    return ev;
  }

 private:
  Rng& rng_;
  const Registry& registry_;
  const ThetaBundle* bundle_;
  std::vector<double> x_;
};

/// The continuation loop shared by the full simulator and the
/// negative-first variant: repeats delay -> test -> cont until cont is 0 or
/// the cap is hit. `ctx` holds the context of the last emitted event.
inline void continue_sequence(StepSampler& s, SimulatedSequence& seq, StepContext& ctx, const SimLimits& limits) {
  while (s.draw_cont(ctx)) {
    if (static_cast<int>(seq.events.size()) >= limits.max_events) {
      seq.terminated_by = Termination::cap;
      return;
    }
    const TestEvent& prev = seq.events.back();
    const double d = s.draw_delay(seq.alpha, prev);
    TestEvent ev = s.draw_follow_up(seq.alpha, prev, d, ctx);
    seq.events.push_back(ev);
  }
  seq.terminated_by = Termination::cont_zero;
}

inline void check_tau(double tau, std::string_view name, bool strictly_positive) {
  if (!std::isfinite(tau) || tau < 0.0 || (strictly_positive && tau == 0.0)) {
    throw DomainError(std::string(name) + (strictly_positive ? " must be > 0" : " must be >= 0"));
  }
}

inline TestEvent known_first(const TestTimeFeatures& beta1, int r1) {
  beta1.validate();
  if (r1 != 0 && r1 != 1) throw DomainError("r1 must be 0 or 1");
  TestEvent ev;
  ev.beta = beta1;
  ev.result = r1;
  return ev;
}

}  // namespace detail

/// Simulates a whole hospitalization's test sequence given admission features.
inline SimulatedSequence simulate_full(Rng& rng, const Registry& registry, const AdmissionFeatures& alpha,
                                       const SimLimits& limits = {}, const ThetaBundle* theta = nullptr) {
  limits.validate();
  detail::StepSampler s(rng, registry, theta);
  SimulatedSequence seq;
  seq.alpha = alpha;
  StepContext ctx;
  ctx.alpha = alpha;
  TestEvent first;
  first.beta = s.draw_beta(ctx, true);
  s.draw_test(ctx, true, first);
  seq.events.push_back(first);
  detail::continue_sequence(s, seq, ctx, limits);
  return seq;
}

/// Continuation after a known test with result r1 done tau_p days ago, for a
/// patient staying tau_m more days. The next delay is drawn conditioned on
/// being at least tau_p; simulation stops once the remaining stay is used up.
/// A test landing exactly on the end of the stay is kept.
inline SimulatedSequence simulate_partial_a(Rng& rng, const Registry& registry, const AdmissionFeatures& alpha,
                                            const TestTimeFeatures& beta1, int r1, double tau_p, double tau_m,
                                            const SimLimits& limits = {}, const ThetaBundle* theta = nullptr) {
  limits.validate();
  detail::check_tau(tau_p, "tau_p", false);
  detail::check_tau(tau_m, "tau_m", true);
  const TestEvent known = detail::known_first(beta1, r1);
  detail::StepSampler s(rng, registry, theta);
  SimulatedSequence seq;
  seq.alpha = alpha;

  StepContext ctx;
  ctx.alpha = alpha;
  ctx.ab = beta1.ab_days_30;
  ctx.icu = beta1.icu_days_7;
  ctx.dia = beta1.dialysis_7d;
  ctx.r = r1;
  if (!s.draw_cont(ctx)) {
    seq.terminated_by = Termination::cont_zero;
    return seq;
  }
  const double d1 = s.draw_delay(alpha, known, tau_p);
  if (d1 > tau_p + tau_m) {
    seq.terminated_by = Termination::horizon;
    return seq;
  }
  double remaining = tau_p + tau_m - d1;
  const TestEvent* prev = &known;
  double d = d1;
  for (;;) {
    if (static_cast<int>(seq.events.size()) >= limits.max_events) {
      seq.terminated_by = Termination::cap;
      return seq;
    }
    seq.events.push_back(s.draw_follow_up(alpha, *prev, d, ctx));
    prev = &seq.events.back();
    if (!s.draw_cont(ctx)) {
      seq.terminated_by = Termination::cont_zero;
      return seq;
    }
    d = s.draw_delay(alpha, *prev);
    remaining -= d;
    if (remaining < 0.0) {
      seq.terminated_by = Termination::horizon;
      return seq;
    }
  }
}

/// Next test if the patient were retested tau_p days after a known test with
/// result r1: the delay is set, not sampled, and the test is a NARE.
inline TestEvent simulate_partial_b(Rng& rng, const Registry& registry, const AdmissionFeatures& alpha,
                                    const TestTimeFeatures& beta1, int r1, double tau_p,
                                    const ThetaBundle* theta = nullptr) {
  detail::check_tau(tau_p, "tau_p", false);
  const TestEvent known = detail::known_first(beta1, r1);
  detail::StepSampler s(rng, registry, theta);
  StepContext ctx = detail::StepSampler::follow_up(alpha, known, tau_p);
  TestEvent ev;
  ev.delay_before = tau_p;
  ev.beta = s.draw_beta(ctx, false);
  ev.test_type = TestType::nare;
  ev.result = static_cast<int>(s.draw(SubProgramId::r_i, ctx));
  return ev;
}

/// Rest of the stay after a known negative test done tau_p days ago, given
/// that at least one more test happens. No stay horizon applies.
inline SimulatedSequence simulate_partial_c(Rng& rng, const Registry& registry, const AdmissionFeatures& alpha,
                                            const TestTimeFeatures& beta1, double tau_p,
                                            const SimLimits& limits = {}, const ThetaBundle* theta = nullptr) {
  limits.validate();
  detail::check_tau(tau_p, "tau_p", false);
  const TestEvent known = detail::known_first(beta1, 0);
  detail::StepSampler s(rng, registry, theta);
  SimulatedSequence seq;
  seq.alpha = alpha;
  StepContext ctx;
  const double d1 = s.draw_delay(alpha, known, tau_p);
  seq.events.push_back(s.draw_follow_up(alpha, known, d1, ctx));
  detail::continue_sequence(s, seq, ctx, limits);
  return seq;
}

}  // namespace genhai
