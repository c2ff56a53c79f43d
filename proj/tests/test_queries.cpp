#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "genhai/queries.hpp"
#include "support.hpp"

using namespace genhai;
using namespace genhai::testing;
using S = SubProgramId;

namespace {

AdmissionFeatures isolated_patient() {
  AdmissionFeatures a;
  a.age_years = 58;
  a.mrsa_positive_past_90d = true;
  return a;
}

QuerySpec admission(int n, std::uint64_t seed = 1) {
  QuerySpec q;
  q.kind = QueryKind::admission_risk;
  q.alpha = isolated_patient();
  q.n_sequences = n;
  q.seed = seed;
  return q;
}

QuerySpec extended(double tau_m, int n, std::uint64_t seed = 2) {
  QuerySpec q = admission(n, seed);
  q.kind = QueryKind::extended_stay_risk;
  q.beta1 = TestTimeFeatures{};
  q.r1 = 0;
  q.tau_p = 1.0;
  q.tau_m = tau_m;
  return q;
}

QuerySpec retest(int r1, double tau_p, int n, std::uint64_t seed = 3) {
  QuerySpec q = admission(n, seed);
  q.kind = QueryKind::retest_now;
  q.beta1 = TestTimeFeatures{};
  q.r1 = r1;
  q.tau_p = tau_p;
  return q;
}

QuerySpec deisolation(double tau_p, int n, std::uint64_t seed = 4) {
  QuerySpec q = admission(n, seed);
  q.kind = QueryKind::deisolation;
  q.beta1 = TestTimeFeatures{};
  q.tau_p = tau_p;
  return q;
}

Registry widened(Registry reg, double scale) {
  for (auto& f : reg) f.posterior = GaussianChol::isotropic(f.posterior.mean, scale);
  return reg;
}

void expect_within(const QueryResult& r, double truth, const char* what) {
  EXPECT_LT(std::abs(r.estimate - truth), 3 * r.mc_stderr + 1e-12)
      << what << ": " << r.estimate << " vs " << truth << " (se " << r.mc_stderr << ")";
}

void expect_agree(const QueryResult& a, const QueryResult& b, const char* what) {
  const double se = std::sqrt(a.mc_stderr * a.mc_stderr + b.mc_stderr * b.mc_stderr);
  EXPECT_LT(std::abs(a.estimate - b.estimate), 3 * se) << what << ": " << a.estimate << " vs " << b.estimate;
}

}  // namespace

TEST(AdmissionRisk, AllNegativeIsZero) {
  ThetaTable t = neutral_theta();
  pin_bernoulli(t, S::t1, true);
  pin_bernoulli(t, S::r1, false);
  pin_bernoulli(t, S::cont, false);
  const QueryResult r = estimate_admission_risk(point_mass_registry(t), admission(2000));
  EXPECT_EQ(r.estimate, 0.0);
  EXPECT_EQ(r.mc_stderr, 0.0);
  EXPECT_EQ(r.n_effective, 2000);
}

TEST(AdmissionRisk, CultureFirstIsOne) {
  ThetaTable t = neutral_theta();
  pin_bernoulli(t, S::t1, false);
  EXPECT_EQ(estimate_admission_risk(point_mass_registry(t), admission(2000)).estimate, 1.0);
}

TEST(AdmissionRisk, MatchesEnumeration) {
  TwoStepRig rig;
  const QueryResult r = estimate_admission_risk(rig.registry(), admission(40000));
  expect_within(r, rig.admission_risk(), "admission");
  EXPECT_LE(r.band_lo, r.band_hi);
}

TEST(AdmissionRisk, StderrShrinksWithRootN) {
  TwoStepRig rig;
  const Registry reg = rig.registry();
  const double s1 = estimate_admission_risk(reg, admission(20000)).mc_stderr;
  const double s2 = estimate_admission_risk(reg, admission(40000)).mc_stderr;
  EXPECT_NEAR(s1 / s2, std::sqrt(2.0), 0.1 * std::sqrt(2.0));
}

TEST(AdmissionRisk, WorkerCountDoesNotChangeResult) {
  const Registry reg = widened(TwoStepRig{}.registry(), 0.2);
  const QueryResult a = estimate_admission_risk(reg, admission(6000), 1);
  const QueryResult b = estimate_admission_risk(reg, admission(6000), 3);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.band_lo, b.band_lo);
  EXPECT_EQ(a.band_hi, b.band_hi);
}

TEST(AdmissionRisk, PosteriorSpreadWidensBand) {
  const Registry tight = TwoStepRig{}.registry();
  const Registry wide = widened(tight, 0.5);
  const QueryResult a = estimate_admission_risk(tight, admission(20000));
  const QueryResult b = estimate_admission_risk(wide, admission(20000));
  EXPECT_GT(b.band_hi - b.band_lo, 2 * (a.band_hi - a.band_lo));
  EXPECT_LE(b.band_lo, b.estimate);
  EXPECT_GE(b.band_hi, b.estimate);
}

TEST(ExtendedStay, VanishingHorizonIsZero) {
  ThetaTable t = TwoStepRig{}.theta();
  pin_bernoulli(t, S::cont, true);
  QuerySpec q = extended(1e-9, 2000);
  q.tau_p = 0.0;
  EXPECT_EQ(estimate_extended_stay_risk(point_mass_registry(t), q).estimate, 0.0);
}

TEST(ExtendedStay, MonotoneInHorizonUnderSharedSeeds) {
  Rng rng(5);
  Registry reg;
  for (SubProgramId id : kAllSubPrograms) {
    const SubProgramSpec spec = registry_spec(id);
    reg[index_of(id)] = FittedSubProgram{spec, random_posterior(rng, ParamLayout::for_spec(spec).total_dim, 0.6, 0.1)};
  }
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.75 * i);
  const auto curve = sweep(reg, extended(1.0, 3000), SweepAxis::tau_m, grid);
  ASSERT_EQ(curve.size(), 20u);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].result.estimate, curve[i - 1].result.estimate);
  EXPECT_GT(curve.back().result.estimate, curve.front().result.estimate);
}

TEST(RetestNow, ConstantRisk) {
  ThetaTable t = neutral_theta();
  const QueryResult r = estimate_retest_now(point_mass_registry(t), retest(0, 2.0, 20000));
  expect_within(r, 0.5, "p=0.5");
}

TEST(RetestNow, MatchesClosedForm) {
  TwoStepRig rig;
  for (int r1 = 0; r1 <= 1; ++r1) {
    const QueryResult r = estimate_retest_now(rig.registry(), retest(r1, 3.5, 40000));
    expect_within(r, rig.retest_risk(r1, 3.5), "retest");
  }
}

TEST(RetestNow, DelayWeightControlsTrend) {
  std::vector<double> grid = {0.0, 1.0, 2.0, 4.0, 8.0, 16.0};
  TwoStepRig flat_rig;
  flat_rig.ri_wd = 0.0;
  const auto flat = sweep(flat_rig.registry(), retest(0, 0.0, 5000), SweepAxis::tau_p, grid);
  for (const auto& p : flat) EXPECT_EQ(p.result.estimate, flat.front().result.estimate);

  TwoStepRig rising_rig;
  rising_rig.ri_wd = 0.6;
  const auto rising = sweep(rising_rig.registry(), retest(0, 0.0, 5000), SweepAxis::tau_p, grid);
  for (std::size_t i = 1; i < rising.size(); ++i) EXPECT_GE(rising[i].result.estimate, rising[i - 1].result.estimate);
  EXPECT_GT(rising.back().result.estimate, rising.front().result.estimate + 0.1);
}

TEST(Deisolation, CultureNextIsZero) {
  ThetaTable t = TwoStepRig{}.theta();
  pin_bernoulli(t, S::t_i, false);
  EXPECT_EQ(estimate_deisolation(point_mass_registry(t), deisolation(2.0, 2000)).estimate, 0.0);
}

TEST(Deisolation, AllNegativeSingleNareIsOne) {
  ThetaTable t = TwoStepRig{}.theta();
  pin_bernoulli(t, S::t_i, true);
  pin_bernoulli(t, S::r_i, false);
  pin_bernoulli(t, S::cont, false);
  EXPECT_EQ(estimate_deisolation(point_mass_registry(t), deisolation(2.0, 2000)).estimate, 1.0);
}

TEST(Deisolation, MatchesEnumeration) {
  TwoStepRig rig;
  expect_within(estimate_deisolation(rig.registry(), deisolation(3.0, 40000)), rig.deisolation(), "deisolation");
}

TEST(Deisolation, IndicatorDefinition) {
  SimulatedSequence s;
  EXPECT_FALSE(deisolation_indicator(s));
  s.events.push_back(TestEvent{TestType::nare, 0, 7.0, {}});
  EXPECT_TRUE(deisolation_indicator(s));
  s.events.push_back(TestEvent{TestType::culture, 1, 2.0, {}});
  EXPECT_FALSE(deisolation_indicator(s));
  s.events = {TestEvent{TestType::culture, 1, 7.0, {}}};
  EXPECT_FALSE(deisolation_indicator(s));
}

TEST(Rejection, UnconditionalMatchesAdmissionRisk) {
  TwoStepRig rig;
  const Registry reg = rig.registry();
  RejectionSpec rs{.alpha = isolated_patient(), .n_sequences = 40000, .n_posterior_draws = 50, .seed = 11, .limits = {}};
  const QueryResult rej = rejection_query(reg, rs, [](const SimulatedSequence& s) { return s.any_positive(); },
                                          [](const SimulatedSequence&) { return true; });
  EXPECT_EQ(*rej.acceptance_rate, 1.0);
  expect_agree(rej, estimate_admission_risk(reg, admission(40000)), "rejection vs admission");
}

TEST(Rejection, AgreesWithDeisolation) {
  TwoStepRig rig;
  const Registry reg = rig.registry();
  const double tau_p = 3.0;
  RejectionSpec rs{.alpha = isolated_patient(), .n_sequences = 60000, .n_posterior_draws = 50, .seed = 12, .limits = {}};
  const QueryResult rej = rejection_query(
      reg, rs, [](const SimulatedSequence& s) { return deisolation_indicator(after_first(s)); },
      [&](const SimulatedSequence& s) {
        return s.events.size() >= 2 && s.events[0].result == 0 && s.events[0].beta == TestTimeFeatures{} &&
               s.events[1].delay_before >= tau_p;
      });
  EXPECT_GT(rej.n_effective, 10000);
  expect_agree(rej, estimate_deisolation(reg, deisolation(tau_p, 40000)), "rejection vs deisolation");
  expect_within(rej, rig.deisolation(), "rejection vs enumeration");
}

TEST(Rejection, NeverAcceptedIsAnError) {
  RejectionSpec rs{.alpha = isolated_patient(), .n_sequences = 1000, .n_posterior_draws = 10, .seed = 13, .limits = {}};
  try {
    rejection_query(TwoStepRig{}.registry(), rs, [](const SimulatedSequence&) { return true; },
                    [](const SimulatedSequence&) { return false; });
    FAIL() << "expected InsufficientAcceptance";
  } catch (const InsufficientAcceptance& e) {
    EXPECT_EQ(e.accepted(), 0u);
    EXPECT_EQ(e.acceptance_rate(), 0.0);
  }
}

TEST(QuerySpecValidation, FieldErrors) {
  auto field_of = [](const QuerySpec& q) -> std::pair<std::string, bool> {
    try {
      q.validate();
    } catch (const QueryFieldError& e) {
      return {e.field(), e.kind_mismatch()};
    }
    return {"", false};
  };
  QuerySpec q = admission(10);
  EXPECT_EQ(field_of(q).first, "");
  q.alpha.age_years = 200;
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"alpha.age_years", false}));
  q = admission(0);
  EXPECT_EQ(field_of(q).first, "n_sequences");
  q = admission(10);
  q.tau_m = 3.0;
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"tau_m", true}));
  q = extended(0.0, 10);
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"tau_m", false}));
  q = extended(2.0, 10);
  q.r1.reset();
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"r1", true}));
  q = retest(2, 1.0, 10);
  EXPECT_EQ(field_of(q).first, "r1");
  q = retest(1, -1.0, 10);
  EXPECT_EQ(field_of(q).first, "tau_p");
  q = deisolation(1.0, 10);
  q.r1 = 1;
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"r1", true}));
  q = deisolation(1.0, 10);
  q.alpha.mrsa_positive_past_90d = false;
  EXPECT_EQ(field_of(q), (std::pair<std::string, bool>{"alpha.mrsa_positive_past_90d", true}));
  q = deisolation(1.0, 10);
  q.beta1 = TestTimeFeatures{31, 0, false};
  EXPECT_EQ(field_of(q).first, "beta1.ab_days_30");
  EXPECT_THROW(estimate_retest_now(TwoStepRig{}.registry(), admission(10)), QueryFieldError);
}

TEST(QueryJson, RoundTrip) {
  QuerySpec q = extended(4.5, 1234, 987654321);
  q.alpha.admission_type = AdmissionType::newborn;
  q.beta1 = TestTimeFeatures{12, 3, true};
  const nlohmann::json j = to_json(q);
  bool seeded = false;
  const QuerySpec back = query_from_json(j, &seeded);
  EXPECT_TRUE(seeded);
  EXPECT_EQ(to_json(back), j);
}

TEST(QueryJson, RejectsBadDocuments) {
  auto field_of = [](const nlohmann::json& j) -> std::string {
    try {
      query_from_json(j);
    } catch (const QueryFieldError& e) {
      return e.field();
    }
    return "";
  };
  nlohmann::json ok = {{"kind", "admission_risk"}, {"alpha", {{"age_years", 40}}}};
  EXPECT_EQ(field_of(ok), "");
  bool seeded = true;
  EXPECT_EQ(query_from_json(ok, &seeded).n_sequences, 10000);
  EXPECT_FALSE(seeded);
  auto bad = ok;
  bad["colour"] = 1;
  EXPECT_EQ(field_of(bad), "colour");
  bad = ok;
  bad["alpha"]["gender"] = "male";
  EXPECT_EQ(field_of(bad), "alpha.gender");
  bad = ok;
  bad["alpha"]["admission_type"] = "walk-in";
  EXPECT_EQ(field_of(bad), "alpha.admission_type");
  bad = ok;
  bad["kind"] = "mystery";
  EXPECT_EQ(field_of(bad), "kind");
  bad = ok;
  bad["n_sequences"] = 2.5;
  EXPECT_EQ(field_of(bad), "n_sequences");
  bad = ok;
  bad["seed"] = -3;
  EXPECT_EQ(field_of(bad), "seed");
  bad = ok;
  bad["alpha"].erase("age_years");
  EXPECT_EQ(field_of(bad), "alpha.age_years");
}

TEST(Sweep, Limits) {
  const Registry reg = TwoStepRig{}.registry();
  EXPECT_THROW(sweep(reg, extended(1.0, 10), SweepAxis::tau_m, std::vector<double>(201, 1.0)), QueryFieldError);
  EXPECT_THROW(sweep(reg, extended(1.0, 10), SweepAxis::tau_m, {}), QueryFieldError);
  EXPECT_THROW(sweep(reg, retest(0, 1.0, 10), SweepAxis::tau_m, {1.0}), QueryFieldError);
  const auto one = sweep(reg, extended(1.0, 500), SweepAxis::tau_m, {4.0});
  EXPECT_EQ(one[0].result.estimate, estimate_extended_stay_risk(reg, extended(4.0, 500)).estimate);
}
