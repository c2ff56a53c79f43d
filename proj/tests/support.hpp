#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "genhai/simulators.hpp"
#include "genhai/subprograms.hpp"
#include "genhai/svi.hpp"

namespace genhai::testing {

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = (rng.uniform() * 2 - 1) * scale;
  return v;
}

/// Random features shaped like real conditioning vectors: bits, and a few
/// bounded continuous entries.
inline std::vector<double> random_features(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (i % 3 == 1) ? rng.uniform() : static_cast<double>(rng() & 1);
  return x;
}

/// Draws an outcome in the family support, reasonable for the given
/// constrained parameters.
inline double random_outcome(Rng& rng, const SubProgramSpec& spec) {
  switch (spec.family) {
    case Family::bernoulli: return static_cast<double>(rng() & 1);
    case Family::censored_negbinom: return static_cast<double>(rng() % (*spec.censor_bound + 1));
    default: return std::exp(rng.uniform() * 4 - 1);
  }
}

/// Table of `n` rows with random features and outcomes drawn from the family
/// at constrained parameters `theta`.
inline TrainingTable simulate_table(Rng& rng, const SubProgramSpec& spec, std::span<const double> theta,
                                    std::size_t n) {
  TrainingTable t(spec.id);
  t.input_dim = spec.input_dim;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = random_features(rng, spec.input_dim);
    t.add(x, sample_outcome(rng, theta, spec, x));
  }
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Relative errors below this denominator are measured as absolute errors.
inline constexpr double kGradRelFloor = 1e-2;

/// Compares elbo_estimate gradients on (mean, chol) with central differences
/// of the same estimate under the same seed (so eps is held fixed).
inline GradCheck check_elbo_gradient(const TrainingTable& table, const SubProgramSpec& spec, const GaussianChol& q,
                                     std::uint64_t seed, double h = 1e-5) {
  const Prior prior = Prior::standard(ParamLayout::for_spec(spec));
  std::vector<std::size_t> batch(table.size());
  std::iota(batch.begin(), batch.end(), 0);
  auto eval = [&](const GaussianChol& g) {
    Rng rng(seed);
    return elbo_estimate(rng, table, batch, g, spec, prior);
  };
  const ElboResult base = eval(q);
  const std::size_t d = q.dim();
  GradCheck out;
  auto record = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > out.max_rel_error) out = {rel, analytic, numeric};
  };
  for (std::size_t i = 0; i < d; ++i) {
    GaussianChol up = q, dn = q;
    up.mean[i] += h;
    dn.mean[i] -= h;
    record(base.grad_mean[i], (eval(up).value - eval(dn).value) / (2 * h));
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      GaussianChol up = q, dn = q;
      up.chol[i * d + j] += h;
      dn.chol[i * d + j] -= h;
      record(base.grad_chol[i * d + j], (eval(up).value - eval(dn).value) / (2 * h));
    }
  }
  return out;
}

/// Random posterior with modest scale, lower-triangular factor and positive
/// diagonal well away from zero.
inline GaussianChol random_posterior(Rng& rng, std::size_t d, double mean_scale = 0.5, double chol_scale = 0.1) {
  std::vector<double> mean = random_vector(rng, d, mean_scale);
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) l[i * d + j] = (rng.uniform() * 2 - 1) * chol_scale * 0.3;
    l[i * d + i] = chol_scale * (0.5 + rng.uniform());
  }
  return GaussianChol(std::move(mean), std::move(l));
}

// ------------------------------------------------------------ rigged registries

inline double logit(double p) { return std::log(p / (1 - p)); }

/// Constrained parameters with every coefficient 0 and every positive scalar 1.
inline ThetaTable neutral_theta() {
  ThetaTable t;
  for (SubProgramId id : kAllSubPrograms) {
    const ParamLayout layout = ParamLayout::for_spec(registry_spec(id));
    std::vector<double> v(layout.total_dim, 0.0);
    for (const Slice& s : layout.slices) {
      if (s.log_scale) std::fill(v.begin() + s.offset, v.begin() + s.offset + s.size, 1.0);
    }
    t[index_of(id)] = std::move(v);
  }
  return t;
}

inline void set_param(ThetaTable& t, SubProgramId id, std::string_view slice, double value, std::size_t i = 0) {
  const Slice& s = ParamLayout::for_spec(registry_spec(id)).slice(slice);
  t[index_of(id)].at(s.offset + i) = value;
}

inline std::size_t field_index(SubProgramId id, std::string_view field) {
  const auto layout = conditioning_layout(id);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i] == field) return i;
  }
  throw std::invalid_argument("no field " + std::string(field));
}

inline void set_weight(ThetaTable& t, SubProgramId id, std::string_view field, double w,
                       std::string_view slice = "w") {
  set_param(t, id, slice, w, field_index(id, field));
}

/// Count sub-program pinned at 0 (tiny mean) or at its censor bound (huge
/// mean, negligible overdispersion).
inline void pin_count(ThetaTable& t, SubProgramId id, bool at_bound) {
  set_param(t, id, "c", at_bound ? 50.0 : -800.0);
  set_param(t, id, "log_alpha", 1e-6);
}

inline void pin_bernoulli(ThetaTable& t, SubProgramId id, bool one) { set_param(t, id, "c", one ? 800.0 : -800.0); }

/// Delay sub-programs pinned at fixed values: the positive one at `pos_days`,
/// the negative mixture on its second fixed component (7 days).
inline void pin_delays(ThetaTable& t, double pos_days) {
  set_param(t, SubProgramId::d_pos, "c", std::log(pos_days));
  set_param(t, SubProgramId::d_pos, "log_sigma", 1e-300);
  set_param(t, SubProgramId::d_neg, "c_z2", 60.0);
  for (const char* s : {"log_sigma1", "log_sigma2", "log_sigma3"}) set_param(t, SubProgramId::d_neg, s, 1e-300);
}

/// Registry whose sequences have at most two tests and whose outcome tree is
/// small enough to enumerate: the first beta is pinned at zero, every later
/// beta has ab pinned at 30, and cont has a large negative weight on ab.
struct TwoStepRig {
  double pt1 = 0.7;   ///< P(first test is NARE)
  double pr1 = 0.2;   ///< P(first NARE positive)
  double cont_c = 0.4, cont_wr = -1.0;
  double p_dia = 0.4;  ///< P(dialysis) at the second test
  double ti_c = 1.0, ti_wr = -0.5, ti_wdia = -0.8;
  double ri_c = -1.5, ri_wr = 1.2, ri_wd = 0.3, ri_wdia = 0.7;
  double pos_delay = 2.0;
  static constexpr double neg_delay = 7.0;

  ThetaTable theta() const {
    using S = SubProgramId;
    ThetaTable t = neutral_theta();
    pin_count(t, S::beta1_ab, false);
    pin_count(t, S::beta1_icu, false);
    pin_bernoulli(t, S::beta1_dia, false);
    set_param(t, S::t1, "c", logit(pt1));
    set_param(t, S::r1, "c", logit(pr1));
    set_param(t, S::cont, "c", cont_c);
    set_weight(t, S::cont, "r", cont_wr);
    set_weight(t, S::cont, "beta.ab_over_30", -2000.0);
    pin_delays(t, pos_delay);
    pin_count(t, S::betai_ab, true);
    pin_count(t, S::betai_icu, false);
    set_param(t, S::betai_dia, "c", logit(p_dia));
    set_param(t, S::t_i, "c", ti_c);
    set_weight(t, S::t_i, "r_prev", ti_wr);
    set_weight(t, S::t_i, "beta.dialysis_7d", ti_wdia);
    set_param(t, S::r_i, "c", ri_c);
    set_weight(t, S::r_i, "r_prev", ri_wr);
    set_weight(t, S::r_i, "log1p_d_prev", ri_wd);
    set_weight(t, S::r_i, "beta.dialysis_7d", ri_wdia);
    return t;
  }

  Registry registry() const { return point_mass_registry(theta()); }

  double p_nare_i(int r_prev, int dia) const { return 1 / (1 + std::exp(-(ti_c + ti_wr * r_prev + ti_wdia * dia))); }

  double p_pos_i(int r_prev, double d, int dia) const {
    return 1 / (1 + std::exp(-(ri_c + ri_wr * r_prev + ri_wd * std::log1p(d) + ri_wdia * dia)));
  }

  double p_cont(int r) const { return 1 / (1 + std::exp(-(cont_c + cont_wr * r))); }

  /// P(second test positive | previous result, delay).
  double p_second_positive(int r_prev, double d) const {
    double p = 0.0;
    for (int dia = 0; dia <= 1; ++dia) {
      const double w = dia ? p_dia : 1 - p_dia;
      p += w * ((1 - p_nare_i(r_prev, dia)) + p_nare_i(r_prev, dia) * p_pos_i(r_prev, d, dia));
    }
    return p;
  }

  double admission_risk() const {
    const double p_first_pos = (1 - pt1) + pt1 * pr1;
    const double p_first_neg = pt1 * (1 - pr1);
    return p_first_pos + p_first_neg * p_cont(0) * p_second_positive(0, neg_delay);
  }

  double retest_risk(int r1, double tau_p) const {
    double p = 0.0;
    for (int dia = 0; dia <= 1; ++dia) p += (dia ? p_dia : 1 - p_dia) * p_pos_i(r1, tau_p, dia);
    return p;
  }

  /// Deisolation probability after a negative test with tau_p <= 7: the next
  /// test comes 7 days later and is the last one.
  double deisolation() const {
    double p = 0.0;
    for (int dia = 0; dia <= 1; ++dia) {
      p += (dia ? p_dia : 1 - p_dia) * p_nare_i(0, dia) * (1 - p_pos_i(0, neg_delay, dia));
    }
    return p;
  }
};

}  // namespace genhai::testing
