#pragma once

// GLM-like Bayesian sub-programs. Each sub-program draws its outcome from one
// of four families whose parameters are a link function of w.x + c. The
// posterior over the unconstrained parameter vector is a multivariate normal.
//
// Unconstrained layouts (d = input dimension):
//   bernoulli           w[d] c
//   censored_negbinom   w[d] c log_alpha
//   lognormal           w[d] c log_sigma
//   lognormal_mixture3  w_z1[d] c_z1 w_z2[d] c_z2 w_z3[d] c_z3 w_mu3[d] c_mu3
//                       log_sigma1 log_sigma2 log_sigma3
// Component means mu1, mu2 of the mixture are fixed constants of the spec.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genhai/ad.hpp"
#include "genhai/distributions.hpp"
#include "genhai/error.hpp"
#include "genhai/patient_model.hpp"
#include "genhai/rng.hpp"

namespace genhai {

enum class Family { bernoulli, censored_negbinom, lognormal, lognormal_mixture3 };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::bernoulli: return "bernoulli";
    case Family::censored_negbinom: return "censored_negbinom";
    case Family::lognormal: return "lognormal";
    case Family::lognormal_mixture3: return "lognormal_mixture3";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (Family f : {Family::bernoulli, Family::censored_negbinom, Family::lognormal, Family::lognormal_mixture3}) {
    if (to_string(f) == s) return f;
  }
  throw DomainError("unknown family '" + std::string(s) + "'");
}

/// Default fixed means of the negative-delay mixture: retests after one day
/// and after one week.
inline constexpr std::array<double, 2> kDefaultFixedDelayMeans = {0.0, 1.9459101490553132};  // ln 1, ln 7

struct SubProgramSpec {
  SubProgramId id = SubProgramId::cont;
  Family family = Family::bernoulli;
  std::size_t input_dim = 0;
  std::optional<int> censor_bound;                 ///< censored_negbinom only
  std::optional<std::array<double, 2>> fixed_means;  ///< lognormal_mixture3 only

  std::string_view name() const { return name_of(id); }

  void validate() const {
    if (input_dim == 0) throw DomainError("sub-program input_dim must be positive");
    if (censor_bound.has_value() != (family == Family::censored_negbinom)) {
      throw DomainError(std::string(name()) + ": censor bound present iff family is censored_negbinom");
    }
    if (censor_bound && *censor_bound < 1) throw DomainError("censor bound must be >= 1");
    if (fixed_means.has_value() != (family == Family::lognormal_mixture3)) {
      throw DomainError(std::string(name()) + ": fixed means present iff family is lognormal_mixture3");
    }
  }
};

/// The spec every registry slot uses.
inline SubProgramSpec registry_spec(SubProgramId id,
                                    std::array<double, 2> fixed_means = kDefaultFixedDelayMeans) {
  SubProgramSpec s;
  s.id = id;
  s.input_dim = input_dim(id);
  switch (id) {
    case SubProgramId::beta1_ab:
    case SubProgramId::betai_ab:
      s.family = Family::censored_negbinom;
      s.censor_bound = kAbCensor;
      break;
    case SubProgramId::beta1_icu:
    case SubProgramId::betai_icu:
      s.family = Family::censored_negbinom;
      s.censor_bound = kIcuCensor;
      break;
    case SubProgramId::d_pos: s.family = Family::lognormal; break;
    case SubProgramId::d_neg:
      s.family = Family::lognormal_mixture3;
      s.fixed_means = fixed_means;
      break;
    default: s.family = Family::bernoulli; break;
  }
  return s;
}

// ------------------------------------------------------------------ layout

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool log_scale = false;  ///< stored as log, constrained by exp
};

struct ParamLayout {
  std::size_t total_dim = 0;
  std::vector<Slice> slices;

  static ParamLayout for_spec(const SubProgramSpec& spec) {
    ParamLayout l;
    const std::size_t d = spec.input_dim;
    auto add = [&l](std::string name, std::size_t size, bool log_scale = false) {
      l.slices.push_back(Slice{std::move(name), l.total_dim, size, log_scale});
      l.total_dim += size;
    };
    switch (spec.family) {
      case Family::bernoulli:
        add("w", d);
        add("c", 1);
        break;
      case Family::censored_negbinom:
        add("w", d);
        add("c", 1);
        add("log_alpha", 1, true);
        break;
      case Family::lognormal:
        add("w", d);
        add("c", 1);
        add("log_sigma", 1, true);
        break;
      case Family::lognormal_mixture3:
        for (int k = 1; k <= 3; ++k) {
          add("w_z" + std::to_string(k), d);
          add("c_z" + std::to_string(k), 1);
        }
        add("w_mu3", d);
        add("c_mu3", 1);
        for (int k = 1; k <= 3; ++k) add("log_sigma" + std::to_string(k), 1, true);
        break;
    }
    return l;
  }

  const Slice& slice(std::string_view name) const {
    for (const Slice& s : slices) {
      if (s.name == name) return s;
    }
    throw DomainError("no parameter slice named '" + std::string(name) + "'");
  }

  /// Name of the slice containing coordinate `i`.
  const Slice& slice_at(std::size_t i) const {
    for (const Slice& s : slices) {
      if (i >= s.offset && i < s.offset + s.size) return s;
    }
    throw DomainError("coordinate outside the parameter layout");
  }
};

// -------------------------------------------------------------------- prior

/// Independent normal prior on every unconstrained coordinate.
struct Prior {
  std::vector<double> means;
  std::vector<double> stds;

  static Prior standard(const ParamLayout& layout) {
    return Prior{std::vector<double>(layout.total_dim, 0.0), std::vector<double>(layout.total_dim, 1.0)};
  }

  Prior& set_slice_std(const ParamLayout& layout, std::string_view slice, double std) {
    if (!(std > 0.0)) throw DomainError("prior std must be > 0");
    const Slice& s = layout.slice(slice);
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) stds[i] = std;
    return *this;
  }

  double log_density(std::span<const double> theta) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double z = (theta[i] - means[i]) / stds[i];
      acc += -0.5 * z * z - std::log(stds[i]) - kHalfLog2Pi;
    }
    return acc;
  }

  /// Adds d log_density / d theta into `grad`.
  void accumulate_gradient(std::span<const double> theta, std::span<double> grad) const {
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] -= (theta[i] - means[i]) / (stds[i] * stds[i]);
  }
};

// ---------------------------------------------------------- fitted programs

struct FittedSubProgram {
  SubProgramSpec spec;
  GaussianChol posterior;

  void validate() const {
    spec.validate();
    posterior.validate();
    if (posterior.dim() != ParamLayout::for_spec(spec).total_dim) {
      throw DomainError(std::string(spec.name()) + ": posterior dimension does not match the layout");
    }
  }
};

using Registry = std::array<FittedSubProgram, kNumSubPrograms>;

inline const FittedSubProgram& at(const Registry& reg, SubProgramId id) { return reg[index_of(id)]; }

// -------------------------------------------------------- constrain / unconstrain

/// Applies exp to the log-scale slices; identity elsewhere.
template <class T>
std::vector<T> constrain(std::span<const T> theta, const SubProgramSpec& spec) {
  using std::exp;
  const ParamLayout layout = ParamLayout::for_spec(spec);
  if (theta.size() != layout.total_dim) throw DomainError("parameter vector has the wrong length");
  std::vector<T> out(theta.begin(), theta.end());
  for (const T& v : theta) {
    if (!std::isfinite(value_of(v))) throw DomainError("parameter vector must be finite");
  }
  for (const Slice& s : layout.slices) {
    if (!s.log_scale) continue;
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) out[i] = exp(theta[i]);
  }
  return out;
}

inline std::vector<double> constrain(const std::vector<double>& theta, const SubProgramSpec& spec) {
  return constrain<double>(std::span<const double>(theta), spec);
}

inline std::vector<double> unconstrain(std::span<const double> constrained, const SubProgramSpec& spec) {
  const ParamLayout layout = ParamLayout::for_spec(spec);
  if (constrained.size() != layout.total_dim) throw DomainError("parameter vector has the wrong length");
  std::vector<double> out(constrained.begin(), constrained.end());
  for (const Slice& s : layout.slices) {
    if (!s.log_scale) continue;
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
      if (!(constrained[i] > 0.0)) throw DomainError("positive parameter must be > 0");
      out[i] = std::log(constrained[i]);
    }
  }
  return out;
}

/// A sub-program whose posterior is (numerically) a point mass at the given
/// constrained parameters.
inline FittedSubProgram point_mass_at(const SubProgramSpec& spec, std::span<const double> constrained) {
  FittedSubProgram f{spec, GaussianChol::point_mass(unconstrain(constrained, spec))};
  f.validate();
  return f;
}

using ThetaTable = std::array<std::vector<double>, kNumSubPrograms>;

/// Registry of point masses, one constrained parameter vector per slot.
inline Registry point_mass_registry(const ThetaTable& constrained,
                                    std::array<double, 2> fixed_means = kDefaultFixedDelayMeans) {
  Registry reg;
  for (SubProgramId id : kAllSubPrograms) {
    reg[index_of(id)] = point_mass_at(registry_spec(id, fixed_means), constrained[index_of(id)]);
  }
  return reg;
}

namespace detail {

template <class T>
T constant_like(const T& ref, double v) {
  if constexpr (std::is_same_v<T, double>) {
    (void)ref;
    return v;
  } else {
    return ref.tape->variable(v);
  }
}

template <class T>
T linear_predictor(std::span<const T> theta, std::size_t offset, std::size_t d, std::span<const double> x) {
  return affine(theta.subspan(offset, d), theta[offset + d], x);
}

template <class T>
struct MixtureTerms {
  std::array<T, 3> z;
  std::array<T, 3> mu;
  std::array<T, 3> sigma;
};

template <class T>
MixtureTerms<T> mixture_terms(std::span<const T> theta, const SubProgramSpec& spec, std::span<const double> x) {
  const std::size_t d = spec.input_dim;
  MixtureTerms<T> m;
  for (std::size_t k = 0; k < 3; ++k) m.z[k] = linear_predictor(theta, k * (d + 1), d, x);
  const T mu3 = linear_predictor(theta, 3 * (d + 1), d, x);
  m.mu = {constant_like(mu3, (*spec.fixed_means)[0]), constant_like(mu3, (*spec.fixed_means)[1]), mu3};
  for (std::size_t k = 0; k < 3; ++k) m.sigma[k] = theta[4 * (d + 1) + k];
  return m;
}

inline void check_support(const SubProgramSpec& spec, double y) {
  switch (spec.family) {
    case Family::bernoulli:
      if (y != 0.0 && y != 1.0) throw DomainError(std::string(spec.name()) + ": Bernoulli outcome must be 0 or 1");
      break;
    case Family::censored_negbinom:
      if (!(y >= 0.0 && y <= *spec.censor_bound) || y != std::floor(y)) {
        throw DomainError(std::string(spec.name()) + ": count outcome must be an integer in [0, " +
                          std::to_string(*spec.censor_bound) + "]");
      }
      break;
    case Family::lognormal:
    case Family::lognormal_mixture3:
      if (!(y > 0.0) || !std::isfinite(y)) {
        throw DomainError(std::string(spec.name()) + ": delay outcome must be a positive real");
      }
      break;
  }
}

}  // namespace detail

inline bool in_support(const SubProgramSpec& spec, double y) {
  try {
    detail::check_support(spec, y);
    return true;
  } catch (const DomainError&) {
    return false;
  }
}

/// Log-density of outcome y given conditioning vector x and constrained
/// parameters theta.
template <class T>
T loglik_point(double y, std::span<const double> x, std::span<const T> theta, const SubProgramSpec& spec) {
  using std::log;
  if (x.size() != spec.input_dim) throw DomainError(std::string(spec.name()) + ": conditioning vector has the wrong length");
  detail::check_support(spec, y);
  const std::size_t d = spec.input_dim;
  switch (spec.family) {
    case Family::bernoulli: {
      const T eta = detail::linear_predictor(theta, 0, d, x);
      return bernoulli_logpmf_logit(static_cast<int>(y), eta);
    }
    case Family::censored_negbinom: {
      const T eta = detail::linear_predictor(theta, 0, d, x);
      const T& alpha = theta[d + 1];
      // p = 1/(1 + alpha mu): log p = -softplus(s), log(1-p) = -softplus(-s), s = log(alpha) + eta
      const T s = log(alpha) + eta;
      const T n = 1.0 / alpha;
      return censored_nb_logpmf<T>(static_cast<int>(y), n, -softplus(s), -softplus(-s),
                                   CensorBound(*spec.censor_bound));
    }
    case Family::lognormal: {
      const T eta = detail::linear_predictor(theta, 0, d, x);
      return lognormal_logpdf<T>(y, eta, theta[d + 1]);
    }
    case Family::lognormal_mixture3: {
      const auto m = detail::mixture_terms(theta, spec, x);
      return mixture3_logpdf_logits<T>(y, m.z, m.mu, m.sigma);
    }
  }
  throw DomainError("unknown family");
}

inline double loglik_point(double y, std::span<const double> x, const std::vector<double>& theta,
                           const SubProgramSpec& spec) {
  return loglik_point<double>(y, x, std::span<const double>(theta), spec);
}

// ------------------------------------------------------------ sampling

/// Family parameters at a given x (doubles only).
inline NegBinomParam negbinom_at(std::span<const double> theta, const SubProgramSpec& spec, std::span<const double> x) {
  const std::size_t d = spec.input_dim;
  return negbinom_from_glm(theta[d + 1], detail::linear_predictor(theta, 0, d, x));
}

inline LogNormalParam lognormal_at(std::span<const double> theta, const SubProgramSpec& spec, std::span<const double> x) {
  const std::size_t d = spec.input_dim;
  return LogNormalParam(detail::linear_predictor(theta, 0, d, x), theta[d + 1]);
}

inline Mixture3Param mixture_at(std::span<const double> theta, const SubProgramSpec& spec, std::span<const double> x) {
  const auto m = detail::mixture_terms(theta, spec, x);
  return Mixture3Param::from_logits(m.z, m.mu, m.sigma);
}

inline double bernoulli_probability_at(std::span<const double> theta, const SubProgramSpec& spec,
                                       std::span<const double> x) {
  return logistic(detail::linear_predictor(theta, 0, spec.input_dim, x));
}

/// One constrained parameter draw from the posterior.
inline std::vector<double> draw_theta(Rng& rng, const FittedSubProgram& fitted) {
  return constrain(gaussian_sample_reparam(rng, fitted.posterior), fitted.spec);
}

/// Samples the outcome at fixed constrained parameters.
inline double sample_outcome(Rng& rng, std::span<const double> theta, const SubProgramSpec& spec,
                             std::span<const double> x) {
  if (x.size() != spec.input_dim) throw DomainError(std::string(spec.name()) + ": conditioning vector has the wrong length");
  switch (spec.family) {
    case Family::bernoulli: return bernoulli_sample(rng, bernoulli_probability_at(theta, spec, x));
    case Family::censored_negbinom:
      return censored_nb_sample(rng, negbinom_at(theta, spec, x), CensorBound(*spec.censor_bound));
    case Family::lognormal: return lognormal_sample(rng, lognormal_at(theta, spec, x));
    case Family::lognormal_mixture3: return mixture3_sample(rng, mixture_at(theta, spec, x));
  }
  throw DomainError("unknown family");
}

/// Samples a delay-family outcome restricted to [lower, inf).
inline double sample_outcome_truncated(Rng& rng, std::span<const double> theta, const SubProgramSpec& spec,
                                       std::span<const double> x, double lower) {
  if (x.size() != spec.input_dim) throw DomainError(std::string(spec.name()) + ": conditioning vector has the wrong length");
  switch (spec.family) {
    case Family::lognormal: return lognormal_sample_truncated(rng, lognormal_at(theta, spec, x), lower);
    case Family::lognormal_mixture3: return mixture3_sample_truncated(rng, mixture_at(theta, spec, x), lower);
    default: throw DomainError(std::string(spec.name()) + ": truncated sampling needs a delay family");
  }
}

/// Hierarchical predictive draw: theta ~ posterior (unless given), then the
/// outcome given x.
inline double predictive_sample(Rng& rng, const FittedSubProgram& fitted, std::span<const double> x,
                                std::optional<std::span<const double>> theta = {}) {
  if (theta) return sample_outcome(rng, *theta, fitted.spec, x);
  const std::vector<double> drawn = draw_theta(rng, fitted);
  return sample_outcome(rng, drawn, fitted.spec, x);
}

enum class PredictiveMode {
  posterior_average,  ///< log mean_s p(y | theta_s), theta_s ~ posterior
  variational_mean,   ///< log p(y | constrain(posterior mean))
};

inline double predictive_loglik(double y, std::span<const double> x, const FittedSubProgram& fitted, int draws,
                                Rng& rng, PredictiveMode mode = PredictiveMode::posterior_average) {
  if (draws < 1) throw DomainError("predictive_loglik needs at least one posterior draw");
  if (mode == PredictiveMode::variational_mean) {
    return loglik_point(y, x, constrain(fitted.posterior.mean, fitted.spec), fitted.spec);
  }
  std::vector<double> terms(static_cast<std::size_t>(draws));
  for (double& t : terms) t = loglik_point(y, x, draw_theta(rng, fitted), fitted.spec);
  return log_sum_exp(std::span<const double>(terms)) - std::log(static_cast<double>(draws));
}

}  // namespace genhai
