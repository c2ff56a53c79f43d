#pragma once

// Scalar distributions the sub-programs are built from. Log-densities that
// enter the ELBO are written once as templates over the scalar type so the
// same expression serves plain evaluation (double) and gradient evaluation
// (ad::Var).

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "genhai/ad.hpp"
#include "genhai/error.hpp"
#include "genhai/rng.hpp"
#include "genhai/special.hpp"

namespace genhai {

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  return nd(rng);
}

// ---------------------------------------------------------------- Bernoulli

struct BernoulliParam {
  double p = 0.5;

  explicit BernoulliParam(double prob) : p(prob) {
    if (!(prob >= 0.0 && prob <= 1.0)) throw DomainError("Bernoulli p outside [0,1]");
  }
};

inline double bernoulli_logpmf(int y, double p) {
  if (y != 0 && y != 1) throw DomainError("Bernoulli outcome must be 0 or 1");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("Bernoulli p outside [0,1]");
  if (y == 1) return p > 0.0 ? std::log(p) : kNegInf;
  return p < 1.0 ? std::log1p(-p) : kNegInf;
}

/// Bernoulli log-pmf parameterized by the logit, stable for any finite eta.
template <class T>
T bernoulli_logpmf_logit(int y, const T& eta) {
  // log logistic(eta) = -softplus(-eta); log(1 - logistic(eta)) = -softplus(eta)
  return y == 1 ? -softplus(-eta) : -softplus(eta);
}

inline int bernoulli_sample(Rng& rng, double p) { return rng.uniform() < p ? 1 : 0; }

// -------------------------------------------------- censored negative binomial

/// NB(n, p) with the GLM parameterization n = 1/alpha, p = 1/(1 + alpha mu),
/// so that E[Y] = mu and Var[Y] = mu + alpha mu^2.
struct NegBinomParam {
  double n = 1.0;
  double p = 0.5;
  double mu = 1.0;
  double alpha = 1.0;
  bool saturated = false;  ///< mu hit kNegBinomMeanCap

  double variance() const { return mu + alpha * mu * mu; }
};

inline constexpr double kNegBinomMeanCap = 1e12;

inline NegBinomParam negbinom_from_glm(double alpha, double eta) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("NB overdispersion must be > 0");
  if (std::isnan(eta)) throw DomainError("NB linear predictor is NaN");
  NegBinomParam out;
  out.alpha = alpha;
  out.n = 1.0 / alpha;
  const double mu = std::exp(eta);
  if (!(mu <= kNegBinomMeanCap)) {
    out.mu = kNegBinomMeanCap;
    out.saturated = true;
  } else {
    out.mu = mu;
  }
  out.p = 1.0 / (1.0 + alpha * out.mu);
  return out;
}

struct CensorBound {
  int t = 1;

  explicit CensorBound(int threshold) : t(threshold) {
    if (threshold < 1) throw DomainError("censor bound must be >= 1");
  }
};

inline int censor(long long y_latent, CensorBound bound) {
  return y_latent < bound.t ? static_cast<int>(y_latent) : bound.t;
}

/// Log-pmf of min(Y', t) with Y' ~ NB(n, p), given n, log p and log(1 - p).
/// The mass at t is the whole upper tail P(Y' >= t).
template <class T>
T censored_nb_logpmf(int y, const T& n, const T& log_p, const T& log1m_p, CensorBound bound) {
  if (y < 0 || y > bound.t) {
    throw DomainError("censored NB outcome " + std::to_string(y) + " outside [0, " +
                      std::to_string(bound.t) + "]");
  }
  using std::log;
  const T log_norm = n * log_p - log_gamma(n);
  auto term = [&](int k) -> T {
    return log_norm + log_gamma(n + static_cast<double>(k)) - log_gamma(static_cast<double>(k) + 1.0) +
           static_cast<double>(k) * log1m_p;
  };
  if (y < bound.t) return term(y);

  std::vector<T> head;
  head.reserve(static_cast<std::size_t>(bound.t));
  for (int k = 0; k < bound.t; ++k) head.push_back(term(k));
  const T log_head = log_sum_exp(std::span<const T>(head));
  // With at least 1e-3 of mass in the tail, 1 - head loses < 3 digits.
  if (value_of(log_head) < std::log1p(-1e-3)) return log1m_exp(log_head);

  // Small tail: sum it directly using the pmf ratio (k + n)/(k + 1) (1 - p).
  constexpr int kMaxTailTerms = 4000;
  std::vector<T> tail;
  T current = term(bound.t);
  tail.push_back(current);
  double best = value_of(current);
  for (int k = bound.t; k < bound.t + kMaxTailTerms; ++k) {
    current = current + log(n + static_cast<double>(k)) - std::log(static_cast<double>(k) + 1.0) + log1m_p;
    tail.push_back(current);
    const double v = value_of(current);
    best = std::max(best, v);
    if (v < best - 40.0) return log_sum_exp(std::span<const T>(tail));
  }
  return log1m_exp(log_head);
}

inline double censored_nb_logpmf(int y, const NegBinomParam& param, CensorBound bound) {
  const double am = param.alpha * param.mu;
  const double log_p = -std::log1p(am);
  const double log1m_p = am > 0.0 ? std::log(am) - std::log1p(am) : kNegInf;
  if (am == 0.0) return y == 0 ? 0.0 : kNegInf;
  return censored_nb_logpmf<double>(y, param.n, log_p, log1m_p, bound);
}

/// Gamma-Poisson composition: rate ~ Gamma(n, scale alpha mu), y' ~ Poisson(rate).
inline long long negbinom_sample_latent(Rng& rng, const NegBinomParam& param) {
  const double scale = param.alpha * param.mu;
  if (scale <= 0.0) return 0;
  std::gamma_distribution<double> gamma(param.n, scale);
  const double rate = gamma(rng);
  if (rate <= 0.0) return 0;
  // P(Poisson(1e7) < 1e6) is far below double resolution; callers censor at <= 30.
  if (rate > 1e7) return static_cast<long long>(rate);
  std::poisson_distribution<long long> poisson(rate);
  return poisson(rng);
}

inline int censored_nb_sample(Rng& rng, const NegBinomParam& param, CensorBound bound) {
  return censor(negbinom_sample_latent(rng, param), bound);
}

// ----------------------------------------------------------------- log-normal

struct LogNormalParam {
  double mu = 0.0;
  double sigma = 1.0;

  LogNormalParam(double m, double s) : mu(m), sigma(s) {
    if (!(s > 0.0)) throw DomainError("log-normal sigma must be > 0");
  }
};

template <class T>
T lognormal_logpdf(double d, const T& mu, const T& sigma) {
  using std::log;
  if (!(d > 0.0)) throw DomainError("log-normal support is d > 0");
  const double ld = std::log(d);
  const T z = (ld - mu) / sigma;
  return -0.5 * z * z - log(sigma) - kHalfLog2Pi - ld;
}

inline double lognormal_logpdf(double d, const LogNormalParam& param) {
  return lognormal_logpdf<double>(d, param.mu, param.sigma);
}

inline double lognormal_sample(Rng& rng, const LogNormalParam& param) {
  return std::exp(param.mu + param.sigma * standard_normal(rng));
}

/// log P(D >= lower) for D log-normal.
inline double lognormal_log_tail(const LogNormalParam& param, double lower) {
  if (lower <= 0.0) return 0.0;
  return normal_log_sf((std::log(lower) - param.mu) / param.sigma);
}

/// Exact inverse-CDF draw from the log-normal restricted to [lower, inf).
inline double lognormal_sample_truncated(Rng& rng, const LogNormalParam& param, double lower) {
  if (lower < 0.0) throw DomainError("truncation bound must be >= 0");
  const double log_tail = lognormal_log_tail(param, lower);
  if (log_tail < std::log(1e-300)) throw TailExhaustedError("log-normal tail above bound is exhausted");
  const double log_q = log_tail + std::log(rng.uniform_open());
  const double z = normal_sf_inverse_log(std::min(log_q, 0.0));
  return std::max(lower, std::exp(param.mu + param.sigma * z));
}

// ------------------------------------------------------ 3-component mixture

struct Mixture3Param {
  std::array<double, 3> weights{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, 3> mus{};
  std::array<double, 3> sigmas{1.0, 1.0, 1.0};

  Mixture3Param(std::array<double, 3> w, std::array<double, 3> m, std::array<double, 3> s)
      : weights(w), mus(m), sigmas(s) {
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
      if (!(w[k] >= 0.0)) throw DomainError("mixture weight must be >= 0");
      if (!(s[k] > 0.0)) throw DomainError("mixture sigma must be > 0");
      total += w[k];
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("mixture weights must sum to 1");
  }

  static Mixture3Param from_logits(std::array<double, 3> z, std::array<double, 3> m,
                                   std::array<double, 3> s);
};

/// Softmax over three logits; weights are nonnegative and renormalized so
/// they sum to 1 to within a couple of ulps.
inline std::array<double, 3> softmax3(std::array<double, 3> z) {
  const double lse = log_sum_exp(std::span<const double>(z));
  std::array<double, 3> w{};
  double total = 0.0;
  for (int k = 0; k < 3; ++k) total += (w[k] = std::exp(z[k] - lse));
  for (double& v : w) v /= total;
  return w;
}

inline Mixture3Param Mixture3Param::from_logits(std::array<double, 3> z, std::array<double, 3> m,
                                                std::array<double, 3> s) {
  for (double v : z) {
    if (!std::isfinite(v)) throw DomainError("mixture logits must be finite");
  }
  return Mixture3Param(softmax3(z), m, s);
}

/// Mixture log-density from component logits (softmax weights).
template <class T>
T mixture3_logpdf_logits(double d, const std::array<T, 3>& z, const std::array<T, 3>& mu,
                         const std::array<T, 3>& sigma) {
  const T log_norm = log_sum_exp(std::span<const T>(z));
  std::array<T, 3> parts{};
  for (int k = 0; k < 3; ++k) parts[k] = z[k] - log_norm + lognormal_logpdf<T>(d, mu[k], sigma[k]);
  return log_sum_exp(std::span<const T>(parts));
}

inline double mixture3_logpdf(double d, const Mixture3Param& param) {
  if (!(d > 0.0)) throw DomainError("mixture support is d > 0");
  std::array<double, 3> parts{};
  for (int k = 0; k < 3; ++k) {
    parts[k] = (param.weights[k] > 0.0 ? std::log(param.weights[k]) : kNegInf) +
               lognormal_logpdf<double>(d, param.mus[k], param.sigmas[k]);
  }
  return log_sum_exp(std::span<const double>(parts));
}

inline int categorical3_sample(Rng& rng, const std::array<double, 3>& probs) {
  const double u = rng.uniform() * (probs[0] + probs[1] + probs[2]);
  if (u < probs[0]) return 0;
  if (u < probs[0] + probs[1]) return 1;
  return 2;
}

inline double mixture3_sample(Rng& rng, const Mixture3Param& param) {
  const int k = categorical3_sample(rng, param.weights);
  return lognormal_sample(rng, LogNormalParam(param.mus[k], param.sigmas[k]));
}

/// Exact draw from the mixture restricted to [lower, inf): components are
/// reweighted by their tail masses, then the chosen component is sampled by
/// inverse CDF. Never returns a value below `lower`.
inline double mixture3_sample_truncated(Rng& rng, const Mixture3Param& param, double lower) {
  if (lower < 0.0) throw DomainError("truncation bound must be >= 0");
  std::array<double, 3> log_mass{};
  for (int k = 0; k < 3; ++k) {
    log_mass[k] = (param.weights[k] > 0.0 ? std::log(param.weights[k]) : kNegInf) +
                  lognormal_log_tail(LogNormalParam(param.mus[k], param.sigmas[k]), lower);
  }
  const double total = log_sum_exp(std::span<const double>(log_mass));
  if (!(total >= std::log(1e-300))) {
    throw TailExhaustedError("mixture tail mass above " + std::to_string(lower) + " is exhausted");
  }
  std::array<double, 3> probs{};
  for (int k = 0; k < 3; ++k) probs[k] = std::exp(log_mass[k] - total);
  const int k = categorical3_sample(rng, probs);
  return lognormal_sample_truncated(rng, LogNormalParam(param.mus[k], param.sigmas[k]), lower);
}

// ------------------------------------------------ multivariate normal (Cholesky)

/// N(mean, L L^T) with L lower triangular, stored row-major as a dense D x D
/// matrix.
struct GaussianChol {
  std::vector<double> mean;
  std::vector<double> chol;

  GaussianChol() = default;

  GaussianChol(std::vector<double> m, std::vector<double> l) : mean(std::move(m)), chol(std::move(l)) {
    validate();
  }

  std::size_t dim() const { return mean.size(); }
  double at(std::size_t i, std::size_t j) const { return chol[i * dim() + j]; }

  static GaussianChol isotropic(std::vector<double> m, double scale) {
    const std::size_t d = m.size();
    std::vector<double> l(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) l[i * d + i] = scale;
    return GaussianChol(std::move(m), std::move(l));
  }

  /// Numerically a point mass: the scale is far below double resolution of
  /// any O(1) coordinate.
  static GaussianChol point_mass(std::vector<double> m) { return isotropic(std::move(m), 1e-300); }

  std::vector<double> covariance() const {
    const std::size_t d = dim();
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k <= j; ++k) s += at(i, k) * at(j, k);
        cov[i * d + j] = cov[j * d + i] = s;
      }
    }
    return cov;
  }

  void validate() const {
    const std::size_t d = mean.size();
    if (chol.size() != d * d) throw DomainError("Cholesky factor has wrong size");
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(mean[i])) throw DomainError("Gaussian mean must be finite");
      if (!(chol[i * d + i] > 0.0) || !std::isfinite(chol[i * d + i])) {
        throw DomainError("Cholesky diagonal must be finite and > 0");
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double v = chol[i * d + j];
        if (j > i && v != 0.0) throw DomainError("Cholesky factor must be lower triangular");
        if (!std::isfinite(v)) throw DomainError("Cholesky factor must be finite");
      }
    }
  }
};

/// mean + L eps. Deterministic given eps; eps is drawn from N(0, I) when absent.
inline std::vector<double> gaussian_sample_reparam(Rng& rng, const GaussianChol& g,
                                                   std::optional<std::span<const double>> eps = {}) {
  const std::size_t d = g.dim();
  std::vector<double> e;
  if (eps) {
    if (eps->size() != d) throw DomainError("eps dimension does not match the Gaussian");
    e.assign(eps->begin(), eps->end());
  } else {
    e.resize(d);
    for (double& v : e) v = standard_normal(rng);
  }
  std::vector<double> out(g.mean);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = &g.chol[i * d];
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += row[j] * e[j];
    out[i] += s;
  }
  return out;
}

inline double gaussian_logpdf(std::span<const double> x, const GaussianChol& g) {
  const std::size_t d = g.dim();
  if (x.size() != d) throw DomainError("point dimension does not match the Gaussian");
  // Forward substitution L z = x - mean.
  std::vector<double> z(d);
  double log_det_half = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = x[i] - g.mean[i];
    for (std::size_t j = 0; j < i; ++j) s -= g.at(i, j) * z[j];
    z[i] = s / g.at(i, i);
    quad += z[i] * z[i];
    log_det_half += std::log(g.at(i, i));
  }
  return -0.5 * quad - log_det_half - static_cast<double>(d) * kHalfLog2Pi;
}

}  // namespace genhai
