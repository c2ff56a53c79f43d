#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "genhai/distributions.hpp"
#include "genhai/rng.hpp"
#include "genhai/special.hpp"

using namespace genhai;

namespace {

double integrate_log_space(auto&& pdf, double lo_u, double hi_u) {
  // Substitute d = e^u so the heavy right tail becomes a Gaussian-like bump.
  auto f = [&](double u) { return std::exp(pdf(std::exp(u)) + u); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo_u, hi_u, 15, 1e-13);
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return best;
}

}  // namespace

TEST(Logistic, KnownValues) {
  EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
  EXPECT_DOUBLE_EQ(logistic(800.0), 1.0);
  EXPECT_EQ(logistic(-800.0), 0.0);
  EXPECT_NEAR(logistic(std::log(3.0)), 0.75, 1e-15);
  for (double x : {-700.0, -30.0, -1.0, 1.0, 30.0, 700.0}) {
    EXPECT_TRUE(std::isfinite(logistic(x)));
    EXPECT_NEAR(logistic(x) + logistic(-x), 1.0, 1e-15);
  }
}

TEST(Bernoulli, LogPmf) {
  EXPECT_NEAR(bernoulli_logpmf(1, 0.5), -0.69314718055994531, 1e-15);
  EXPECT_EQ(bernoulli_logpmf(0, 1.0), kNegInf);
  EXPECT_DOUBLE_EQ(bernoulli_logpmf(1, 0.75), std::log(0.75));
  EXPECT_THROW(bernoulli_logpmf(2, 0.5), DomainError);
  EXPECT_THROW(BernoulliParam(1.5), DomainError);
}

TEST(Bernoulli, LogitFormMatchesProbabilityForm) {
  for (double eta : {-20.0, -3.0, -0.1, 0.0, 0.7, 5.0, 25.0}) {
    const double p = logistic(eta);
    EXPECT_NEAR(bernoulli_logpmf_logit(1, eta), bernoulli_logpmf(1, p), 1e-12);
    EXPECT_NEAR(bernoulli_logpmf_logit(0, eta), std::log(logistic(-eta)), 1e-12);
  }
}

TEST(NegBinom, FromGlm) {
  const NegBinomParam a = negbinom_from_glm(1.0, 0.0);
  EXPECT_DOUBLE_EQ(a.mu, 1.0);
  EXPECT_DOUBLE_EQ(a.n, 1.0);
  EXPECT_DOUBLE_EQ(a.p, 0.5);
  const NegBinomParam b = negbinom_from_glm(2.0, 0.0);
  EXPECT_DOUBLE_EQ(b.n, 0.5);
  EXPECT_NEAR(b.p, 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(b.variance(), 3.0);
  EXPECT_FALSE(b.saturated);
  const NegBinomParam c = negbinom_from_glm(1.0, 1000.0);
  EXPECT_TRUE(c.saturated);
  EXPECT_EQ(c.mu, kNegBinomMeanCap);
  EXPECT_THROW(negbinom_from_glm(0.0, 0.0), DomainError);
}

TEST(CensoredNegBinom, HandValues) {
  const NegBinomParam p = negbinom_from_glm(1.0, 0.0);
  EXPECT_NEAR(std::exp(censored_nb_logpmf(0, p, CensorBound(1))), 0.5, 1e-14);
  EXPECT_NEAR(std::exp(censored_nb_logpmf(1, p, CensorBound(1))), 0.5, 1e-14);
  EXPECT_NEAR(censored_nb_logpmf(0, p, CensorBound(7)), std::log(0.5), 1e-14);
  EXPECT_THROW(censored_nb_logpmf(8, p, CensorBound(7)), DomainError);
  EXPECT_THROW(censored_nb_logpmf(-1, p, CensorBound(7)), DomainError);
  EXPECT_THROW(CensorBound(0), DomainError);
}

TEST(CensoredNegBinom, NormalizesAndTailMatchesIndependentCdf) {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const double mu = std::exp(-3.0 + 7.0 * rng.uniform());
    const double alpha = std::exp(-5.0 + 7.0 * rng.uniform());
    const int t = 1 + static_cast<int>(rng() % 40);
    const NegBinomParam p = negbinom_from_glm(alpha, std::log(mu));
    double total = 0.0;
    for (int y = 0; y <= t; ++y) total += std::exp(censored_nb_logpmf(y, p, CensorBound(t)));
    EXPECT_NEAR(total, 1.0, 1e-8) << "mu=" << mu << " alpha=" << alpha << " t=" << t;

    const boost::math::negative_binomial_distribution<double> ref(p.n, p.p);
    const double tail = boost::math::cdf(boost::math::complement(ref, t - 1));
    EXPECT_NEAR(std::exp(censored_nb_logpmf(t, p, CensorBound(t))), tail, 1e-10);
    for (int y = 0; y < t; y += 3) {
      EXPECT_NEAR(std::exp(censored_nb_logpmf(y, p, CensorBound(t))), boost::math::pdf(ref, y), 1e-10);
    }
  }
}

TEST(CensoredNegBinom, TinyTailStaysAccurate) {
  const NegBinomParam p = negbinom_from_glm(0.01, std::log(0.5));
  const boost::math::negative_binomial_distribution<double> ref(p.n, p.p);
  const double tail = boost::math::cdf(boost::math::complement(ref, 29));
  const double lp = censored_nb_logpmf(30, p, CensorBound(30));
  EXPECT_NEAR(lp, std::log(tail), 1e-6 * std::abs(std::log(tail)));
}

TEST(CensoredNegBinom, CensorClamp) {
  EXPECT_EQ(censor(35, CensorBound(30)), 30);
  EXPECT_EQ(censor(3, CensorBound(7)), 3);
  EXPECT_EQ(censor(7, CensorBound(7)), 7);
}

TEST(CensoredNegBinom, SamplerMatchesPmf) {
  const NegBinomParam p = negbinom_from_glm(0.8, std::log(4.0));
  const CensorBound bound(12);
  Rng rng(5);
  constexpr int kN = 1'000'000;
  std::vector<int> counts(13, 0);
  for (int i = 0; i < kN; ++i) ++counts[censored_nb_sample(rng, p, bound)];
  for (int y = 0; y <= 12; ++y) {
    const double q = std::exp(censored_nb_logpmf(y, p, bound));
    const double se = std::sqrt(q * (1.0 - q) / kN);
    EXPECT_NEAR(counts[y] / static_cast<double>(kN), q, 3.0 * se) << "y=" << y;
  }
}

TEST(LogNormal, LogPdf) {
  EXPECT_NEAR(lognormal_logpdf(1.0, LogNormalParam(0.0, 1.0)), -kHalfLog2Pi, 1e-15);
  EXPECT_NEAR(lognormal_logpdf(std::numbers::e, LogNormalParam(0.0, 1.0)), -kHalfLog2Pi - 0.5 - 1.0, 1e-14);
  EXPECT_THROW(lognormal_logpdf(0.0, LogNormalParam(0.0, 1.0)), DomainError);
  EXPECT_THROW(LogNormalParam(0.0, 0.0), DomainError);
}

TEST(LogNormal, IntegratesToOne) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const LogNormalParam p(-2.0 + 5.0 * rng.uniform(), 0.1 + 2.0 * rng.uniform());
    const double total = integrate_log_space([&](double d) { return lognormal_logpdf(d, p); },
                                             p.mu - 40.0 * p.sigma, p.mu + 40.0 * p.sigma);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Mixture3, DegenerateAndSymmetric) {
  const Mixture3Param m({1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.4, 0.4, 0.4}, {0.7, 0.7, 0.7});
  for (double d : {0.1, 1.0, 3.0, 40.0}) {
    EXPECT_NEAR(mixture3_logpdf(d, m), lognormal_logpdf(d, LogNormalParam(0.4, 0.7)), 1e-14);
  }
  const auto w = softmax3({1.2, 1.2, 1.2});
  for (double v : w) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_THROW(mixture3_logpdf(-1.0, m), DomainError);
  EXPECT_THROW(Mixture3Param({0.5, 0.5, 0.5}, {0, 0, 0}, {1, 1, 1}), DomainError);
}

TEST(Mixture3, SoftmaxOnSimplexForAnyFiniteLogits) {
  Rng rng(17);
  for (int rep = 0; rep < 10000; ++rep) {
    std::array<double, 3> z{};
    for (double& v : z) v = (rng.uniform() - 0.5) * std::pow(10.0, 1 + static_cast<int>(rng() % 300));
    const auto w = softmax3(z);
    double total = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Mixture3, IntegratesToOne) {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const auto w = softmax3({rng.uniform() * 4 - 2, rng.uniform() * 4 - 2, rng.uniform() * 4 - 2});
    const Mixture3Param m(w, {0.0, std::log(7.0), rng.uniform() * 4 - 1},
                          {0.1 + rng.uniform(), 0.1 + rng.uniform(), 0.1 + 1.5 * rng.uniform()});
    const double total = integrate_log_space([&](double d) { return mixture3_logpdf(d, m); }, -40.0, 45.0);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Mixture3, ComponentFrequenciesFollowWeights) {
  const Mixture3Param m({0.2, 0.5, 0.3}, {0.0, 3.0, 6.0}, {0.01, 0.01, 0.01});
  Rng rng(21);
  constexpr int kN = 100000;
  std::array<int, 3> counts{};
  for (int i = 0; i < kN; ++i) {
    const double ld = std::log(mixture3_sample(rng, m));
    ++counts[ld < 1.5 ? 0 : (ld < 4.5 ? 1 : 2)];
  }
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(m.weights[k] * (1 - m.weights[k]) / kN);
    EXPECT_NEAR(counts[k] / static_cast<double>(kN), m.weights[k], 3 * se);
  }
}

TEST(Mixture3Truncated, NeverBelowLowerBound) {
  const Mixture3Param m({0.5, 0.4, 0.1}, {0.0, std::log(7.0), 1.0}, {0.3, 0.2, 0.8});
  Rng rng(4);
  for (double lower : {0.0, 0.5, 3.0, 20.0, 200.0}) {
    for (int i = 0; i < 20000; ++i) ASSERT_GE(mixture3_sample_truncated(rng, m, lower), lower);
  }
}

TEST(Mixture3Truncated, VacuousTruncationMatchesUntruncatedByKs) {
  const Mixture3Param m({0.5, 0.4, 0.1}, {0.0, std::log(7.0), 1.0}, {0.3, 0.2, 0.8});
  Rng a(100), b(200);
  constexpr int kN = 100000;
  std::vector<double> x(kN), y(kN);
  for (int i = 0; i < kN; ++i) {
    x[i] = mixture3_sample_truncated(a, m, 0.0);
    y[i] = mixture3_sample(b, m);
  }
  const double critical = 1.628 * std::sqrt(2.0 / kN);  // alpha = 0.01
  EXPECT_LT(ks_statistic(x, y), critical);
}

TEST(Mixture3Truncated, MeanMatchesQuadrature) {
  const Mixture3Param m({0.5, 0.4, 0.1}, {0.0, std::log(7.0), 1.0}, {0.3, 0.2, 0.8});
  const double lower = 5.0;
  const double lu = std::log(lower);
  auto f = [&](double u) { return std::exp(mixture3_logpdf(std::exp(u), m) + u); };
  auto fd = [&](double u) { return std::exp(mixture3_logpdf(std::exp(u), m) + 2.0 * u); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double mass = GK::integrate(f, lu, 20.0, 15, 1e-13);
  const double mean = GK::integrate(fd, lu, 20.0, 15, 1e-13) / mass;

  Rng rng(8);
  constexpr int kN = 1'000'000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < kN; ++i) {
    const double v = mixture3_sample_truncated(rng, m, lower);
    s += v;
    s2 += v * v;
  }
  const double emp = s / kN;
  const double se = std::sqrt((s2 / kN - emp * emp) / kN);
  EXPECT_NEAR(emp, mean, 3.0 * se);
}

TEST(Mixture3Truncated, ExhaustedTailThrows) {
  const Mixture3Param m({0.5, 0.5, 0.0}, {0.0, 0.0, 0.0}, {0.01, 0.01, 0.01});
  Rng rng(1);
  EXPECT_THROW(mixture3_sample_truncated(rng, m, 1e6), TailExhaustedError);
}

TEST(LogNormalTruncated, DeepTailStaysAboveBound) {
  const LogNormalParam p(0.0, 0.2);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double v = lognormal_sample_truncated(rng, p, 8.0);  // about 10 sigma out
    ASSERT_GE(v, 8.0);
    ASSERT_LT(v, 12.0);
  }
}

TEST(GaussianChol, ReparamIdentities) {
  Rng rng(1);
  const GaussianChol g({1.0, -2.0, 0.5}, {1.0, 0, 0, 0.3, 2.0, 0, -0.1, 0.4, 0.7});
  const std::vector<double> zero(3, 0.0);
  EXPECT_EQ(gaussian_sample_reparam(rng, g, std::span<const double>(zero)), g.mean);
  const GaussianChol id = GaussianChol::isotropic({0.0, 0.0, 0.0}, 1.0);
  const std::vector<double> eps = {0.3, -1.2, 2.5};
  EXPECT_EQ(gaussian_sample_reparam(rng, id, std::span<const double>(eps)), eps);
  const std::vector<double> bad(2, 0.0);
  EXPECT_THROW(gaussian_sample_reparam(rng, g, std::span<const double>(bad)), DomainError);
}

TEST(GaussianChol, RejectsInvalidFactor) {
  EXPECT_THROW(GaussianChol({0.0, 0.0}, {1.0, 0.5, 0.0, 1.0}), DomainError);
  EXPECT_THROW(GaussianChol({0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}), DomainError);
  EXPECT_THROW(GaussianChol({0.0}, {1.0, 0.0}), DomainError);
}

TEST(GaussianChol, SampleCovarianceMatches) {
  const GaussianChol g({0.0, 1.0, 2.0}, {1.0, 0, 0, 0.5, 0.8, 0, -0.3, 0.2, 0.4});
  Rng rng(33);
  constexpr int kN = 100000;
  const std::size_t d = 3;
  std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
  std::vector<std::vector<double>> xs;
  xs.reserve(kN);
  for (int i = 0; i < kN; ++i) xs.push_back(gaussian_sample_reparam(rng, g));
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += x[i] / kN;
  }
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (kN - 1);
    }
  }
  const auto truth = g.covariance();
  double diff = 0.0, norm = 0.0;
  for (std::size_t k = 0; k < d * d; ++k) {
    diff += (cov[k] - truth[k]) * (cov[k] - truth[k]);
    norm += truth[k] * truth[k];
  }
  EXPECT_LT(std::sqrt(diff / norm), 0.05);
}

TEST(GaussianChol, LogPdf) {
  EXPECT_NEAR(gaussian_logpdf(std::vector<double>{0.0}, GaussianChol::isotropic({0.0}, 1.0)), -kHalfLog2Pi, 1e-15);
  const GaussianChol g({1.0, 2.0}, {1.0, 0.0, 0.5, 1.5});
  const GaussianChol g2({1.0, 2.0}, {2.0, 0.0, 1.0, 3.0});
  EXPECT_NEAR(gaussian_logpdf(g.mean, g) - gaussian_logpdf(g.mean, g2), 2.0 * std::log(2.0), 1e-14);
}

TEST(GaussianChol, LogPdfMatchesDenseEvaluation) {
  Rng rng(44);
  const std::size_t d = 5;
  std::vector<double> l(d * d, 0.0), mean(d);
  for (std::size_t i = 0; i < d; ++i) {
    mean[i] = rng.uniform() * 2 - 1;
    for (std::size_t j = 0; j < i; ++j) l[i * d + j] = rng.uniform() - 0.5;
    l[i * d + i] = 0.5 + rng.uniform();
  }
  const GaussianChol g(mean, l);
  std::vector<double> x(d);
  for (double& v : x) v = rng.uniform() * 4 - 2;

  // Dense oracle: Gauss-Jordan inverse and LU determinant of the covariance.
  std::vector<double> a = g.covariance(), inv(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
  double det = 1.0;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < d; ++r) {
      if (std::abs(a[r * d + c]) > std::abs(a[piv * d + c])) piv = r;
    }
    if (piv != c) {
      for (std::size_t k = 0; k < d; ++k) {
        std::swap(a[c * d + k], a[piv * d + k]);
        std::swap(inv[c * d + k], inv[piv * d + k]);
      }
      det = -det;
    }
    const double p = a[c * d + c];
    det *= p;
    for (std::size_t k = 0; k < d; ++k) {
      a[c * d + k] /= p;
      inv[c * d + k] /= p;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = a[r * d + c];
      for (std::size_t k = 0; k < d; ++k) {
        a[r * d + k] -= f * a[c * d + k];
        inv[r * d + k] -= f * inv[c * d + k];
      }
    }
  }
  double quad = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) quad += (x[i] - mean[i]) * inv[i * d + j] * (x[j] - mean[j]);
  }
  const double dense = -0.5 * quad - 0.5 * std::log(det) - d * kHalfLog2Pi;
  EXPECT_NEAR(gaussian_logpdf(x, g), dense, 1e-10);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
  Rng c = Rng::for_stream(9, 4), d = Rng::for_stream(9, 4), e = Rng::for_stream(9, 5);
  EXPECT_EQ(c(), d());
  EXPECT_NE(Rng::for_stream(9, 4)(), e());
  Rng f(7), g(7);
  Rng fs = f.split(), gs = g.split();
  for (int i = 0; i < 100; ++i) ASSERT_EQ(fs(), gs());
}

TEST(Rng, SamplersDeterministicGivenSeed) {
  const Mixture3Param m({0.2, 0.5, 0.3}, {0.0, 2.0, 1.0}, {0.5, 0.4, 1.0});
  const NegBinomParam nb = negbinom_from_glm(0.5, 1.0);
  Rng a(77), b(77);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(mixture3_sample_truncated(a, m, 2.0), mixture3_sample_truncated(b, m, 2.0));
    ASSERT_EQ(censored_nb_sample(a, nb, CensorBound(30)), censored_nb_sample(b, nb, CensorBound(30)));
  }
}

TEST(Special, NormalTailInverse) {
  for (double z : {-3.0, 0.0, 1.0, 5.0, 20.0, 36.0, 38.0, 50.0}) {
    EXPECT_NEAR(normal_sf_inverse_log(normal_log_sf(z)), z, 1e-8 * std::max(1.0, std::abs(z)));
  }
}
