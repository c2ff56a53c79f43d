#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "genhai/ad.hpp"
#include "genhai/distributions.hpp"

using namespace genhai;
using ad::Var;

namespace {

/// d f / d x at x0 from the tape, against a central difference.
void expect_derivative(const std::function<Var(Var)>& fv, const std::function<double(double)>& fd, double x0,
                       double tol = 1e-7) {
  ad::Tape tape;
  const Var x = tape.variable(x0);
  const Var y = fv(x);
  EXPECT_NEAR(y.val, fd(x0), 1e-12 * std::max(1.0, std::abs(y.val)));
  const double g = tape.adjoints(y)[x.idx];
  const double h = 1e-6 * std::max(1.0, std::abs(x0));
  const double fdiff = (fd(x0 + h) - fd(x0 - h)) / (2 * h);
  EXPECT_NEAR(g, fdiff, tol * std::max(1.0, std::abs(fdiff))) << "at x=" << x0;
}

}  // namespace

TEST(Ad, UnaryOpsMatchFiniteDifferences) {
  for (double x : {0.3, 1.7, 4.2}) {
    expect_derivative([](Var v) { return exp(v); }, [](double v) { return std::exp(v); }, x);
    expect_derivative([](Var v) { return log(v); }, [](double v) { return std::log(v); }, x);
    expect_derivative([](Var v) { return log1p(v); }, [](double v) { return std::log1p(v); }, x);
    expect_derivative([](Var v) { return sqrt(v); }, [](double v) { return std::sqrt(v); }, x);
    expect_derivative([](Var v) { return ad::square(v); }, [](double v) { return v * v; }, x);
    expect_derivative([](Var v) { return log_gamma(v); }, [](double v) { return genhai::log_gamma(v); }, x);
    expect_derivative([](Var v) { return softplus(v); }, [](double v) { return genhai::softplus(v); }, x - 2);
    expect_derivative([](Var v) { return logistic(v); }, [](double v) { return genhai::logistic(v); }, x - 2);
    expect_derivative([](Var v) { return log1m_exp(v); }, [](double v) { return genhai::log1m_exp(v); }, -x);
  }
}

TEST(Ad, ArithmeticMatchesFiniteDifferences) {
  auto f = [](auto x) { return (x * 3.0 - 1.0) / (x + 2.0) + 5.0 / x - (2.0 - x) * x; };
  for (double x : {0.5, 1.5, 3.0}) {
    expect_derivative([&](Var v) { return f(v); }, [&](double v) { return f(v); }, x);
  }
}

TEST(Ad, NaryNodesMatchFiniteDifferences) {
  const std::vector<double> xs = {0.5, -1.0, 2.0};
  const std::vector<double> w0 = {0.1, 0.2, -0.3};
  ad::Tape tape;
  std::vector<Var> w;
  for (double v : w0) w.push_back(tape.variable(v));
  const Var c = tape.variable(0.4);
  const Var eta = ad::affine(w, c, xs);
  std::vector<Var> parts = {eta, ad::square(w[0]), exp(w[1])};
  const Var out = ad::log_sum_exp(parts) + ad::sum(parts);
  const auto adj = tape.adjoints(out);

  auto fval = [&](std::vector<double> wv, double cv) {
    const double e = genhai::affine(wv, cv, xs);
    std::vector<double> p = {e, wv[0] * wv[0], std::exp(wv[1])};
    return genhai::log_sum_exp(std::span<const double>(p)) + p[0] + p[1] + p[2];
  };
  EXPECT_NEAR(out.val, fval(w0, 0.4), 1e-13);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    auto up = w0, dn = w0;
    up[i] += h;
    dn[i] -= h;
    EXPECT_NEAR(adj[w[i].idx], (fval(up, 0.4) - fval(dn, 0.4)) / (2 * h), 1e-7);
  }
  EXPECT_NEAR(adj[c.idx], (fval(w0, 0.4 + h) - fval(w0, 0.4 - h)) / (2 * h), 1e-7);
}

TEST(Ad, ReusedNodesAccumulate) {
  ad::Tape tape;
  const Var x = tape.variable(3.0);
  const Var y = x * x * x;
  EXPECT_DOUBLE_EQ(tape.adjoints(y)[x.idx], 27.0);
}

TEST(Ad, TemplatedDensitiesAgreeWithDoubleEvaluation) {
  ad::Tape tape;
  const Var n = tape.variable(2.5);
  const Var lp = tape.variable(std::log(0.3));
  const Var l1p = tape.variable(std::log(0.7));
  for (int y = 0; y <= 7; ++y) {
    const double dv = censored_nb_logpmf<double>(y, 2.5, std::log(0.3), std::log(0.7), CensorBound(7));
    const Var av = censored_nb_logpmf<Var>(y, n, lp, l1p, CensorBound(7));
    EXPECT_NEAR(av.val, dv, 1e-13);
  }
  const Var mu = tape.variable(0.2), sigma = tape.variable(1.3);
  EXPECT_NEAR(lognormal_logpdf<Var>(2.0, mu, sigma).val, lognormal_logpdf(2.0, LogNormalParam(0.2, 1.3)), 1e-14);
}

TEST(Ad, ClearResetsTape) {
  ad::Tape tape;
  tape.variable(1.0);
  tape.variable(2.0);
  EXPECT_EQ(tape.size(), 2u);
  tape.clear();
  EXPECT_EQ(tape.size(), 0u);
  const Var x = tape.variable(2.0);
  EXPECT_DOUBLE_EQ(tape.adjoints(log(x))[x.idx], 0.5);
}
