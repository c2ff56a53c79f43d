#pragma once

// Minimal reverse-mode automatic differentiation over scalar expressions.
//
// A Tape records every intermediate value together with the local partial
// derivatives to its parents. Because nodes are appended in evaluation order
// the tape is already topologically sorted, so the backward sweep is a single
// reverse pass. Nodes may have any number of parents, which keeps long dot
// products (the GLM linear predictors) to one node each.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "genhai/special.hpp"

namespace genhai::ad {

class Tape;

/// Handle to one node on a Tape. Cheap to copy; only valid while its tape is
/// alive and has not been cleared.
struct Var {
  double val = 0.0;
  std::uint32_t idx = 0;
  Tape* tape = nullptr;

  double value() const { return val; }
};

class Tape {
 public:
  Tape() { edge_begin_.push_back(0); }

  Var variable(double v) { return push(v, {}, {}); }

  Var push(double value, std::initializer_list<std::uint32_t> parents,
           std::initializer_list<double> partials) {
    assert(parents.size() == partials.size());
    edge_parent_.insert(edge_parent_.end(), parents.begin(), parents.end());
    edge_partial_.insert(edge_partial_.end(), partials.begin(), partials.end());
    return close_node(value);
  }

  /// Node with an arbitrary number of parents.
  Var push(double value, std::span<const std::uint32_t> parents,
           std::span<const double> partials) {
    assert(parents.size() == partials.size());
    edge_parent_.insert(edge_parent_.end(), parents.begin(), parents.end());
    edge_partial_.insert(edge_partial_.end(), partials.begin(), partials.end());
    return close_node(value);
  }

  /// Adjoint of every node with respect to `output`.
  std::vector<double> adjoints(const Var& output) const {
    std::vector<double> adj(values_.size(), 0.0);
    adj[output.idx] = 1.0;
    for (std::size_t i = output.idx + 1; i-- > 0;) {
      const double a = adj[i];
      if (a == 0.0) continue;
      for (std::uint32_t e = edge_begin_[i]; e < edge_begin_[i + 1]; ++e) {
        adj[edge_parent_[e]] += a * edge_partial_[e];
      }
    }
    return adj;
  }

  std::size_t size() const { return values_.size(); }

  void clear() {
    values_.clear();
    edge_parent_.clear();
    edge_partial_.clear();
    edge_begin_.assign(1, 0);
  }

 private:
  Var close_node(double value) {
    values_.push_back(value);
    edge_begin_.push_back(static_cast<std::uint32_t>(edge_parent_.size()));
    return Var{value, static_cast<std::uint32_t>(values_.size() - 1), this};
  }

  std::vector<double> values_;
  std::vector<std::uint32_t> edge_begin_;
  std::vector<std::uint32_t> edge_parent_;
  std::vector<double> edge_partial_;
};

inline Var unary(const Var& a, double value, double d) {
  return a.tape->push(value, {a.idx}, {d});
}

inline Var binary(const Var& a, const Var& b, double value, double da, double db) {
  assert(a.tape == b.tape);
  return a.tape->push(value, {a.idx, b.idx}, {da, db});
}

inline Var operator+(const Var& a, const Var& b) { return binary(a, b, a.val + b.val, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return binary(a, b, a.val - b.val, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return binary(a, b, a.val * b.val, b.val, a.val); }
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.val / b.val;
  return binary(a, b, q, 1.0 / b.val, -q / b.val);
}

inline Var operator+(const Var& a, double b) { return unary(a, a.val + b, 1.0); }
inline Var operator+(double a, const Var& b) { return unary(b, a + b.val, 1.0); }
inline Var operator-(const Var& a, double b) { return unary(a, a.val - b, 1.0); }
inline Var operator-(double a, const Var& b) { return unary(b, a - b.val, -1.0); }
inline Var operator*(const Var& a, double b) { return unary(a, a.val * b, b); }
inline Var operator*(double a, const Var& b) { return unary(b, a * b.val, a); }
inline Var operator/(const Var& a, double b) { return unary(a, a.val / b, 1.0 / b); }
inline Var operator/(double a, const Var& b) {
  const double q = a / b.val;
  return unary(b, q, -q / b.val);
}
inline Var operator-(const Var& a) { return unary(a, -a.val, -1.0); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator+=(Var& a, double b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, double b) { return a = a * b; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.val);
  return unary(a, e, e);
}
inline Var log(const Var& a) { return unary(a, std::log(a.val), 1.0 / a.val); }
inline Var log1p(const Var& a) { return unary(a, std::log1p(a.val), 1.0 / (1.0 + a.val)); }
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val);
  return unary(a, s, 0.5 / s);
}
inline Var square(const Var& a) { return unary(a, a.val * a.val, 2.0 * a.val); }

inline Var log_gamma(const Var& a) {
  return unary(a, genhai::log_gamma(a.val), boost::math::digamma(a.val));
}
inline Var softplus(const Var& a) {
  return unary(a, genhai::softplus(a.val), genhai::logistic(a.val));
}
inline Var logistic(const Var& a) {
  const double p = genhai::logistic(a.val);
  return unary(a, p, p * (1.0 - p));
}

/// c + Σ w_i x_i as a single node.
inline Var affine(std::span<const Var> w, const Var& c, std::span<const double> x) {
  assert(w.size() == x.size());
  thread_local std::vector<std::uint32_t> parents;
  thread_local std::vector<double> partials;
  parents.clear();
  partials.clear();
  double v = c.val;
  for (std::size_t i = 0; i < w.size(); ++i) {
    v += w[i].val * x[i];
    parents.push_back(w[i].idx);
    partials.push_back(x[i]);
  }
  parents.push_back(c.idx);
  partials.push_back(1.0);
  return c.tape->push(v, parents, partials);
}

/// Σ a_i as a single node.
inline Var sum(std::span<const Var> a) {
  assert(!a.empty());
  thread_local std::vector<std::uint32_t> parents;
  thread_local std::vector<double> partials;
  parents.clear();
  partials.clear();
  double v = 0.0;
  for (const Var& x : a) {
    v += x.val;
    parents.push_back(x.idx);
    partials.push_back(1.0);
  }
  return a.front().tape->push(v, parents, partials);
}

/// log Σ exp(a_i) as a single node with softmax partials.
inline Var log_sum_exp(std::span<const Var> a) {
  assert(!a.empty());
  thread_local std::vector<double> vals;
  vals.clear();
  for (const Var& x : a) vals.push_back(x.val);
  const double lse = genhai::log_sum_exp(std::span<const double>(vals));
  thread_local std::vector<std::uint32_t> parents;
  thread_local std::vector<double> partials;
  parents.clear();
  partials.clear();
  for (const Var& x : a) {
    parents.push_back(x.idx);
    partials.push_back(std::isfinite(lse) ? std::exp(x.val - lse) : 0.0);
  }
  return a.front().tape->push(lse, parents, partials);
}

/// log(1 - exp(a)) for a < 0.
inline Var log1m_exp(const Var& a) {
  // d/da log(1 - e^a) = -e^a / (1 - e^a) = -1 / expm1(-a)
  return unary(a, genhai::log1m_exp(a.val), -1.0 / std::expm1(-a.val));
}

}  // namespace genhai::ad

namespace genhai {

inline double value_of(double x) { return x; }
inline double value_of(const ad::Var& x) { return x.val; }

}  // namespace genhai
