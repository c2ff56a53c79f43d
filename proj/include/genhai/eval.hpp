#pragma once

// Held-out evaluation: per-sub-program NLL and perplexity, classifier metrics
// and calibration for D_r_i.
//
// Each sub-program's predictive quantities average over S posterior draws
// taken once from stream (seed, sub-program index) and shared by every row,
// so scores are a pure function of (artifact, table, S, seed) whatever the
// worker count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "genhai/error.hpp"
#include "genhai/rng.hpp"
#include "genhai/special.hpp"
#include "genhai/subprograms.hpp"
#include "genhai/svi.hpp"
#include "json.hpp"

namespace genhai {

struct EvalOptions {
  int draws = 64;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double threshold = 0.5;
  std::size_t bins = 10;

  void validate() const {
    if (draws < 1) throw DomainError("draws must be >= 1");
    if (workers < 1) throw DomainError("workers must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw DomainError("threshold must lie in [0, 1]");
    if (bins < 1) throw DomainError("bins must be >= 1");
  }
};

struct GenMetric {
  std::size_t n = 0;
  double nll = 0.0;
  double perplexity = 1.0;

  static GenMetric from_nll(std::size_t n, double nll) { return GenMetric{n, nll, std::exp(nll)}; }

  /// Throws ContractError unless perplexity = exp(nll) to 1e-9 relative.
  void check_identity() const {
    const double want = std::exp(nll);
    if (!(std::abs(perplexity - want) <= 1e-9 * std::max(1.0, std::abs(want)))) {
      throw ContractError("perplexity does not equal exp(nll)");
    }
  }
};

/// Absent entries had an empty held-out table.
using GenMetrics = std::array<std::optional<GenMetric>, kNumSubPrograms>;

struct ClfMetrics {
  std::size_t n = 0;
  std::size_t n_positive = 0;
  double threshold = 0.5;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;  ///< absent with no predicted positives
  std::optional<double> recall;     ///< absent with no actual positives
  std::optional<double> f1;
  std::optional<double> auroc;  ///< absent for a single-class set
  std::optional<double> auprc;
  std::string diagnostic;
};

struct CalibrationBin {
  double lo = 0.0, hi = 0.0;
  double mean_predicted = 0.0;
  double empirical_rate = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  std::size_t n = 0;
  double ece = 0.0;
};

// --------------------------------------------------------- score metrics

/// Mann-Whitney rank statistic with tied scores sharing their mean rank.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

/// Average precision: sum over distinct thresholds of (recall step) x
/// precision at that threshold.
inline std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("auprc: scores and labels differ in length");
  const std::size_t n = scores.size();
  const std::size_t n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0 || n_pos == n) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) tp += labels[order[j++]] ? 1 : 0;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    ap += (recall - prev_recall) * static_cast<double>(tp) / static_cast<double>(j);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline ClfMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                         double threshold = 0.5) {
  if (scores.size() != labels.size()) throw ContractError("classification: scores and labels differ in length");
  ClfMetrics m;
  m.n = scores.size();
  m.threshold = threshold;
  for (std::size_t i = 0; i < m.n; ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      ++m.n_positive;
      ++(pred ? m.tp : m.fn);
    } else {
      ++(pred ? m.fp : m.tn);
    }
  }
  if (m.n == 0) {
    m.diagnostic = "empty evaluation set";
    return m;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n);
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.precision && m.recall) {
    const double s = *m.precision + *m.recall;
    m.f1 = s > 0.0 ? 2.0 * *m.precision * *m.recall / s : 0.0;
  }
  m.auroc = auroc(scores, labels);
  m.auprc = auprc(scores, labels);
  if (!m.auroc) m.diagnostic = "single-class evaluation set: AUROC and AUPRC are undefined";
  return m;
}

/// Equal-width bins on [0, 1]; a score of exactly 1 falls in the last bin.
inline CalibrationReport calibration(std::span<const double> scores, std::span<const int> labels,
                                     std::size_t n_bins = 10) {
  if (scores.size() != labels.size()) throw ContractError("calibration: scores and labels differ in length");
  if (n_bins < 1) throw DomainError("calibration needs at least one bin");
  CalibrationReport r;
  r.n = scores.size();
  std::vector<double> sum_pred(n_bins, 0.0), sum_y(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < r.n; ++i) {
    const double s = std::clamp(scores[i], 0.0, 1.0);
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(s * static_cast<double>(n_bins)));
    sum_pred[b] += s;
    sum_y[b] += labels[i];
    ++count[b];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    CalibrationBin bin;
    bin.lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = count[b];
    if (count[b]) {
      bin.mean_predicted = sum_pred[b] / static_cast<double>(count[b]);
      bin.empirical_rate = sum_y[b] / static_cast<double>(count[b]);
      r.ece += static_cast<double>(count[b]) / static_cast<double>(r.n) *
               std::abs(bin.mean_predicted - bin.empirical_rate);
    }
    r.bins.push_back(bin);
  }
  return r;
}

// ------------------------------------------------------------- scoring

namespace detail {

template <class F>
void parallel_rows(std::size_t n, unsigned workers, F&& row) {
  const unsigned w = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) row(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = n * k / w; i < n * (k + 1) / w; ++i) row(i);
    });
  }
}

inline std::vector<std::vector<double>> shared_draws(const FittedSubProgram& f, const EvalOptions& o) {
  Rng rng = Rng::for_stream(o.seed, index_of(f.spec.id));
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(o.draws));
  for (auto& d : draws) d = draw_theta(rng, f);
  return draws;
}

}  // namespace detail

/// Per-row predictive log-likelihood: log of the mean likelihood over the
/// shared posterior draws.
inline std::vector<double> predictive_logliks(const TrainingTable& t, const FittedSubProgram& f,
                                              const EvalOptions& o = {}) {
  o.validate();
  if (t.input_dim != f.spec.input_dim) throw ContractError("table and sub-program input dimensions differ");
  const auto draws = detail::shared_draws(f, o);
  std::vector<double> out(t.size());
  detail::parallel_rows(t.size(), o.workers, [&](std::size_t i) {
    std::vector<double> terms(draws.size());
    for (std::size_t s = 0; s < draws.size(); ++s) terms[s] = loglik_point(t.ys[i], t.x(i), draws[s], f.spec);
    out[i] = log_sum_exp(std::span<const double>(terms)) - std::log(static_cast<double>(draws.size()));
  });
  return out;
}

/// Posterior-mean predictive probability of y = 1 per row.
inline std::vector<double> predictive_probabilities(const TrainingTable& t, const FittedSubProgram& f,
                                                    const EvalOptions& o = {}) {
  o.validate();
  if (f.spec.family != Family::bernoulli) throw DomainError(std::string(f.spec.name()) + " is not a Bernoulli sub-program");
  if (t.input_dim != f.spec.input_dim) throw ContractError("table and sub-program input dimensions differ");
  const auto draws = detail::shared_draws(f, o);
  std::vector<double> out(t.size());
  detail::parallel_rows(t.size(), o.workers, [&](std::size_t i) {
    double p = 0.0;
    for (const auto& d : draws) p += bernoulli_probability_at(d, f.spec, t.x(i));
    out[i] = p / static_cast<double>(draws.size());
  });
  return out;
}

inline std::vector<int> labels_of(const TrainingTable& t) {
  std::vector<int> y(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = t.ys[i] != 0.0 ? 1 : 0;
  return y;
}

inline GenMetrics eval_gen(const Registry& reg, const TrainingTables& tables, const EvalOptions& o = {}) {
  GenMetrics out;
  for (SubProgramId id : kAllSubPrograms) {
    const TrainingTable& t = tables[index_of(id)];
    if (t.empty()) continue;
    const auto ll = predictive_logliks(t, at(reg, id), o);
    double sum = 0.0;
    for (double v : ll) sum += v;
    out[index_of(id)] = GenMetric::from_nll(t.size(), -sum / static_cast<double>(t.size()));
    out[index_of(id)]->check_identity();
  }
  return out;
}

struct ClfEvaluation {
  ClfMetrics metrics;
  CalibrationReport calibration;
};

/// Classifier metrics and calibration of a Bernoulli sub-program (D_r_i by
/// default) on its held-out table.
inline ClfEvaluation eval_clf(const Registry& reg, const TrainingTables& tables, const EvalOptions& o = {},
                              SubProgramId id = SubProgramId::r_i) {
  const TrainingTable& t = tables[index_of(id)];
  const auto scores = predictive_probabilities(t, at(reg, id), o);
  const auto labels = labels_of(t);
  ClfEvaluation e{classification_metrics(scores, labels, o.threshold), calibration(scores, labels, o.bins)};
  if (t.empty()) e.metrics.diagnostic = std::string(name_of(id)) + " held-out table is empty";
  return e;
}

// ------------------------------------------------------------- reports

struct EvalReport {
  GenMetrics gen;
  ClfEvaluation clf;
  EvalOptions options;
  std::size_t n_records = 0;
};

inline EvalReport evaluate(const Registry& reg, const TrainingTables& held_out, std::size_t n_records,
                           const EvalOptions& o = {}) {
  return EvalReport{eval_gen(reg, held_out, o), eval_clf(reg, held_out, o), o, n_records};
}

namespace detail {

inline nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v, int prec = 4) { return v ? fmt(*v, prec) : "n/a"; }

}  // namespace detail

inline nlohmann::ordered_json to_json(const ClfMetrics& m) {
  return {{"n", m.n},
          {"n_positive", m.n_positive},
          {"threshold", m.threshold},
          {"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}},
          {"accuracy", m.accuracy},
          {"precision", detail::opt(m.precision)},
          {"recall", detail::opt(m.recall)},
          {"f1", detail::opt(m.f1)},
          {"auroc", detail::opt(m.auroc)},
          {"auprc", detail::opt(m.auprc)},
          {"diagnostic", m.diagnostic}};
}

inline nlohmann::ordered_json to_json(const CalibrationReport& c) {
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const auto& b : c.bins) {
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"mean_predicted", b.mean_predicted},
                    {"empirical_rate", b.empirical_rate},
                    {"count", b.count}});
  }
  return {{"n", c.n}, {"ece", c.ece}, {"bins", std::move(bins)}};
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json gen = nlohmann::ordered_json::array();
  for (SubProgramId id : kAllSubPrograms) {
    const auto& g = r.gen[index_of(id)];
    nlohmann::ordered_json row = {{"name", name_of(id)}};
    if (g) {
      g->check_identity();
      row["n"] = g->n;
      row["nll"] = g->nll;
      row["perplexity"] = g->perplexity;
    } else {
      row["n"] = 0;
      row["nll"] = nullptr;
      row["perplexity"] = nullptr;
    }
    gen.push_back(std::move(row));
  }
  return {{"population", "per-test rows of the held-out split"},
          {"n_records", r.n_records},
          {"draws", r.options.draws},
          {"seed", r.options.seed},
          {"generative", std::move(gen)},
          {"classifier", {{"subprogram", "D_r_i"}, {"metrics", to_json(r.clf.metrics)}}},
          {"calibration", to_json(r.clf.calibration)}};
}

inline std::string to_text(const EvalReport& r) {
  std::ostringstream os;
  os << "Held-out evaluation, per test (" << r.n_records << " records, S=" << r.options.draws << ")\n\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %9s %10s %11s\n", "sub-program", "rows", "NLL", "perplexity");
  os << line;
  for (SubProgramId id : kAllSubPrograms) {
    const auto& g = r.gen[index_of(id)];
    const std::string name(name_of(id));
    if (g) {
      std::snprintf(line, sizeof line, "%-14s %9zu %10.4f %11.4f\n", name.c_str(), g->n, g->nll, g->perplexity);
    } else {
      std::snprintf(line, sizeof line, "%-14s %9d %10s %11s\n", name.c_str(), 0, "n/a", "n/a");
    }
    os << line;
  }
  const ClfMetrics& m = r.clf.metrics;
  os << "\nD_r_i classifier (threshold " << detail::fmt(m.threshold, 2) << ", " << m.n << " rows, " << m.n_positive
     << " positive)\n";
  os << "  accuracy  " << detail::fmt(m.accuracy) << "\n  precision " << detail::fmt(m.precision) << "\n  recall    "
     << detail::fmt(m.recall) << "\n  f1        " << detail::fmt(m.f1) << "\n  auroc     " << detail::fmt(m.auroc)
     << "\n  auprc     " << detail::fmt(m.auprc) << '\n';
  if (!m.diagnostic.empty()) os << "  note: " << m.diagnostic << '\n';
  os << "\nD_r_i calibration (ECE " << detail::fmt(r.clf.calibration.ece) << ")\n";
  for (const auto& b : r.clf.calibration.bins) {
    std::snprintf(line, sizeof line, "  [%.1f, %.1f) %8zu  predicted %.4f  observed %.4f\n", b.lo, b.hi, b.count,
                  b.mean_predicted, b.empirical_rate);
    os << line;
  }
  return os.str();
}

}  // namespace genhai
