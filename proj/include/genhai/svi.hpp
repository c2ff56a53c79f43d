#pragma once

// Stochastic variational inference for a single sub-program.
//
// The variational posterior is N(m, L L^T) over the unconstrained parameter
// vector. L is lower triangular; its diagonal is softplus(raw) so it stays
// positive, its strict lower part is raw. One ELBO particle is
//
//   theta = m + L eps,   eps ~ N(0, I)
//   value = scale * sum_batch loglik(y | x, constrain(theta)) + log prior(theta)
//           + sum_i log L_ii + |eps|^2 / 2 + D/2 log(2 pi)
//
// where the last three terms are -log q(theta) with eps held fixed. The
// likelihood gradient comes from the reverse-mode tape; prior and entropy
// gradients are closed form.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "genhai/ad.hpp"
#include "genhai/distributions.hpp"
#include "genhai/error.hpp"
#include "genhai/rng.hpp"
#include "genhai/subprograms.hpp"

namespace genhai {

/// Rows (x, y) for one sub-program, x stored flat.
struct TrainingTable {
  SubProgramId id = SubProgramId::cont;
  std::size_t input_dim = 0;
  std::vector<double> xs;
  std::vector<double> ys;

  TrainingTable() = default;
  explicit TrainingTable(SubProgramId sid) : id(sid), input_dim(genhai::input_dim(sid)) {}

  std::size_t size() const { return ys.size(); }
  bool empty() const { return ys.empty(); }
  std::span<const double> x(std::size_t i) const { return {xs.data() + i * input_dim, input_dim}; }

  void add(std::span<const double> x, double y) {
    if (x.size() != input_dim) {
      throw DomainError(std::string(name_of(id)) + ": row has " + std::to_string(x.size()) +
                        " features, expected " + std::to_string(input_dim));
    }
    xs.insert(xs.end(), x.begin(), x.end());
    ys.push_back(y);
  }
};

using TrainingTables = std::array<TrainingTable, kNumSubPrograms>;

struct TrainConfig {
  int steps = 5000;
  int batch_size = 512;
  int mc_particles = 1;
  double learning_rate = 0.01;
  /// Learning rate at the last step as a fraction of the first; the decay in
  /// between is geometric. 1 keeps the rate constant.
  double lr_final_fraction = 0.1;
  std::uint64_t seed = 0;
  double chol_init_scale = 0.1;
  std::optional<double> grad_clip;
  bool diagonal_only = false;
  /// Start the intercept (and scale) at moment estimates from the data
  /// instead of zero.
  bool data_init = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (steps < 1) throw DomainError("steps must be positive");
    if (batch_size < 1) throw DomainError("batch_size must be positive");
    if (mc_particles < 1) throw DomainError("mc_particles must be positive");
    if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
    if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) {
      throw DomainError("lr_final_fraction must lie in (0, 1]");
    }
    if (!(chol_init_scale > 0.0)) throw DomainError("chol_init_scale must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) throw DomainError("grad_clip must be positive");
  }
};

struct TrainTrace {
  std::vector<double> elbo;       ///< NaN for aborted steps
  std::vector<double> grad_norm;  ///< NaN for aborted steps
  double wall_time_s = 0.0;
  std::optional<GaussianChol> final_posterior;

  static constexpr std::size_t kSmoothWindow = 100;

  /// Trailing mean over the last `window` finite ELBO values up to `step`.
  double smoothed(std::size_t step, std::size_t window = kSmoothWindow) const {
    double s = 0.0;
    std::size_t n = 0;
    const std::size_t lo = step + 1 >= window ? step + 1 - window : 0;
    for (std::size_t i = lo; i <= step && i < elbo.size(); ++i) {
      if (std::isfinite(elbo[i])) {
        s += elbo[i];
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<double> smoothed_series(std::size_t window = kSmoothWindow) const {
    std::vector<double> out(elbo.size());
    for (std::size_t i = 0; i < elbo.size(); ++i) out[i] = smoothed(i, window);
    return out;
  }

  double first_window_mean(std::size_t window = kSmoothWindow) const {
    return smoothed(std::min(window, elbo.size()) - 1, window);
  }
  double final_window_mean(std::size_t window = kSmoothWindow) const { return smoothed(elbo.size() - 1, window); }
};

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, TrainTrace trace, std::string subprogram = {})
      : std::runtime_error(what), trace_(std::move(trace)), subprogram_(std::move(subprogram)) {}

  const TrainTrace& trace() const { return trace_; }
  const std::string& subprogram() const { return subprogram_; }

 private:
  TrainTrace trace_;
  std::string subprogram_;
};

/// A single ELBO evaluation that produced a non-finite value.
class ElboAbort : public DomainError {
 public:
  ElboAbort(std::size_t datum, std::string slice, const std::string& what)
      : DomainError(what), datum_(datum), slice_(std::move(slice)) {}

  std::size_t datum() const { return datum_; }
  const std::string& slice() const { return slice_; }

 private:
  std::size_t datum_;
  std::string slice_;
};

/// Optimized variational parameters: m and the raw Cholesky matrix.
struct VariationalParams {
  std::vector<double> mean;
  std::vector<double> chol_raw;  ///< D x D row-major; only the lower triangle is used

  std::size_t dim() const { return mean.size(); }

  double chol_entry(std::size_t i, std::size_t j) const {
    const double r = chol_raw[i * dim() + j];
    return i == j ? softplus(r) : (j < i ? r : 0.0);
  }

  GaussianChol to_gaussian() const {
    const std::size_t d = dim();
    std::vector<double> l(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) l[i * d + j] = chol_entry(i, j);
    }
    return GaussianChol(mean, std::move(l));
  }

  static VariationalParams from_gaussian(const GaussianChol& g) {
    const std::size_t d = g.dim();
    VariationalParams v{g.mean, std::vector<double>(d * d, 0.0)};
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < i; ++j) v.chol_raw[i * d + j] = g.at(i, j);
      v.chol_raw[i * d + i] = softplus_inverse(g.at(i, i));
    }
    return v;
  }
};

struct ElboResult {
  double value = 0.0;
  std::vector<double> grad_mean;
  std::vector<double> grad_chol;  ///< d value / d L_ij, D x D row-major, lower triangle
};

/// Indices of a mini-batch into `table`; the likelihood is scaled by
/// table.size() / batch.size().
inline ElboResult elbo_estimate(Rng& rng, const TrainingTable& table, std::span<const std::size_t> batch,
                                const GaussianChol& posterior, const SubProgramSpec& spec, const Prior& prior,
                                int particles = 1) {
  const ParamLayout layout = ParamLayout::for_spec(spec);
  const std::size_t d = layout.total_dim;
  if (batch.empty()) throw DomainError("ELBO batch must be non-empty");
  if (posterior.dim() != d) throw DomainError("posterior dimension does not match the parameter layout");
  if (particles < 1) throw DomainError("particles must be positive");
  const double scale = static_cast<double>(table.size()) / static_cast<double>(batch.size());

  ElboResult out;
  out.grad_mean.assign(d, 0.0);
  out.grad_chol.assign(d * d, 0.0);

  thread_local ad::Tape tape;
  std::vector<double> eps(d);
  std::vector<double> g(d);
  std::vector<ad::Var> lls;
  for (int p = 0; p < particles; ++p) {
    for (double& e : eps) e = standard_normal(rng);
    const std::vector<double> theta = gaussian_sample_reparam(rng, posterior, std::span<const double>(eps));

    tape.clear();
    std::vector<ad::Var> leaves(d);
    for (std::size_t i = 0; i < d; ++i) leaves[i] = tape.variable(theta[i]);
    const std::vector<ad::Var> constrained = constrain<ad::Var>(std::span<const ad::Var>(leaves), spec);

    lls.clear();
    lls.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t row = batch[b];
      const ad::Var ll =
          loglik_point<ad::Var>(table.ys[row], table.x(row), std::span<const ad::Var>(constrained), spec);
      if (!std::isfinite(ll.val)) {
        std::size_t worst = 0;
        for (std::size_t i = 1; i < d; ++i) {
          if (!(std::abs(theta[i]) <= std::abs(theta[worst]))) worst = i;
        }
        const std::string& slice = layout.slice_at(worst).name;
        throw ElboAbort(row, slice,
                        std::string(spec.name()) + ": non-finite log-likelihood at datum " + std::to_string(row) +
                            " (largest parameter in slice '" + slice + "')");
      }
      lls.push_back(ll);
    }
    const ad::Var total = ad::sum(std::span<const ad::Var>(lls));
    const std::vector<double> adj = tape.adjoints(total);

    double value = scale * total.val + prior.log_density(theta);
    double half_eps_sq = 0.0;
    for (double e : eps) half_eps_sq += 0.5 * e * e;
    value += half_eps_sq + static_cast<double>(d) * kHalfLog2Pi;
    for (std::size_t i = 0; i < d; ++i) value += std::log(posterior.at(i, i));
    if (!std::isfinite(value)) {
      throw ElboAbort(0, layout.slices.front().name, std::string(spec.name()) + ": non-finite ELBO");
    }

    for (std::size_t i = 0; i < d; ++i) g[i] = scale * adj[leaves[i].idx];
    prior.accumulate_gradient(theta, g);

    out.value += value;
    for (std::size_t i = 0; i < d; ++i) {
      out.grad_mean[i] += g[i];
      for (std::size_t j = 0; j <= i; ++j) out.grad_chol[i * d + j] += g[i] * eps[j];
      out.grad_chol[i * d + i] += 1.0 / posterior.at(i, i);
    }
  }
  const double inv = 1.0 / particles;
  out.value *= inv;
  for (double& v : out.grad_mean) v *= inv;
  for (double& v : out.grad_chol) v *= inv;
  return out;
}

namespace detail {

inline void init_from_data(std::vector<double>& mean, const TrainingTable& table, const SubProgramSpec& spec) {
  if (table.empty()) return;
  const ParamLayout layout = ParamLayout::for_spec(spec);
  const double n = static_cast<double>(table.size());
  switch (spec.family) {
    case Family::bernoulli: {
      const double p = (std::accumulate(table.ys.begin(), table.ys.end(), 0.0) + 0.5) / (n + 1.0);
      mean[layout.slice("c").offset] = std::log(p / (1.0 - p));
      break;
    }
    case Family::censored_negbinom: {
      const double m = (std::accumulate(table.ys.begin(), table.ys.end(), 0.0) + 0.5) / n;
      mean[layout.slice("c").offset] = std::log(m);
      break;
    }
    case Family::lognormal: {
      double s = 0.0, s2 = 0.0;
      for (double y : table.ys) {
        s += std::log(y);
        s2 += std::log(y) * std::log(y);
      }
      const double mu = s / n;
      const double var = std::max(s2 / n - mu * mu, 1e-4);
      mean[layout.slice("c").offset] = mu;
      mean[layout.slice("log_sigma").offset] = 0.5 * std::log(var);
      break;
    }
    case Family::lognormal_mixture3: {
      // The free component starts on the tail above the fixed means.
      const double upper = std::max((*spec.fixed_means)[0], (*spec.fixed_means)[1]);
      double s = 0.0, tail = 0.0;
      std::size_t k = 0;
      for (double y : table.ys) {
        s += std::log(y);
        if (std::log(y) > upper) {
          tail += std::log(y);
          ++k;
        }
      }
      mean[layout.slice("c_mu3").offset] = k > 0 ? tail / static_cast<double>(k) : s / n + 1.0;
      break;
    }
  }
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

struct FitResult {
  FittedSubProgram fitted;
  TrainTrace trace;
};

/// Adam on (mean, raw Cholesky). Pure function of (table, spec, prior, config,
/// init). `init` warm-starts the posterior instead of the default start.
inline FitResult fit(const TrainingTable& table, const SubProgramSpec& spec, const Prior& prior,
                     const TrainConfig& config, const std::optional<GaussianChol>& init = {}) {
  config.validate();
  spec.validate();
  const std::string name(spec.name());
  if (table.empty()) throw DomainError(name + ": empty training table");
  if (table.input_dim != spec.input_dim) throw DomainError(name + ": training table has the wrong input_dim");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!in_support(spec, table.ys[i])) {
      throw DomainError(name + ": outcome " + detail::fmt_double(table.ys[i]) + " at row " + std::to_string(i) +
                        " is outside the family support");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const ParamLayout layout = ParamLayout::for_spec(spec);
  const std::size_t d = layout.total_dim;

  VariationalParams vp{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
  if (init) {
    if (init->dim() != d) throw DomainError(name + ": initial posterior has the wrong dimension");
    vp = VariationalParams::from_gaussian(*init);
  } else {
    if (config.data_init) detail::init_from_data(vp.mean, table, spec);
    for (std::size_t i = 0; i < d; ++i) vp.chol_raw[i * d + i] = softplus_inverse(config.chol_init_scale);
  }

  std::vector<double> m1_mean(d, 0.0), m2_mean(d, 0.0), m1_chol(d * d, 0.0), m2_chol(d * d, 0.0);
  Rng rng(config.seed);
  Rng batch_rng = rng.split();

  const std::size_t n = table.size();
  const std::size_t bsize = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  TrainTrace trace;
  trace.elbo.reserve(static_cast<std::size_t>(config.steps));
  trace.grad_norm.reserve(static_cast<std::size_t>(config.steps));
  int consecutive_aborts = 0;
  int adam_t = 0;
  std::vector<double> chol_grad_raw(d * d);

  for (int step = 0; step < config.steps; ++step) {
    // Partial Fisher-Yates: the first bsize entries of perm are a uniform
    // sample without replacement.
    if (bsize < n) {
      for (std::size_t i = 0; i < bsize; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(batch_rng() % (n - i));
        std::swap(perm[i], perm[j]);
      }
    }
    const GaussianChol q = vp.to_gaussian();
    ElboResult r;
    try {
      r = elbo_estimate(rng, table, std::span<const std::size_t>(perm.data(), bsize), q, spec, prior,
                        config.mc_particles);
    } catch (const std::domain_error& e) {
      trace.elbo.push_back(std::numeric_limits<double>::quiet_NaN());
      trace.grad_norm.push_back(std::numeric_limits<double>::quiet_NaN());
      if (++consecutive_aborts > 10) {
        trace.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw TrainingFailure(name + ": more than 10 consecutive non-finite ELBO steps; last: " + e.what(),
                              std::move(trace), name);
      }
      continue;
    }
    consecutive_aborts = 0;

    // Chain rule through L_ii = softplus(raw_ii).
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const std::size_t k = i * d + j;
        if (i == j) {
          chol_grad_raw[k] = r.grad_chol[k] * logistic(vp.chol_raw[k]);
        } else {
          chol_grad_raw[k] = config.diagonal_only ? 0.0 : r.grad_chol[k];
        }
      }
    }
    double norm2 = 0.0;
    for (double v : r.grad_mean) norm2 += v * v;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) norm2 += chol_grad_raw[i * d + j] * chol_grad_raw[i * d + j];
    }
    const double gnorm = std::sqrt(norm2);
    trace.elbo.push_back(r.value);
    trace.grad_norm.push_back(gnorm);
    double clip = 1.0;
    if (config.grad_clip && gnorm > *config.grad_clip) clip = *config.grad_clip / gnorm;

    ++adam_t;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, adam_t), bc2 = 1.0 - std::pow(b2, adam_t);
    const double frac = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 0.0;
    const double lr = config.learning_rate * std::pow(config.lr_final_fraction, frac);
    // Gradient ascent on the ELBO.
    auto adam = [&](double& param, double grad, double& m1, double& m2) {
      grad *= clip;
      m1 = b1 * m1 + (1.0 - b1) * grad;
      m2 = b2 * m2 + (1.0 - b2) * grad * grad;
      param += lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + config.adam_eps);
    };
    for (std::size_t i = 0; i < d; ++i) adam(vp.mean[i], r.grad_mean[i], m1_mean[i], m2_mean[i]);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        if (i != j && config.diagonal_only) continue;
        const std::size_t k = i * d + j;
        adam(vp.chol_raw[k], chol_grad_raw[k], m1_chol[k], m2_chol[k]);
      }
      if (!(softplus(vp.chol_raw[i * d + i]) > 0.0)) {
        trace.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw TrainingFailure(name + ": Cholesky diagonal " + std::to_string(i) + " collapsed to zero at step " +
                                  std::to_string(step),
                              std::move(trace), name);
      }
    }
  }

  FitResult result{FittedSubProgram{spec, vp.to_gaussian()}, std::move(trace)};
  result.trace.final_posterior = result.fitted.posterior;
  result.trace.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Seed of sub-program `id` under a root training seed. Depends only on the
/// pair, so training order and worker count never change a result.
inline std::uint64_t subprogram_seed(std::uint64_t root, SubProgramId id) {
  return Rng::for_stream(root, 0x5eed0000ULL + index_of(id))();
}

struct FitAllOptions {
  int workers = 1;
  std::array<std::optional<Prior>, kNumSubPrograms> priors{};
  std::array<double, 2> fixed_delay_means = kDefaultFixedDelayMeans;
  /// Sub-programs to train; the others are left default-constructed.
  std::vector<SubProgramId> only;
};

struct FitAllResult {
  Registry registry;
  std::array<std::optional<TrainTrace>, kNumSubPrograms> traces;
};

inline FitAllResult fit_all(const TrainingTables& tables, const TrainConfig& config, const FitAllOptions& options = {}) {
  config.validate();
  std::vector<SubProgramId> todo = options.only;
  if (todo.empty()) todo.assign(kAllSubPrograms.begin(), kAllSubPrograms.end());
  for (SubProgramId id : todo) {
    const TrainingTable& t = tables[index_of(id)];
    if (t.empty()) throw DomainError(std::string(name_of(id)) + ": training table is empty");
    if (t.id != id) throw DomainError(std::string(name_of(id)) + ": training table is filed under the wrong slot");
  }

  FitAllResult out;
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::string first_error_name;

  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
      const SubProgramId id = todo[k];
      {
        std::lock_guard lock(err_mu);
        if (first_error) return;
      }
      try {
        const SubProgramSpec spec = registry_spec(id, options.fixed_delay_means);
        const Prior prior = options.priors[index_of(id)].value_or(Prior::standard(ParamLayout::for_spec(spec)));
        TrainConfig cfg = config;
        cfg.seed = subprogram_seed(config.seed, id);
        FitResult r = fit(tables[index_of(id)], spec, prior, cfg);
        out.registry[index_of(id)] = std::move(r.fitted);
        out.traces[index_of(id)] = std::move(r.trace);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) {
          first_error = std::current_exception();
          first_error_name = std::string(name_of(id));
        }
      }
    }
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const TrainingFailure& e) {
      throw TrainingFailure(std::string("training ") + first_error_name + " failed: " + e.what(), e.trace(),
                            first_error_name);
    } catch (const std::exception& e) {
      throw TrainingFailure(std::string("training ") + first_error_name + " failed: " + e.what(), TrainTrace{},
                            first_error_name);
    }
  }
  return out;
}

/// One JSON object per line: {"step", "elbo", "grad_norm"}. Aborted steps
/// carry null values.
inline void write_trace_jsonl(std::ostream& os, const TrainTrace& trace) {
  for (std::size_t i = 0; i < trace.elbo.size(); ++i) {
    nlohmann::json j;
    j["step"] = i;
    j["elbo"] = std::isfinite(trace.elbo[i]) ? nlohmann::json(trace.elbo[i]) : nlohmann::json(nullptr);
    j["grad_norm"] = std::isfinite(trace.grad_norm[i]) ? nlohmann::json(trace.grad_norm[i]) : nlohmann::json(nullptr);
    os << j.dump() << '\n';
  }
}

}  // namespace genhai
