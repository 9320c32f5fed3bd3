#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "smoothcert/noise.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/stats.hpp"

namespace smoothcert {

// Any map from a feature vector to a logit vector. Implementations must be
// safe to call concurrently from multiple threads.
using Classifier = std::function<std::vector<double>(const std::vector<double>&)>;

struct VoteCounts {
  std::vector<long long> counts;
  long long n = 0;
  int top_class = -1;
  int runner_up = -1;
};

// One-sided confidence bounds on a binomial proportion from k successes in n
// draws. `confidence` is the coverage level of the bound (e.g. 0.999).
enum class BoundSide { kLower, kUpper };

inline double clopper_pearson(long long k, long long n, double confidence, BoundSide side) {
  if (n < 1) throw std::invalid_argument("clopper_pearson: n must be >= 1");
  if (k < 0 || k > n) throw std::invalid_argument("clopper_pearson: k must lie in [0, n]");
  if (!(confidence > 0.0) || !(confidence < 1.0)) {
    throw std::invalid_argument("clopper_pearson: confidence must lie in (0,1)");
  }
  double nn = static_cast<double>(n);
  if (side == BoundSide::kLower) {
    if (k == 0) return 0.0;
    if (k == n) return std::pow(1.0 - confidence, 1.0 / nn);
    return beta_quantile(1.0 - confidence, static_cast<double>(k), static_cast<double>(n - k + 1));
  }
  if (k == n) return 1.0;
  if (k == 0) return 1.0 - std::pow(1.0 - confidence, 1.0 / nn);
  return beta_quantile(confidence, static_cast<double>(k + 1), static_cast<double>(n - k));
}

inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Vote histogram of classifier(x + eps) over n independent noise draws.
// Work is split into `workers` chunks with deterministically derived
// substreams, so results depend only on (rng state, workers), not on thread
// scheduling.
inline VoteCounts estimate_votes(const Classifier& classifier, const std::vector<double>& x,
                                 const NoiseSpec& spec, long long n, Rng& rng, int workers = 1) {
  if (n < 1) throw std::invalid_argument("estimate_votes: n must be >= 1");
  if (workers < 1) throw std::invalid_argument("estimate_votes: workers must be >= 1");
  if (static_cast<int>(x.size()) != spec.dim) {
    throw std::invalid_argument("estimate_votes: input dimension mismatch");
  }
  int num_classes = static_cast<int>(classifier(x).size());
  if (num_classes < 2) throw std::invalid_argument("estimate_votes: classifier must emit >= 2 logits");

  std::uint64_t master = draw_seed(rng);
  if (workers > static_cast<int>(n)) workers = static_cast<int>(n);

  std::vector<std::vector<long long>> partial(workers, std::vector<long long>(num_classes, 0));
  auto run_worker = [&](int w) {
    long long chunk = n / workers + (w < static_cast<int>(n % workers) ? 1 : 0);
    Rng worker_rng = substream(master, static_cast<std::uint64_t>(w));
    detail::Sampler1d sampler = detail::make_sampler(spec);
    std::vector<double> point(x.size());
    for (long long i = 0; i < chunk; ++i) {
      for (std::size_t j = 0; j < x.size(); ++j) point[j] = x[j] + sampler(worker_rng);
      std::vector<double> logits = classifier(point);
      partial[w][argmax_lowest(logits)] += 1;
    }
  };

  if (workers == 1) {
    run_worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(run_worker, w);
    for (auto& t : pool) t.join();
  }

  VoteCounts out;
  out.counts.assign(num_classes, 0);
  for (int w = 0; w < workers; ++w) {
    for (int c = 0; c < num_classes; ++c) out.counts[c] += partial[w][c];
  }
  out.n = n;
  out.top_class = 0;
  for (int c = 1; c < num_classes; ++c) {
    if (out.counts[c] > out.counts[out.top_class]) out.top_class = c;
  }
  out.runner_up = out.top_class == 0 ? 1 : 0;
  for (int c = 0; c < num_classes; ++c) {
    if (c == out.top_class) continue;
    if (out.counts[c] > out.counts[out.runner_up]) out.runner_up = c;
  }
  return out;
}

namespace detail {

// r_i = log dens(row_i - shift) - log dens(row_i) for each row of the
// flattened n x dim sample matrix.
inline void log_ratio_rows(const NoiseSpec& spec, const std::vector<double>& samples, int n,
                           const std::vector<double>& shift, std::vector<double>& out) {
  LogDensity1d d = make_log_density(spec);
  int dim = spec.dim;
  out.resize(n);
  for (int i = 0; i < n; ++i) {
    const double* row = samples.data() + static_cast<std::size_t>(i) * dim;
    double sum = 0.0;
    for (int j = 0; j < dim; ++j) sum += d(row[j] - shift[j]) - d(row[j]);
    out[i] = sum;
  }
}

// s_i = log dens(row_i) - log dens(row_i + shift): the statistic whose tails
// against (t_A, t_B) form the boundary margin K.
inline void boundary_stat_rows(const NoiseSpec& spec, const std::vector<double>& samples, int n,
                               const std::vector<double>& shift, std::vector<double>& out) {
  LogDensity1d d = make_log_density(spec);
  int dim = spec.dim;
  out.resize(n);
  for (int i = 0; i < n; ++i) {
    const double* row = samples.data() + static_cast<std::size_t>(i) * dim;
    double sum = 0.0;
    for (int j = 0; j < dim; ++j) sum += d(row[j]) - d(row[j] + shift[j]);
    out[i] = sum;
  }
}

// Empirical quantile, lower interpolation: the order statistic at 1-based
// index ceil(level * n), clamped to [1, n]. Reorders `scratch`.
inline double lower_quantile(std::vector<double>& scratch, double level) {
  long long n = static_cast<long long>(scratch.size());
  long long idx = static_cast<long long>(std::ceil(level * static_cast<double>(n)));
  if (idx < 1) idx = 1;
  if (idx > n) idx = n;
  std::nth_element(scratch.begin(), scratch.begin() + (idx - 1), scratch.end());
  return scratch[idx - 1];
}

// t_A is the pA_lower quantile of the r values; t_B carries upper-tail mass
// pB_upper, i.e. it is the (1 - pB_upper) quantile. This matches the
// boundary conditions P(r <= t_A) = pA_lower and P(r >= t_B) = pB_upper.
inline std::pair<double, double> t_bounds_core(const std::vector<double>& r_values, double pa_lower,
                                               double pb_upper) {
  std::vector<double> scratch = r_values;
  double t_a = lower_quantile(scratch, pa_lower);
  scratch = r_values;
  double t_b = lower_quantile(scratch, 1.0 - pb_upper);
  return {t_a, t_b};
}

// K = P(s <= t_A) - P(s >= t_B). Samples equal to a threshold count on both
// sides, which keeps the degenerate shift = 0 case at exactly 0.
inline double k_core(const std::vector<double>& s_values, double t_a, double t_b) {
  long long le = 0, ge = 0;
  for (double s : s_values) {
    if (s <= t_a) ++le;
    if (s >= t_b) ++ge;
  }
  double n = static_cast<double>(s_values.size());
  return (static_cast<double>(le) - static_cast<double>(ge)) / n;
}

inline void check_shift(const NoiseSpec& spec, const std::vector<double>& shift) {
  if (static_cast<int>(shift.size()) != spec.dim) {
    throw std::invalid_argument("shift dimension mismatch");
  }
  for (double s : shift) {
    if (!std::isfinite(s)) throw std::invalid_argument("shift must be finite");
  }
}

}  // namespace detail

struct BoundEstimates {
  double pa_lower = 0.0;
  double pb_upper = 0.0;
  double t_a = 0.0;
  double t_b = 0.0;
};

// Monte Carlo estimate of the likelihood-ratio thresholds at the given
// probability levels under `spec`, for a candidate shift.
inline std::pair<double, double> estimate_t_bounds(double pa_lower, double pb_upper,
                                                   const NoiseSpec& spec,
                                                   const std::vector<double>& shift, int n,
                                                   Rng& rng) {
  if (n < 2) throw std::invalid_argument("estimate_t_bounds: n must be >= 2");
  if (!(pa_lower >= 0.0 && pa_lower <= 1.0) || !(pb_upper >= 0.0 && pb_upper <= 1.0)) {
    throw std::invalid_argument("estimate_t_bounds: probability levels must lie in [0,1]");
  }
  detail::check_shift(spec, shift);
  std::vector<double> samples;
  sample_matrix(spec, n, rng, samples);
  std::vector<double> r;
  detail::log_ratio_rows(spec, samples, n, shift, r);
  return detail::t_bounds_core(r, pa_lower, pb_upper);
}

// Monte Carlo estimate of the boundary margin K for thresholds (t_A, t_B)
// at a candidate shift, on fresh samples.
inline double estimate_K(double t_a, double t_b, const NoiseSpec& spec,
                         const std::vector<double>& shift, int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("estimate_K: n must be >= 2");
  detail::check_shift(spec, shift);
  std::vector<double> samples;
  sample_matrix(spec, n, rng, samples);
  std::vector<double> s;
  detail::boundary_stat_rows(spec, samples, n, shift, s);
  return detail::k_core(s, t_a, t_b);
}

}  // namespace smoothcert
