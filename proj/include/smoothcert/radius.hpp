#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "smoothcert/mcbounds.hpp"
#include "smoothcert/noise.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/stats.hpp"

namespace smoothcert {

enum class Norm { kL1, kL2, kLinf };

inline const char* norm_name(Norm p) {
  switch (p) {
    case Norm::kL1: return "l1";
    case Norm::kL2: return "l2";
    case Norm::kLinf: return "linf";
  }
  throw std::logic_error("norm_name: bad enum");
}

inline Norm parse_norm(const std::string& s) {
  if (s == "l1" || s == "1") return Norm::kL1;
  if (s == "l2" || s == "2") return Norm::kL2;
  if (s == "linf" || s == "inf") return Norm::kLinf;
  throw std::invalid_argument("unknown norm: " + s);
}

inline double norm_value(const std::vector<double>& v, Norm p) {
  double acc = 0.0;
  switch (p) {
    case Norm::kL1:
      for (double x : v) acc += std::fabs(x);
      return acc;
    case Norm::kL2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case Norm::kLinf:
      for (double x : v) acc = std::max(acc, std::fabs(x));
      return acc;
  }
  return 0.0;
}

// Closed-form certified radius for isotropic Gaussian noise:
// R = sigma/2 * (Phi^-1(pA) - Phi^-1(pB)), clamped at 0, +inf as pA -> 1.
inline double gaussian_radius(double pa_lower, double pb_upper, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_radius: sigma must be positive");
  if (!(pa_lower >= 0.0 && pa_lower <= 1.0) || !(pb_upper >= 0.0 && pb_upper <= 1.0)) {
    throw std::invalid_argument("gaussian_radius: probabilities must lie in [0,1]");
  }
  if (pa_lower <= pb_upper) return 0.0;
  return 0.5 * sigma * (normal_quantile(pa_lower) - normal_quantile(pb_upper));
}

struct BracketError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RadiusSolverConfig {
  int mc_n = 4000;             // Monte Carlo draws per threshold / margin estimate
  int bisect_iters = 25;       // bisection budget N
  double k_threshold = 0.01;   // stop once |K| <= K_m
  double bracket_growth = 2.0; // geometric factor for the initial bracket
  int pso_particles = 16;
  int pso_iters = 30;
  double pso_inertia = 0.729;
  double pso_cognitive = 1.49445;
  double pso_social = 1.49445;
  Norm norm = Norm::kL2;

  void validate() const {
    if (mc_n < 2) throw std::invalid_argument("RadiusSolverConfig: mc_n must be >= 2");
    if (bisect_iters < 1) throw std::invalid_argument("RadiusSolverConfig: bisect_iters must be >= 1");
    if (!(k_threshold >= 0.0)) throw std::invalid_argument("RadiusSolverConfig: k_threshold must be >= 0");
    if (!(bracket_growth > 1.0)) throw std::invalid_argument("RadiusSolverConfig: bracket_growth must exceed 1");
    if (pso_particles < 2) throw std::invalid_argument("RadiusSolverConfig: pso_particles must be >= 2");
    if (pso_iters < 1) throw std::invalid_argument("RadiusSolverConfig: pso_iters must be >= 1");
    if (!(pso_inertia > 0.0) || !(pso_cognitive > 0.0) || !(pso_social > 0.0)) {
      throw std::invalid_argument("RadiusSolverConfig: PSO coefficients must be positive");
    }
  }
};

struct ScalarResult {
  double lambda = 0.0;
  double residual_k = 0.0;
  bool converged = false;
  long long evaluations = 0;
};

struct RadiusResult {
  double radius = 0.0;
  std::vector<double> direction;
  double lambda = 0.0;
  double residual_k = 0.0;
  bool converged = false;
  long long evaluations = 0;
  // Closed-form Gaussian radius when applicable (gaussian family, l2 norm),
  // NaN otherwise.
  double gaussian_cross_check = std::numeric_limits<double>::quiet_NaN();
};

// Finds the sign change of a decreasing margin function K(lambda): brackets
// geometrically from lambda_init, then bisects for up to cfg.bisect_iters
// steps, stopping early once |K| <= cfg.k_threshold. This is the scalar
// stage isolated over an arbitrary K so it can be exercised directly.
inline ScalarResult bisect_boundary(const std::function<double(double)>& margin, double lambda_init,
                                    const RadiusSolverConfig& cfg) {
  cfg.validate();
  if (!(lambda_init > 0.0)) throw std::invalid_argument("bisect_boundary: lambda_init must be positive");

  ScalarResult res;
  auto eval = [&](double lam) {
    ++res.evaluations;
    return margin(lam);
  };

  double k0 = eval(lambda_init);
  if (std::fabs(k0) <= cfg.k_threshold) {
    res.lambda = lambda_init;
    res.residual_k = k0;
    res.converged = true;
    return res;
  }

  const int max_bracket_steps = 60;
  double lo = lambda_init, hi = lambda_init;
  double k_last = k0;
  if (k0 > 0.0) {
    bool found = false;
    for (int i = 0; i < max_bracket_steps; ++i) {
      hi = hi * cfg.bracket_growth;
      k_last = eval(hi);
      if (std::fabs(k_last) <= cfg.k_threshold) {
        res.lambda = hi;
        res.residual_k = k_last;
        res.converged = true;
        return res;
      }
      if (k_last < 0.0) {
        found = true;
        break;
      }
      lo = hi;
    }
    if (!found) throw BracketError("bisect_boundary: margin never became negative while growing");
  } else {
    bool found = false;
    for (int i = 0; i < max_bracket_steps; ++i) {
      lo = lo / cfg.bracket_growth;
      k_last = eval(lo);
      if (std::fabs(k_last) <= cfg.k_threshold) {
        res.lambda = lo;
        res.residual_k = k_last;
        res.converged = true;
        return res;
      }
      if (k_last > 0.0) {
        found = true;
        break;
      }
      hi = lo;
    }
    if (!found) throw BracketError("bisect_boundary: margin never became positive while shrinking");
  }

  double lam = 0.5 * (lo + hi);
  double k = k_last;
  for (int i = 0; i < cfg.bisect_iters; ++i) {
    lam = 0.5 * (lo + hi);
    k = eval(lam);
    if (std::fabs(k) <= cfg.k_threshold) break;
    if (k > 0.0) {
      lo = lam;
    } else {
      hi = lam;
    }
  }
  res.lambda = lam;
  res.residual_k = k;
  res.converged = std::fabs(k) <= cfg.k_threshold;
  return res;
}

namespace detail {

// Margin function for one direction over fixed sample matrices (common
// random numbers): thresholds are re-estimated per lambda from e1, the
// margin is counted on e2.
struct ScalarProblem {
  const NoiseSpec& spec;
  double pa, pb;
  const std::vector<double>& e1;
  const std::vector<double>& e2;
  int mc_n;
  std::vector<double> dir;

  std::vector<double> shift, r, s;

  double margin(double lambda) {
    shift.resize(dir.size());
    for (std::size_t j = 0; j < dir.size(); ++j) shift[j] = lambda * dir[j];
    log_ratio_rows(spec, e1, mc_n, shift, r);
    auto [t_a, t_b] = t_bounds_core(r, pa, pb);
    boundary_stat_rows(spec, e2, mc_n, shift, s);
    return k_core(s, t_a, t_b);
  }
};

inline void normalize_or_throw(std::vector<double>& v, Norm p) {
  double n = norm_value(v, p);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("direction must be nonzero and finite");
  }
  for (double& x : v) x /= n;
}

}  // namespace detail

// Scalar stage on a fixed direction: boundary shift magnitude lambda with
// |K(lambda)| driven under cfg.k_threshold. The direction is normalized to
// unit cfg.norm length. Draws two fresh sample matrices and reuses them for
// every lambda, so the margin seen by the bisection is deterministic.
inline ScalarResult scalar_optimize(const std::vector<double>& direction, double pa_lower,
                                    double pb_upper, const NoiseSpec& spec,
                                    const RadiusSolverConfig& cfg, Rng& rng) {
  cfg.validate();
  spec.validate();
  if (static_cast<int>(direction.size()) != spec.dim) {
    throw std::invalid_argument("scalar_optimize: direction dimension mismatch");
  }
  if (!(pa_lower >= 0.0 && pa_lower <= 1.0) || !(pb_upper >= 0.0 && pb_upper <= 1.0)) {
    throw std::invalid_argument("scalar_optimize: probabilities must lie in [0,1]");
  }
  std::vector<double> dir = direction;
  detail::normalize_or_throw(dir, cfg.norm);

  std::vector<double> e1, e2;
  sample_matrix(spec, cfg.mc_n, rng, e1);
  sample_matrix(spec, cfg.mc_n, rng, e2);

  detail::ScalarProblem prob{spec, pa_lower, pb_upper, e1, e2, cfg.mc_n, dir, {}, {}, {}};
  return bisect_boundary([&](double lam) { return prob.margin(lam); }, spec.scale(), cfg);
}

// Direction stage: particle swarm over the unit cfg.norm sphere minimizing
// the boundary magnitude found by the scalar stage. All scalar solves in one
// run share the same two sample matrices, so particle costs are comparable.
inline RadiusResult direction_optimize(double pa_lower, double pb_upper, const NoiseSpec& spec,
                                       const RadiusSolverConfig& cfg, Rng& rng) {
  cfg.validate();
  spec.validate();
  if (!(pa_lower >= 0.0 && pa_lower <= 1.0) || !(pb_upper >= 0.0 && pb_upper <= 1.0)) {
    throw std::invalid_argument("direction_optimize: probabilities must lie in [0,1]");
  }
  const int d = spec.dim;
  const int P = cfg.pso_particles;

  std::vector<double> e1, e2;
  sample_matrix(spec, cfg.mc_n, rng, e1);
  sample_matrix(spec, cfg.mc_n, rng, e2);

  detail::ScalarProblem prob{spec, pa_lower, pb_upper, e1, e2, cfg.mc_n, {}, {}, {}, {}};

  long long total_evals = 0;
  // Exact-position memo: particles that return to a previous position (the
  // usual stabilization around gbest) do not pay for a second solve.
  std::map<std::vector<double>, ScalarResult> memo;

  auto solve_at = [&](const std::vector<double>& pos) -> const ScalarResult& {
    auto it = memo.find(pos);
    if (it != memo.end()) return it->second;
    prob.dir = pos;
    ScalarResult sr;
    try {
      sr = bisect_boundary([&](double lam) { return prob.margin(lam); }, spec.scale(), cfg);
    } catch (const BracketError&) {
      sr.lambda = std::numeric_limits<double>::infinity();
      sr.converged = false;
    }
    total_evals += sr.evaluations;
    return memo.emplace(pos, sr).first->second;
  };

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto random_unit = [&]() {
    std::vector<double> v(d);
    double n = 0.0;
    do {
      for (double& x : v) x = gauss(rng);
      n = norm_value(v, cfg.norm);
    } while (!(n > 0.0));
    for (double& x : v) x /= n;
    return v;
  };

  std::vector<std::vector<double>> pos(P), vel(P, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> pbest(P);
  std::vector<double> pbest_cost(P, std::numeric_limits<double>::infinity());
  std::vector<double> gbest;
  double gbest_cost = std::numeric_limits<double>::infinity();
  ScalarResult gbest_result;

  for (int k = 0; k < P; ++k) {
    pos[k] = random_unit();
    const ScalarResult& sr = solve_at(pos[k]);
    pbest[k] = pos[k];
    pbest_cost[k] = sr.lambda;
    if (sr.lambda < gbest_cost) {
      gbest_cost = sr.lambda;
      gbest = pos[k];
      gbest_result = sr;
    }
  }
  if (!std::isfinite(gbest_cost)) {
    throw BracketError("direction_optimize: every particle failed to bracket the boundary");
  }

  for (int it = 0; it < cfg.pso_iters; ++it) {
    // Positions move first; the global best is frozen within an iteration.
    for (int k = 0; k < P; ++k) {
      for (int j = 0; j < d; ++j) {
        double r1 = unif(rng), r2 = unif(rng);
        vel[k][j] = cfg.pso_inertia * vel[k][j] +
                    cfg.pso_cognitive * r1 * (pbest[k][j] - pos[k][j]) +
                    cfg.pso_social * r2 * (gbest[j] - pos[k][j]);
        pos[k][j] += vel[k][j];
      }
      double n = norm_value(pos[k], cfg.norm);
      if (!(n > 0.0) || !std::isfinite(n)) {
        pos[k] = random_unit();
      } else {
        for (double& x : pos[k]) x /= n;
      }
    }
    for (int k = 0; k < P; ++k) {
      const ScalarResult& sr = solve_at(pos[k]);
      if (sr.lambda < pbest_cost[k]) {
        pbest_cost[k] = sr.lambda;
        pbest[k] = pos[k];
      }
    }
    for (int k = 0; k < P; ++k) {
      if (pbest_cost[k] < gbest_cost) {
        gbest_cost = pbest_cost[k];
        gbest = pbest[k];
        gbest_result = memo.at(pbest[k]);
      }
    }
  }

  RadiusResult out;
  out.direction = gbest;
  out.lambda = gbest_result.lambda;
  out.radius = gbest_result.lambda * norm_value(gbest, cfg.norm);
  out.residual_k = gbest_result.residual_k;
  out.converged = gbest_result.converged;
  out.evaluations = total_evals;
  return out;
}

// Full certified radius for one (pA_lower, pB_upper) pair in the requested
// norm. Degenerate bounds give radius 0 without running the solver. For the
// gaussian family with the l2 norm the closed form is attached as a
// cross-check field.
inline RadiusResult certified_radius(double pa_lower, double pb_upper, const NoiseSpec& spec,
                                     Norm p, const RadiusSolverConfig& cfg, Rng& rng) {
  if (!(pa_lower >= 0.0 && pa_lower <= 1.0) || !(pb_upper >= 0.0 && pb_upper <= 1.0)) {
    throw std::invalid_argument("certified_radius: probabilities must lie in [0,1]");
  }
  RadiusSolverConfig local = cfg;
  local.norm = p;
  RadiusResult out;
  if (pa_lower <= pb_upper) {
    out.direction.assign(spec.dim, 0.0);
    out.direction[0] = 1.0;
    out.converged = true;
    return out;
  }
  out = direction_optimize(pa_lower, pb_upper, spec, local, rng);
  if (spec.family == NoiseFamily::kGaussian && p == Norm::kL2) {
    out.gaussian_cross_check = gaussian_radius(pa_lower, pb_upper, spec.sigma);
  }
  return out;
}

}  // namespace smoothcert
