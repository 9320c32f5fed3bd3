#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/rng.hpp"

namespace smoothcert {

enum class NoiseFamily { kExponentialPower, kGaussian, kLaplace, kCauchy, kPareto };

inline const char* family_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::kExponentialPower: return "exponential-power";
    case NoiseFamily::kGaussian: return "gaussian";
    case NoiseFamily::kLaplace: return "laplace";
    case NoiseFamily::kCauchy: return "cauchy";
    case NoiseFamily::kPareto: return "pareto";
  }
  throw std::logic_error("family_name: bad enum");
}

inline NoiseFamily parse_family(const std::string& s) {
  if (s == "exponential-power") return NoiseFamily::kExponentialPower;
  if (s == "gaussian") return NoiseFamily::kGaussian;
  if (s == "laplace") return NoiseFamily::kLaplace;
  if (s == "cauchy") return NoiseFamily::kCauchy;
  if (s == "pareto") return NoiseFamily::kPareto;
  throw std::invalid_argument("unknown noise family: " + s);
}

// Scale that gives the exponential-power density exp(-|x/alpha|^beta) unit
// variance sigma^2: alpha = sigma * sqrt(Gamma(1/beta) / Gamma(3/beta)).
inline double calibrate_alpha(double beta, double sigma) {
  if (!(beta > 0.0)) throw std::invalid_argument("calibrate_alpha: beta must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("calibrate_alpha: sigma must be positive");
  // Work in log space: Gamma(1/beta) overflows for small beta.
  double lg = 0.5 * (std::lgamma(1.0 / beta) - std::lgamma(3.0 / beta));
  return sigma * std::exp(lg);
}

// Description of an isotropic product noise distribution on R^dim.
// sigma is the per-coordinate standard deviation for the families that have
// one; cauchy and pareto have undefined variance and use alpha as the scale
// parameter directly. beta is the exponential-power shape; for pareto it is
// reused as the tail index (default 2). The pareto family is the standard
// one-sided distribution symmetrized by a random sign, so its support is
// |x| >= alpha and its median is 0.
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::kGaussian;
  double beta = 0.0;
  double alpha = 0.0;
  double sigma = 0.0;
  int dim = 1;

  static NoiseSpec gaussian(double sigma, int dim) {
    NoiseSpec s;
    s.family = NoiseFamily::kGaussian;
    s.beta = 2.0;  // informational: the exponential-power shape this equals
    s.sigma = sigma;
    s.alpha = calibrate_alpha(2.0, sigma);
    s.dim = dim;
    s.validate();
    return s;
  }

  static NoiseSpec laplace(double sigma, int dim) {
    NoiseSpec s;
    s.family = NoiseFamily::kLaplace;
    s.beta = 1.0;  // informational: the exponential-power shape this equals
    s.sigma = sigma;
    s.alpha = calibrate_alpha(1.0, sigma);
    s.dim = dim;
    s.validate();
    return s;
  }

  static NoiseSpec exponential_power(double beta, double sigma, int dim) {
    NoiseSpec s;
    s.family = NoiseFamily::kExponentialPower;
    s.beta = beta;
    s.sigma = sigma;
    s.alpha = calibrate_alpha(beta, sigma);
    s.dim = dim;
    s.validate();
    return s;
  }

  static NoiseSpec cauchy(double scale, int dim) {
    NoiseSpec s;
    s.family = NoiseFamily::kCauchy;
    s.alpha = scale;
    s.dim = dim;
    s.validate();
    return s;
  }

  static NoiseSpec pareto(double scale, int dim, double shape = 2.0) {
    NoiseSpec s;
    s.family = NoiseFamily::kPareto;
    s.alpha = scale;
    s.beta = shape;
    s.dim = dim;
    s.validate();
    return s;
  }

  // Characteristic length used to seed bracket searches.
  double scale() const {
    switch (family) {
      case NoiseFamily::kCauchy:
      case NoiseFamily::kPareto:
        return alpha;
      default:
        return sigma;
    }
  }

  void validate() const {
    if (dim < 1) throw std::invalid_argument("NoiseSpec: dim must be >= 1");
    switch (family) {
      case NoiseFamily::kGaussian:
      case NoiseFamily::kLaplace:
        if (!(sigma > 0.0)) throw std::invalid_argument("NoiseSpec: sigma must be positive");
        break;
      case NoiseFamily::kExponentialPower:
        if (!(beta > 0.0)) throw std::invalid_argument("NoiseSpec: beta must be positive");
        if (!(sigma > 0.0)) throw std::invalid_argument("NoiseSpec: sigma must be positive");
        if (!(alpha > 0.0)) throw std::invalid_argument("NoiseSpec: alpha must be positive");
        break;
      case NoiseFamily::kCauchy:
        if (!(alpha > 0.0)) throw std::invalid_argument("NoiseSpec: scale must be positive");
        break;
      case NoiseFamily::kPareto:
        if (!(alpha > 0.0)) throw std::invalid_argument("NoiseSpec: scale must be positive");
        if (!(beta > 0.0)) throw std::invalid_argument("NoiseSpec: shape must be positive");
        break;
    }
  }
};

// One-coordinate log density evaluator with precomputed constants.
// Hoist construction out of sampling loops; operator() is branch-light.
struct LogDensity1d {
  NoiseFamily family;
  double inv_scale;   // 1/sigma or 1/alpha
  double beta;        // EP shape or pareto tail index
  double log_norm;    // log of the 1-d normalization constant

  double operator()(double x) const {
    switch (family) {
      case NoiseFamily::kGaussian: {
        double z = x * inv_scale;
        return log_norm - 0.5 * z * z;
      }
      case NoiseFamily::kLaplace:
        return log_norm - std::fabs(x) * inv_scale;
      case NoiseFamily::kExponentialPower:
        return log_norm - std::pow(std::fabs(x) * inv_scale, beta);
      case NoiseFamily::kCauchy: {
        double z = x * inv_scale;
        return log_norm - std::log1p(z * z);
      }
      case NoiseFamily::kPareto: {
        double z = std::fabs(x) * inv_scale;
        if (z < 1.0) return -std::numeric_limits<double>::infinity();
        return log_norm - (beta + 1.0) * std::log(z);
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

inline LogDensity1d make_log_density(const NoiseSpec& spec) {
  spec.validate();
  LogDensity1d d{};
  d.family = spec.family;
  d.beta = spec.beta;
  switch (spec.family) {
    case NoiseFamily::kGaussian:
      d.inv_scale = 1.0 / spec.sigma;
      d.log_norm = -0.5 * std::log(2.0 * M_PI) - std::log(spec.sigma);
      break;
    case NoiseFamily::kLaplace: {
      double b = spec.sigma / std::sqrt(2.0);
      d.inv_scale = 1.0 / b;
      d.log_norm = -std::log(2.0 * b);
      break;
    }
    case NoiseFamily::kExponentialPower:
      d.inv_scale = 1.0 / spec.alpha;
      d.log_norm = std::log(spec.beta) - std::log(2.0 * spec.alpha) - std::lgamma(1.0 / spec.beta);
      break;
    case NoiseFamily::kCauchy:
      d.inv_scale = 1.0 / spec.alpha;
      d.log_norm = -std::log(M_PI * spec.alpha);
      break;
    case NoiseFamily::kPareto:
      d.inv_scale = 1.0 / spec.alpha;
      d.log_norm = std::log(spec.beta / (2.0 * spec.alpha));
      break;
  }
  return d;
}

inline double log_density_1d(const NoiseSpec& spec, double x) { return make_log_density(spec)(x); }

inline double log_density(const NoiseSpec& spec, const std::vector<double>& v) {
  if (static_cast<int>(v.size()) != spec.dim) {
    throw std::invalid_argument("log_density: vector dimension mismatch");
  }
  LogDensity1d d = make_log_density(spec);
  double sum = 0.0;
  for (double x : v) sum += d(x);
  return sum;
}

// log of dens(eps - shift) / dens(eps). Exactly 0 for shift = 0.
inline double log_ratio(const NoiseSpec& spec, const std::vector<double>& eps,
                        const std::vector<double>& shift) {
  if (static_cast<int>(eps.size()) != spec.dim || shift.size() != eps.size()) {
    throw std::invalid_argument("log_ratio: vector dimension mismatch");
  }
  LogDensity1d d = make_log_density(spec);
  double sum = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) sum += d(eps[i] - shift[i]) - d(eps[i]);
  return sum;
}

namespace detail {

// Per-coordinate sampler with distribution state hoisted out of loops.
struct Sampler1d {
  NoiseFamily family;
  double scale;    // sigma (gaussian), b (laplace), alpha (EP/cauchy/pareto)
  double beta;     // EP shape / pareto tail index
  double inv_beta; // cached 1/beta

  double operator()(Rng& rng) const {
    switch (family) {
      case NoiseFamily::kGaussian: {
        std::normal_distribution<double> n(0.0, scale);
        return n(rng);
      }
      case NoiseFamily::kLaplace: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double v = u(rng) - 0.5;
        double s = v < 0.0 ? -1.0 : 1.0;
        return -scale * s * std::log1p(-2.0 * std::fabs(v));
      }
      case NoiseFamily::kExponentialPower: {
        // |X| = alpha * G^(1/beta) with G ~ Gamma(1/beta, 1); sign uniform.
        std::gamma_distribution<double> g(inv_beta, 1.0);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double mag = scale * std::pow(g(rng), inv_beta);
        return u(rng) < 0.5 ? -mag : mag;
      }
      case NoiseFamily::kCauchy: {
        std::cauchy_distribution<double> c(0.0, scale);
        return c(rng);
      }
      case NoiseFamily::kPareto: {
        std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
        std::uniform_real_distribution<double> us(0.0, 1.0);
        double mag = scale * std::pow(u(rng), -inv_beta);
        return us(rng) < 0.5 ? -mag : mag;
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

inline Sampler1d make_sampler(const NoiseSpec& spec) {
  spec.validate();
  Sampler1d s{};
  s.family = spec.family;
  s.beta = spec.beta;
  s.inv_beta = spec.beta > 0.0 ? 1.0 / spec.beta : 0.0;
  switch (spec.family) {
    case NoiseFamily::kGaussian: s.scale = spec.sigma; break;
    case NoiseFamily::kLaplace: s.scale = spec.sigma / std::sqrt(2.0); break;
    default: s.scale = spec.alpha; break;
  }
  return s;
}

}  // namespace detail

inline std::vector<double> sample(const NoiseSpec& spec, Rng& rng) {
  detail::Sampler1d s = detail::make_sampler(spec);
  std::vector<double> v(spec.dim);
  for (double& x : v) x = s(rng);
  return v;
}

// n draws flattened row-major into out (n * dim entries).
inline void sample_matrix(const NoiseSpec& spec, int n, Rng& rng, std::vector<double>& out) {
  if (n < 0) throw std::invalid_argument("sample_matrix: n must be >= 0");
  detail::Sampler1d s = detail::make_sampler(spec);
  out.resize(static_cast<std::size_t>(n) * spec.dim);
  for (double& x : out) x = s(rng);
}

}  // namespace smoothcert
