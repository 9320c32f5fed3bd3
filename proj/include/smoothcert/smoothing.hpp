#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "smoothcert/mcbounds.hpp"
#include "smoothcert/net.hpp"
#include "smoothcert/noise.hpp"
#include "smoothcert/radius.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/stats.hpp"

namespace smoothcert {

inline constexpr int kAbstain = -1;

struct SmoothingConfig {
  NoiseSpec spec;
  int n0 = 100;      // selection round draws
  int n = 1000;      // estimation round draws
  double alpha = 0.001;  // failure probability of the hypothesis test
  double zeta = 0.5;     // competing-class veto ratio
  double iota = 0.5;     // minimum top-class vote frequency
  std::vector<Norm> norms = {Norm::kL2};
  RadiusSolverConfig solver;
  // Single-round mode selects the class from the same n draws that feed the
  // bounds. Off by default; the two-round protocol avoids selection bias.
  bool single_round = false;
  int workers = 1;

  void validate() const {
    spec.validate();
    if (n0 < 1) throw std::invalid_argument("SmoothingConfig: n0 must be >= 1");
    if (n < 1) throw std::invalid_argument("SmoothingConfig: n must be >= 1");
    if (n0 > n) throw std::invalid_argument("SmoothingConfig: n0 must not exceed n");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("SmoothingConfig: alpha must lie in (0,1)");
    if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("SmoothingConfig: zeta must lie in (0,1)");
    if (!(iota > 0.0 && iota < 1.0)) throw std::invalid_argument("SmoothingConfig: iota must lie in (0,1)");
    if (workers < 1) throw std::invalid_argument("SmoothingConfig: workers must be >= 1");
    solver.validate();
  }
};

struct CertifyOutcome {
  int decision = kAbstain;
  double pa_lower = std::numeric_limits<double>::quiet_NaN();
  double pb_upper = std::numeric_limits<double>::quiet_NaN();
  std::map<Norm, RadiusResult> radii;  // present only when decision != kAbstain
  VoteCounts votes;
  std::uint64_t seed = 0;
};

// Noise-augmented training: every epoch perturbs each example with a fresh
// draw from `spec` before the usual minibatch pass.
inline TrainResult noise_train(const DenseNetwork& net, const Batch& data, const NoiseSpec& spec,
                               const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (data.inputs.empty()) throw std::invalid_argument("noise_train: empty dataset");
  if (static_cast<int>(data.inputs.front().size()) != spec.dim) {
    throw std::invalid_argument("noise_train: noise dimension does not match inputs");
  }
  Trainer trainer(net, cfg);
  Rng noise_rng = substream(cfg.seed, 0x6e6f6973ULL);
  detail::Sampler1d sampler = detail::make_sampler(spec);

  TrainResult out;
  Batch noisy = data;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
      const std::vector<double>& clean = data.inputs[i];
      std::vector<double>& row = noisy.inputs[i];
      for (std::size_t j = 0; j < clean.size(); ++j) row[j] = clean[j] + sampler(noise_rng);
    }
    out.loss_history.push_back(trainer.run_epoch(noisy));
  }
  out.net = trainer.take();
  return out;
}

namespace detail {

// Decision rules shared by prediction and certification: a competing class
// with more than zeta * counts[top] votes vetoes the decision, and the
// top-versus-runner-up vote split must reject the fair-coin null at level
// alpha (two-sided exact binomial test).
inline int decide_from_votes(const VoteCounts& votes, double zeta, double alpha) {
  int top = votes.top_class;
  for (int c = 0; c < static_cast<int>(votes.counts.size()); ++c) {
    if (c == top) continue;
    if (static_cast<double>(votes.counts[c]) > zeta * static_cast<double>(votes.counts[top])) {
      return kAbstain;
    }
  }
  long long na = votes.counts[top];
  long long nb = votes.counts[votes.runner_up];
  if (na + nb > 0) {
    double pv = binom_two_sided_half(na, na + nb);
    if (pv > alpha) return kAbstain;
  }
  return top;
}

}  // namespace detail

// Abstain-aware prediction with n draws.
inline int smooth_predict(const Classifier& classifier, const std::vector<double>& x,
                          const SmoothingConfig& cfg, Rng& rng) {
  cfg.validate();
  VoteCounts votes = estimate_votes(classifier, x, cfg.spec, cfg.n, rng, cfg.workers);
  return detail::decide_from_votes(votes, cfg.zeta, cfg.alpha);
}

// Certification: a selection round of n0 draws picks the candidate class, a
// fresh estimation round of n draws yields Clopper-Pearson bounds at
// coverage 1 - alpha, and the certified radius is solved per requested norm.
// Abstains when the candidate loses the estimation round, when a competitor
// passes the zeta veto, when the top frequency is not above iota, or when
// the bounds degenerate (pA_lower <= pB_upper).
inline CertifyOutcome certify(const Classifier& classifier, const std::vector<double>& x,
                              const SmoothingConfig& cfg, Rng& rng) {
  cfg.validate();
  CertifyOutcome out;
  out.seed = draw_seed(rng);
  Rng local = make_rng(out.seed);

  int candidate;
  if (cfg.single_round) {
    out.votes = estimate_votes(classifier, x, cfg.spec, cfg.n, local, cfg.workers);
    candidate = out.votes.top_class;
  } else {
    VoteCounts selection = estimate_votes(classifier, x, cfg.spec, cfg.n0, local, cfg.workers);
    candidate = selection.top_class;
    out.votes = estimate_votes(classifier, x, cfg.spec, cfg.n, local, cfg.workers);
  }

  // The estimation round must confirm the selected class.
  if (out.votes.top_class != candidate) return out;
  for (int c = 0; c < static_cast<int>(out.votes.counts.size()); ++c) {
    if (c == candidate) continue;
    if (static_cast<double>(out.votes.counts[c]) >
        cfg.zeta * static_cast<double>(out.votes.counts[candidate])) {
      return out;
    }
  }
  double freq = static_cast<double>(out.votes.counts[candidate]) / static_cast<double>(cfg.n);
  if (!(freq > cfg.iota)) return out;

  double coverage = 1.0 - cfg.alpha;
  out.pa_lower = clopper_pearson(out.votes.counts[candidate], cfg.n, coverage, BoundSide::kLower);
  long long runner_count = out.votes.counts[out.votes.runner_up];
  double pb_cp = clopper_pearson(runner_count, cfg.n, coverage, BoundSide::kUpper);
  out.pb_upper = std::min(1.0 - out.pa_lower, pb_cp);
  if (!(out.pa_lower > out.pb_upper)) return out;

  for (Norm p : cfg.norms) {
    Rng solver_rng = substream(out.seed, 0x7261ULL + static_cast<std::uint64_t>(p));
    out.radii[p] = certified_radius(out.pa_lower, out.pb_upper, cfg.spec, p, cfg.solver, solver_rng);
  }
  out.decision = candidate;
  return out;
}

struct PurifyResult {
  std::vector<std::size_t> certified_ids;
  std::vector<std::size_t> abstained_ids;
  double pass_rate = 0.0;
};

// Certification as a data filter: inputs that certify pass, the rest are
// rejected.
inline PurifyResult purify(const Classifier& classifier,
                           const std::vector<std::vector<double>>& inputs,
                           const SmoothingConfig& cfg, Rng& rng) {
  cfg.validate();
  if (inputs.empty()) throw std::invalid_argument("purify: empty input set");
  PurifyResult out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CertifyOutcome oc = certify(classifier, inputs[i], cfg, rng);
    if (oc.decision == kAbstain) {
      out.abstained_ids.push_back(i);
    } else {
      out.certified_ids.push_back(i);
    }
  }
  out.pass_rate = static_cast<double>(out.certified_ids.size()) / static_cast<double>(inputs.size());
  return out;
}

inline Classifier as_classifier(const DenseNetwork& net) {
  return [net](const std::vector<double>& x) { return net.forward(x); };
}

}  // namespace smoothcert
