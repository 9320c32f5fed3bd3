#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/dataset.hpp"
#include "smoothcert/distill.hpp"
#include "smoothcert/net.hpp"
#include "smoothcert/smoothing.hpp"

namespace smoothcert {

// Certified accuracy as a step function of the radius: points (R, acc) on a
// strictly increasing grid, acc non-increasing.
struct AccuracyCurve {
  double sigma = 0.0;
  std::vector<std::pair<double, double>> points;

  void validate() const {
    if (points.empty()) throw std::invalid_argument("AccuracyCurve: no points");
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
      if (!(points[i].first < points[i + 1].first)) {
        throw std::invalid_argument("AccuracyCurve: radii must be strictly increasing");
      }
      if (points[i].second < points[i + 1].second - 1e-12) {
        throw std::invalid_argument("AccuracyCurve: accuracy must be non-increasing");
      }
    }
    for (const auto& [r, a] : points) {
      if (!(r >= 0.0)) throw std::invalid_argument("AccuracyCurve: radii must be >= 0");
      if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("AccuracyCurve: accuracy must lie in [0,1]");
    }
  }
};

// Fraction of inputs certified correctly with radius strictly above each
// grid value. Abstentions and wrong decisions count as incorrect at every
// radius.
inline AccuracyCurve certified_accuracy_curve(
    const std::vector<std::pair<CertifyOutcome, int>>& outcomes, const std::vector<double>& grid,
    Norm p, double sigma = 0.0) {
  if (outcomes.empty()) throw std::invalid_argument("certified_accuracy_curve: no outcomes");
  if (grid.empty()) throw std::invalid_argument("certified_accuracy_curve: empty grid");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    if (!(grid[i] < grid[i + 1])) {
      throw std::invalid_argument("certified_accuracy_curve: grid must be strictly increasing");
    }
  }
  AccuracyCurve curve;
  curve.sigma = sigma;
  for (double r : grid) {
    long long hits = 0;
    for (const auto& [oc, label] : outcomes) {
      if (oc.decision == kAbstain || oc.decision != label) continue;
      auto it = oc.radii.find(p);
      if (it == oc.radii.end()) continue;
      if (it->second.radius > r) ++hits;
    }
    curve.points.emplace_back(r, static_cast<double>(hits) / static_cast<double>(outcomes.size()));
  }
  curve.validate();
  return curve;
}

namespace detail {

// Step-function value at r: the accuracy at the last grid point <= r. Below
// the first point the first value extends left; beyond the last point the
// last value extends right.
inline double step_value(const AccuracyCurve& c, double r) {
  if (r < c.points.front().first) return c.points.front().second;
  double v = c.points.front().second;
  for (const auto& [radius, acc] : c.points) {
    if (radius <= r) {
      v = acc;
    } else {
      break;
    }
  }
  return v;
}

}  // namespace detail

// Area under the pointwise maximum of the curves from 0 to r_max,
// integrating the step functions exactly on the merged grid.
inline double robust_score(const std::vector<AccuracyCurve>& curves, double r_max) {
  if (curves.empty()) throw std::invalid_argument("robust_score: no curves");
  if (!(r_max > 0.0)) throw std::invalid_argument("robust_score: r_max must be positive");
  for (const auto& c : curves) c.validate();

  std::set<double> merged;
  merged.insert(0.0);
  for (const auto& c : curves) {
    for (const auto& [r, a] : c.points) {
      if (r < r_max) merged.insert(r);
    }
  }
  std::vector<double> knots(merged.begin(), merged.end());
  knots.push_back(r_max);

  double area = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    double lo = knots[i], hi = knots[i + 1];
    double env = 0.0;
    for (const auto& c : curves) env = std::max(env, detail::step_value(c, lo));
    area += env * (hi - lo);
  }
  return area;
}

struct GridSearchConfig {
  std::vector<double> beta_grid;
  std::vector<double> sigma_set;
  std::vector<int> hidden_layers = {16};
  TrainConfig train;
  SmoothingConfig smoothing;     // per-cell noise spec is overwritten
  std::vector<Norm> norms = {Norm::kL1, Norm::kL2, Norm::kLinf};
  int eval_count = 200;
  double train_fraction = 0.7;
  int curve_steps = 24;

  void validate() const {
    if (beta_grid.empty()) throw std::invalid_argument("GridSearchConfig: empty beta grid");
    for (double b : beta_grid) {
      if (!(b > 0.0)) throw std::invalid_argument("GridSearchConfig: beta values must be positive");
    }
    if (sigma_set.empty()) throw std::invalid_argument("GridSearchConfig: empty sigma set");
    for (double s : sigma_set) {
      if (!(s > 0.0)) throw std::invalid_argument("GridSearchConfig: sigma values must be positive");
    }
    if (norms.empty()) throw std::invalid_argument("GridSearchConfig: no norms requested");
    if (eval_count < 1) throw std::invalid_argument("GridSearchConfig: eval_count must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw std::invalid_argument("GridSearchConfig: train_fraction must lie in (0,1)");
    }
    if (curve_steps < 2) throw std::invalid_argument("GridSearchConfig: curve_steps must be >= 2");
    train.validate();
  }
};

struct GridCellFailure {
  double beta = 0.0;
  double sigma = 0.0;
  std::string error;
};

struct GridSearchResult {
  std::vector<double> beta_grid;
  // Scores aligned with beta_grid; NaN marks a beta whose every cell failed.
  std::map<Norm, std::vector<double>> scores;
  std::map<Norm, double> best_beta;
  std::map<Norm, std::vector<AccuracyCurve>> best_curves;
  std::vector<GridCellFailure> failures;
};

// Sweep over exponential-power shapes: for each beta, noise-train one model
// per sigma with the calibrated scale, certify a fixed evaluation subset,
// and integrate the per-norm envelope over sigma. The best beta per norm is
// the argmax of its score column (lowest beta on ties). A failing cell is
// recorded and skipped rather than aborting the sweep.
inline GridSearchResult noise_grid_search(const DatasetFile& dataset, const GridSearchConfig& cfg,
                                          Rng& rng) {
  cfg.validate();
  if (!dataset.labeled) throw std::invalid_argument("noise_grid_search: dataset must be labeled");
  if (dataset.size() < 10) throw std::invalid_argument("noise_grid_search: dataset too small");

  int dim = dataset.dim();
  int classes = dataset.num_classes();
  if (classes < 2) throw std::invalid_argument("noise_grid_search: need at least two classes");

  std::size_t train_n = static_cast<std::size_t>(dataset.size() * cfg.train_fraction);
  if (train_n == 0 || train_n >= dataset.size()) {
    throw std::invalid_argument("noise_grid_search: degenerate train/eval split");
  }
  Batch train_data;
  train_data.inputs.assign(dataset.features.begin(), dataset.features.begin() + train_n);
  train_data.labels.assign(dataset.labels.begin(), dataset.labels.begin() + train_n);

  std::size_t eval_n = std::min<std::size_t>(cfg.eval_count, dataset.size() - train_n);
  std::vector<std::vector<double>> eval_x(dataset.features.begin() + train_n,
                                          dataset.features.begin() + train_n + eval_n);
  std::vector<int> eval_y(dataset.labels.begin() + train_n,
                          dataset.labels.begin() + train_n + eval_n);

  std::vector<int> arch;
  arch.push_back(dim);
  for (int h : cfg.hidden_layers) arch.push_back(h);
  arch.push_back(classes);

  GridSearchResult out;
  out.beta_grid = cfg.beta_grid;

  // Pass 1: certify every cell, keeping raw outcomes.
  struct CellOutcomes {
    bool ok = false;
    double sigma = 0.0;
    std::vector<std::pair<CertifyOutcome, int>> outcomes;
  };
  std::vector<std::vector<CellOutcomes>> cells(cfg.beta_grid.size());

  std::uint64_t sweep_seed = draw_seed(rng);
  for (std::size_t bi = 0; bi < cfg.beta_grid.size(); ++bi) {
    cells[bi].resize(cfg.sigma_set.size());
    for (std::size_t si = 0; si < cfg.sigma_set.size(); ++si) {
      double beta = cfg.beta_grid[bi];
      double sigma = cfg.sigma_set[si];
      CellOutcomes& cell = cells[bi][si];
      cell.sigma = sigma;
      try {
        NoiseSpec spec = NoiseSpec::exponential_power(beta, sigma, dim);
        std::uint64_t cell_seed = sweep_seed ^ (0x9e37ULL * (bi * 131 + si + 1));
        TrainConfig tc = cfg.train;
        tc.seed = cell_seed;
        DenseNetwork net = DenseNetwork::init(arch, Activation::kRelu, cell_seed);
        TrainResult tr = noise_train(net, train_data, spec, tc);
        Classifier clf = as_classifier(tr.net);

        SmoothingConfig sc = cfg.smoothing;
        sc.spec = spec;
        sc.norms = cfg.norms;
        Rng cert_rng = substream(cell_seed, 0xce27ULL);
        for (std::size_t i = 0; i < eval_x.size(); ++i) {
          cell.outcomes.emplace_back(certify(clf, eval_x[i], sc, cert_rng), eval_y[i]);
        }
        cell.ok = true;
      } catch (const std::exception& e) {
        out.failures.push_back({beta, sigma, e.what()});
      }
    }
  }

  // Pass 2: shared per-norm radius grid over every cell for comparability,
  // spanning the largest observed radius plus one step.
  for (Norm p : cfg.norms) {
    double r_max = 0.0;
    for (const auto& row : cells) {
      for (const auto& cell : row) {
        for (const auto& [oc, label] : cell.outcomes) {
          auto it = oc.radii.find(p);
          if (it != oc.radii.end() && std::isfinite(it->second.radius)) {
            r_max = std::max(r_max, it->second.radius);
          }
        }
      }
    }
    if (r_max <= 0.0) r_max = 1.0;
    double step = r_max / cfg.curve_steps;
    std::vector<double> grid;
    for (int i = 0; i <= cfg.curve_steps + 1; ++i) grid.push_back(i * step);

    std::vector<double>& col = out.scores[p];
    col.assign(cfg.beta_grid.size(), std::numeric_limits<double>::quiet_NaN());
    double best_score = -1.0;  // ties resolve to the lowest beta
    for (std::size_t bi = 0; bi < cfg.beta_grid.size(); ++bi) {
      std::vector<AccuracyCurve> curves;
      for (const auto& cell : cells[bi]) {
        if (!cell.ok) continue;
        curves.push_back(certified_accuracy_curve(cell.outcomes, grid, p, cell.sigma));
      }
      if (curves.empty()) continue;
      col[bi] = robust_score(curves, grid.back());
      if (col[bi] > best_score) {
        best_score = col[bi];
        out.best_beta[p] = cfg.beta_grid[bi];
        out.best_curves[p] = curves;
      }
    }
  }
  return out;
}

// ---- membership inference --------------------------------------------

using Scorer = std::function<double(const std::vector<double>&)>;

struct MiaResult {
  double asr = 0.0;
  double threshold = 0.0;
  long long member_count = 0;
  long long nonmember_count = 0;
};

inline Scorer confidence_scorer(const Classifier& clf) {
  return [clf](const std::vector<double>& x) {
    std::vector<double> p = softmax(clf(x));
    double best = p[0];
    for (double v : p) best = std::max(best, v);
    return best;
  };
}

// Confidence of the abstain-aware smoothed predictor: the top vote share, or
// 0 (below any achievable confidence) on abstention.
inline Scorer smoothed_scorer(const Classifier& clf, const SmoothingConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  auto rng = std::make_shared<Rng>(make_rng(seed));
  return [clf, cfg, rng](const std::vector<double>& x) {
    VoteCounts votes = estimate_votes(clf, x, cfg.spec, cfg.n, *rng, cfg.workers);
    int decision = detail::decide_from_votes(votes, cfg.zeta, cfg.alpha);
    if (decision == kAbstain) return 0.0;
    return static_cast<double>(votes.counts[decision]) / static_cast<double>(votes.n);
  };
}

namespace detail {

inline double balanced_accuracy(const std::vector<double>& member_scores,
                                const std::vector<double>& nonmember_scores, double threshold) {
  long long tp = 0, tn = 0;
  for (double s : member_scores) {
    if (s >= threshold) ++tp;
  }
  for (double s : nonmember_scores) {
    if (s < threshold) ++tn;
  }
  double tpr = static_cast<double>(tp) / static_cast<double>(member_scores.size());
  double tnr = static_cast<double>(tn) / static_cast<double>(nonmember_scores.size());
  return 0.5 * (tpr + tnr);
}

}  // namespace detail

// Confidence-threshold membership attack. Sets are balanced by subsampling,
// then split into disjoint calibration and evaluation halves; the threshold
// maximizing balanced accuracy on the calibration half is scored on the
// evaluation half. Predicting "member" means score >= threshold.
inline MiaResult membership_inference_asr(const Scorer& scorer,
                                          const std::vector<std::vector<double>>& members,
                                          const std::vector<std::vector<double>>& nonmembers,
                                          Rng& rng) {
  if (members.size() < 4 || nonmembers.size() < 4) {
    throw std::invalid_argument("membership_inference_asr: degenerate attack sets (need >= 4 each)");
  }
  std::size_t m = std::min(members.size(), nonmembers.size());

  auto subsample = [&](const std::vector<std::vector<double>>& pool) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> scores;
    scores.reserve(m);
    for (std::size_t i = 0; i < m; ++i) scores.push_back(scorer(pool[idx[i]]));
    return scores;
  };
  std::vector<double> member_scores = subsample(members);
  std::vector<double> nonmember_scores = subsample(nonmembers);

  std::size_t half = m / 2;
  std::vector<double> cal_m(member_scores.begin(), member_scores.begin() + half);
  std::vector<double> eval_m(member_scores.begin() + half, member_scores.end());
  std::vector<double> cal_n(nonmember_scores.begin(), nonmember_scores.begin() + half);
  std::vector<double> eval_n(nonmember_scores.begin() + half, nonmember_scores.end());

  std::vector<double> candidates = cal_m;
  candidates.insert(candidates.end(), cal_n.begin(), cal_n.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Threshold above every score predicts nothing as member: balanced
  // accuracy exactly 0.5, the baseline the sweep must beat.
  double best_threshold = candidates.back() + 1.0;
  double best_acc = 0.5;
  for (double t : candidates) {
    double acc = detail::balanced_accuracy(cal_m, cal_n, t);
    if (acc > best_acc) {
      best_acc = acc;
      best_threshold = t;
    }
  }

  MiaResult out;
  out.threshold = best_threshold;
  out.asr = detail::balanced_accuracy(eval_m, eval_n, best_threshold);
  out.member_count = static_cast<long long>(eval_m.size());
  out.nonmember_count = static_cast<long long>(eval_n.size());
  return out;
}

// ---- projected gradient ascent -----------------------------------------

// Untargeted PGD on the cross-entropy loss. The perturbation is kept inside
// the eps ball after every step, so eps = 0 returns x exactly.
inline std::vector<double> pgd_attack(const DenseNetwork& net, const std::vector<double>& x,
                                      int label, Norm p, double eps, int steps, double step_size,
                                      Rng& rng, bool random_start = false) {
  if (p != Norm::kL2 && p != Norm::kLinf) {
    throw std::invalid_argument("pgd_attack: only l2 and linf are supported");
  }
  if (!(eps >= 0.0)) throw std::invalid_argument("pgd_attack: eps must be >= 0");
  if (steps < 0) throw std::invalid_argument("pgd_attack: steps must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("pgd_attack: step_size must be positive");
  if (label < 0 || label >= net.output_dim()) {
    throw std::invalid_argument("pgd_attack: label out of range");
  }
  std::size_t d = x.size();
  std::vector<double> delta(d, 0.0);

  auto project = [&]() {
    if (p == Norm::kLinf) {
      for (double& v : delta) v = std::clamp(v, -eps, eps);
    } else {
      double n2 = 0.0;
      for (double v : delta) n2 += v * v;
      n2 = std::sqrt(n2);
      if (n2 > eps) {
        double scale = eps > 0.0 ? eps / n2 : 0.0;
        for (double& v : delta) v *= scale;
      }
    }
  };

  if (random_start && eps > 0.0) {
    if (p == Norm::kLinf) {
      std::uniform_real_distribution<double> u(-eps, eps);
      for (double& v : delta) v = u(rng);
    } else {
      std::normal_distribution<double> g(0.0, 1.0);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double n2 = 0.0;
      for (double& v : delta) {
        v = g(rng);
        n2 += v * v;
      }
      n2 = std::sqrt(n2);
      if (n2 > 0.0) {
        double r = eps * std::pow(u(rng), 1.0 / static_cast<double>(d));
        for (double& v : delta) v *= r / n2;
      }
    }
    project();
  }

  std::vector<double> adv(d);
  for (int s = 0; s < steps; ++s) {
    for (std::size_t j = 0; j < d; ++j) adv[j] = x[j] + delta[j];
    std::vector<double> g = input_gradient(net, adv, label);
    if (p == Norm::kLinf) {
      for (std::size_t j = 0; j < d; ++j) {
        double sgn = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
        delta[j] += step_size * sgn;
      }
    } else {
      double n2 = 0.0;
      for (double v : g) n2 += v * v;
      n2 = std::sqrt(n2);
      if (n2 > 0.0) {
        for (std::size_t j = 0; j < d; ++j) delta[j] += step_size * g[j] / n2;
      }
    }
    project();
  }
  for (std::size_t j = 0; j < d; ++j) adv[j] = x[j] + delta[j];
  return adv;
}

}  // namespace smoothcert
