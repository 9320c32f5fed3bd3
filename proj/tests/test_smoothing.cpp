#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <memory>
#include <vector>

#include "smoothcert/dataset.hpp"
#include "smoothcert/smoothing.hpp"

using namespace smoothcert;
using Catch::Approx;

namespace {

VoteCounts votes_of(std::vector<long long> counts) {
  VoteCounts v;
  v.counts = std::move(counts);
  v.n = 0;
  for (long long c : v.counts) v.n += c;
  v.top_class = 0;
  for (int c = 1; c < static_cast<int>(v.counts.size()); ++c) {
    if (v.counts[c] > v.counts[v.top_class]) v.top_class = c;
  }
  v.runner_up = v.top_class == 0 ? 1 : 0;
  for (int c = 0; c < static_cast<int>(v.counts.size()); ++c) {
    if (c == v.top_class) continue;
    if (v.counts[c] > v.counts[v.runner_up]) v.runner_up = c;
  }
  return v;
}

Classifier constant_classifier(int cls, int num_classes) {
  return [cls, num_classes](const std::vector<double>&) {
    std::vector<double> logits(num_classes, 0.0);
    logits[cls] = 1.0;
    return logits;
  };
}

// Class is a function of the call index; index 0 is the clean-input probe
// estimate_votes makes before sampling. Bands are cumulative call-count
// cutoffs, one per class.
Classifier scripted_classifier(std::vector<long long> cutoffs,
                               std::shared_ptr<std::atomic<long long>> calls) {
  return [cutoffs, calls](const std::vector<double>&) {
    long long idx = calls->fetch_add(1);
    std::vector<double> logits(cutoffs.size() + 1, 0.0);
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      if (idx <= cutoffs[c]) {
        logits[c] = 1.0;
        return logits;
      }
    }
    logits[cutoffs.size()] = 1.0;
    return logits;
  };
}

Classifier sign_classifier() {
  return [](const std::vector<double>& x) { return std::vector<double>{x[0], -x[0]}; };
}

SmoothingConfig quick_config(int dim) {
  SmoothingConfig cfg;
  cfg.spec = NoiseSpec::gaussian(1.0, dim);
  cfg.n0 = 100;
  cfg.n = 1000;
  cfg.alpha = 0.001;
  cfg.solver.mc_n = 5000;
  cfg.solver.pso_particles = 6;
  cfg.solver.pso_iters = 6;
  cfg.solver.bisect_iters = 25;
  return cfg;
}

}  // namespace

TEST_CASE("vote decision rule: veto, significance, and clear winners") {
  // Near-tie fails the two-sided exact binomial test even without a veto.
  CHECK(detail::decide_from_votes(votes_of({501, 499}), 0.999, 0.05) == kAbstain);
  // Landslide passes both gates.
  CHECK(detail::decide_from_votes(votes_of({990, 10}), 0.5, 0.001) == 0);
  // Veto fires although the split is statistically decisive.
  CHECK(detail::decide_from_votes(votes_of({600, 400}), 0.5, 0.001) == kAbstain);
  CHECK(detail::decide_from_votes(votes_of({600, 400}), 0.999, 0.001) == 0);
  // Multiclass: no veto at zeta = 0.95, but 400 vs 370 is not significant.
  CHECK(detail::decide_from_votes(votes_of({400, 370, 230}), 0.95, 0.05) == kAbstain);
  // Multiclass with a dominant class decides it.
  CHECK(detail::decide_from_votes(votes_of({800, 100, 100}), 0.5, 0.001) == 0);
  // Exact tie abstains.
  CHECK(detail::decide_from_votes(votes_of({500, 500}), 0.999, 0.05) == kAbstain);
}

TEST_CASE("smoothed prediction on constant and coin-flip classifiers") {
  SmoothingConfig cfg = quick_config(2);
  std::vector<double> x = {0.0, 0.0};

  Rng rng = make_rng(1);
  CHECK(smooth_predict(constant_classifier(0, 2), x, cfg, rng) == 0);

  // Alternating classifier: exactly half the draws vote each class.
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Classifier coin = [calls](const std::vector<double>&) {
    long long idx = calls->fetch_add(1);
    return idx % 2 == 0 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0};
  };
  Rng rng2 = make_rng(2);
  CHECK(smooth_predict(coin, x, cfg, rng2) == kAbstain);
}

TEST_CASE("certification of a constant classifier hits the closed-form bounds") {
  SmoothingConfig cfg = quick_config(2);
  std::vector<double> x = {0.3, -0.2};
  Rng rng = make_rng(7);
  CertifyOutcome oc = certify(constant_classifier(0, 2), x, cfg, rng);

  REQUIRE(oc.decision == 0);
  CHECK(oc.votes.counts[0] == 1000);
  // Unanimous votes at coverage 0.999: pA = 0.001^(1/1000), pB = 1 - pA.
  CHECK(oc.pa_lower == Approx(0.99311604842093382).margin(1e-12));
  CHECK(oc.pb_upper == Approx(1.0 - 0.99311604842093382).margin(1e-12));
  REQUIRE(oc.radii.count(Norm::kL2) == 1);
  const RadiusResult& r = oc.radii.at(Norm::kL2);
  CHECK(r.gaussian_cross_check == Approx(2.4632626147808114).margin(1e-10));
  CHECK(r.radius == Approx(2.4632626147808114).epsilon(0.06));
  CHECK(r.converged);
}

TEST_CASE("certification abstains when the estimation round flips the class") {
  SmoothingConfig cfg = quick_config(2);
  std::vector<double> x = {0.0, 0.0};
  // Probe + the whole selection round vote class 0, every estimation draw
  // votes class 1: candidate 0 loses the estimation round.
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Rng rng = make_rng(3);
  CertifyOutcome oc = certify(scripted_classifier({100}, calls), x, cfg, rng);
  CHECK(oc.decision == kAbstain);
  CHECK(oc.votes.counts[0] == 0);
  CHECK(oc.votes.counts[1] == 1000);
  CHECK(std::isnan(oc.pa_lower));
  CHECK(oc.radii.empty());
}

TEST_CASE("certification abstains on the competing-class veto") {
  SmoothingConfig cfg = quick_config(2);
  cfg.zeta = 0.5;
  std::vector<double> x = {0.0, 0.0};
  // Selection all class 0, estimation 600/400. Each round probes the clean
  // input once, so estimation draws start at call index 102.
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Rng rng = make_rng(3);
  CertifyOutcome oc = certify(scripted_classifier({101 + 600}, calls), x, cfg, rng);
  CHECK(oc.votes.counts[0] == 600);
  CHECK(oc.votes.counts[1] == 400);
  CHECK(oc.decision == kAbstain);
  CHECK(oc.radii.empty());
}

TEST_CASE("certification abstains below the frequency floor") {
  SmoothingConfig cfg = quick_config(2);
  cfg.zeta = 0.999;
  cfg.iota = 0.6;
  std::vector<double> x = {0.0, 0.0};
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Rng rng = make_rng(3);
  CertifyOutcome oc = certify(scripted_classifier({101 + 520}, calls), x, cfg, rng);
  CHECK(oc.votes.counts[0] == 520);
  CHECK(oc.decision == kAbstain);
  // The frequency gate fires before any bound is computed.
  CHECK(std::isnan(oc.pa_lower));
}

TEST_CASE("certification abstains when the interval bounds cross") {
  SmoothingConfig cfg = quick_config(2);
  cfg.alpha = 0.05;
  cfg.zeta = 0.95;
  cfg.iota = 0.35;
  std::vector<double> x = {0.0, 0.0};
  // Estimation votes [400, 370, 230]: passes veto and frequency floor, but
  // the 95% bounds give pA_lower < pB_upper.
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Rng rng = make_rng(3);
  CertifyOutcome oc =
      certify(scripted_classifier({101 + 400, 101 + 400 + 370}, calls), x, cfg, rng);
  CHECK(oc.votes.counts == std::vector<long long>{400, 370, 230});
  CHECK(oc.decision == kAbstain);
  CHECK(oc.radii.empty());
  // This abstain happens after the bounds are computed.
  CHECK(oc.pa_lower == Approx(0.37426088184572243).margin(1e-10));
  CHECK(oc.pb_upper == Approx(0.3958740698950855).margin(1e-10));
}

TEST_CASE("single-round certification selects from the estimation draws") {
  SmoothingConfig cfg = quick_config(2);
  cfg.single_round = true;
  std::vector<double> x = {0.0, 0.0};
  // First 100 draws vote class 0, the rest class 1: the single round sees
  // [100, 900] and certifies class 1. A two-round run with these dynamics
  // would select class 0 and then abstain.
  auto calls = std::make_shared<std::atomic<long long>>(0);
  Rng rng = make_rng(5);
  CertifyOutcome oc = certify(scripted_classifier({100}, calls), x, cfg, rng);
  CHECK(*calls == 1001);  // probe + n, no selection round
  REQUIRE(oc.decision == 1);
  CHECK(oc.votes.counts == std::vector<long long>{100, 900});
  CHECK(oc.pa_lower == Approx(0.86746401802574824).margin(1e-10));
  CHECK(oc.pb_upper == Approx(0.13253598197425176).margin(1e-10));
}

TEST_CASE("certification is reproducible from the stored seed") {
  SmoothingConfig cfg = quick_config(1);
  cfg.spec = NoiseSpec::gaussian(0.5, 1);
  std::vector<double> x = {1.0};

  Rng rng1 = make_rng(11);
  CertifyOutcome a = certify(sign_classifier(), x, cfg, rng1);
  Rng rng2 = make_rng(11);
  CertifyOutcome b = certify(sign_classifier(), x, cfg, rng2);
  REQUIRE(a.decision == b.decision);
  CHECK(a.seed == b.seed);
  CHECK(a.votes.counts == b.votes.counts);
  if (a.decision != kAbstain) {
    CHECK(a.pa_lower == b.pa_lower);
    CHECK(a.radii.at(Norm::kL2).radius == b.radii.at(Norm::kL2).radius);
  }

  // Multi-worker runs reproduce as well, scheduling notwithstanding.
  cfg.workers = 4;
  Rng rng3 = make_rng(11);
  CertifyOutcome c = certify(sign_classifier(), x, cfg, rng3);
  Rng rng4 = make_rng(11);
  CertifyOutcome d = certify(sign_classifier(), x, cfg, rng4);
  CHECK(c.votes.counts == d.votes.counts);
  CHECK(c.decision == d.decision);
}

TEST_CASE("noise-augmented training learns and is seed-deterministic") {
  DatasetFile ds = make_blobs(64, 2, 2, 3.0, 0.3, 0.0, 17);
  Batch data;
  data.inputs = ds.features;
  data.labels = ds.labels;
  DenseNetwork net = DenseNetwork::init({2, 8, 2}, Activation::kRelu, 4);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  cfg.learning_rate = 5e-3;
  cfg.seed = 9;
  NoiseSpec spec = NoiseSpec::gaussian(0.4, 2);

  TrainResult a = noise_train(net, data, spec, cfg);
  CHECK(a.loss_history.size() == 25);
  CHECK(a.loss_history.back() < a.loss_history.front());
  CHECK(accuracy(a.net, data.inputs, data.labels) > 0.9);

  TrainResult b = noise_train(net, data, spec, cfg);
  for (std::size_t l = 0; l < a.net.weights.size(); ++l) {
    REQUIRE(a.net.weights[l].data == b.net.weights[l].data);
  }

  NoiseSpec wrong = NoiseSpec::gaussian(0.4, 3);
  CHECK_THROWS_AS(noise_train(net, data, wrong, cfg), std::invalid_argument);
}

TEST_CASE("purification separates confident inputs from boundary inputs") {
  SmoothingConfig cfg = quick_config(1);
  cfg.spec = NoiseSpec::gaussian(0.5, 1);
  std::vector<std::vector<double>> inputs = {{3.0}, {-3.0}, {0.0}};
  Rng rng = make_rng(19);
  PurifyResult pr = purify(sign_classifier(), inputs, cfg, rng);
  CHECK(pr.certified_ids == std::vector<std::size_t>{0, 1});
  CHECK(pr.abstained_ids == std::vector<std::size_t>{2});
  CHECK(pr.pass_rate == Approx(2.0 / 3.0).margin(1e-12));

  Rng rng2 = make_rng(20);
  PurifyResult all = purify(constant_classifier(1, 2), inputs, cfg, rng2);
  CHECK(all.pass_rate == 1.0);
  CHECK(all.abstained_ids.empty());

  CHECK_THROWS_AS(purify(sign_classifier(), {}, cfg, rng), std::invalid_argument);
}

TEST_CASE("smoothing configuration validation") {
  SmoothingConfig cfg = quick_config(2);
  cfg.n0 = 2000;  // exceeds n
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick_config(2);
  cfg.n0 = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick_config(2);
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick_config(2);
  cfg.zeta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick_config(2);
  cfg.iota = -0.2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick_config(2);
  cfg.workers = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("network wrapper matches direct forward calls") {
  DenseNetwork net = DenseNetwork::init({2, 4, 2}, Activation::kTanh, 23);
  Classifier clf = as_classifier(net);
  std::vector<double> x = {0.4, -1.1};
  CHECK(clf(x) == net.forward(x));
}
