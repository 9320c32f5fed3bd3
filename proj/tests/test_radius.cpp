#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "smoothcert/radius.hpp"
#include "smoothcert/rng.hpp"

using namespace smoothcert;
using Catch::Approx;

TEST_CASE("norm helpers") {
  std::vector<double> v = {3.0, -4.0, 0.0};
  CHECK(norm_value(v, Norm::kL1) == 7.0);
  CHECK(norm_value(v, Norm::kL2) == 5.0);
  CHECK(norm_value(v, Norm::kLinf) == 4.0);
  CHECK(parse_norm("l1") == Norm::kL1);
  CHECK(parse_norm("2") == Norm::kL2);
  CHECK(parse_norm("inf") == Norm::kLinf);
  CHECK_THROWS_AS(parse_norm("l3"), std::invalid_argument);
  CHECK(std::string(norm_name(Norm::kLinf)) == "linf");
}

TEST_CASE("gaussian closed-form radius") {
  CHECK(gaussian_radius(0.9, 0.2, 1.0) == Approx(1.0615863995587573).margin(1e-12));
  CHECK(gaussian_radius(0.9, 0.1, 1.0) == Approx(1.2815515655446004).margin(1e-12));
  CHECK(gaussian_radius(0.99311604842093382, 0.0068839515790661832, 1.0) ==
        Approx(2.4632626147808114).margin(1e-10));
  // Linear in sigma.
  CHECK(gaussian_radius(0.9, 0.1, 2.5) ==
        Approx(2.5 * 1.2815515655446004).margin(1e-12));
  // Degenerate and saturated bounds.
  CHECK(gaussian_radius(0.4, 0.6, 1.0) == 0.0);
  CHECK(gaussian_radius(0.5, 0.5, 1.0) == 0.0);
  CHECK(gaussian_radius(1.0, 0.0, 1.0) == std::numeric_limits<double>::infinity());

  CHECK_THROWS_AS(gaussian_radius(0.9, 0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_radius(1.5, 0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_radius(0.9, -0.1, 1.0), std::invalid_argument);
}

TEST_CASE("bisection finds the root of an analytic margin") {
  RadiusSolverConfig cfg;
  cfg.k_threshold = 0.01;
  cfg.bisect_iters = 40;

  // Decreasing margin with root at 1.
  ScalarResult r = bisect_boundary([](double lam) { return 1.0 - lam; }, 0.1, cfg);
  CHECK(r.converged);
  CHECK(r.lambda == Approx(1.0).margin(0.011));
  CHECK(std::fabs(r.residual_k) <= 0.01);

  // Tight threshold pins an irrational root.
  cfg.k_threshold = 1e-9;
  cfg.bisect_iters = 60;
  double root = std::sqrt(2.0);
  ScalarResult tight = bisect_boundary([&](double lam) { return root - lam; }, 0.3, cfg);
  CHECK(tight.converged);
  CHECK(tight.lambda == Approx(root).margin(1e-8));
  CHECK(tight.evaluations > 10);
}

TEST_CASE("bisection early paths and bracket growth") {
  RadiusSolverConfig cfg;
  cfg.k_threshold = 0.01;

  // Margin already under threshold at the initial lambda.
  ScalarResult imm = bisect_boundary([](double) { return 0.005; }, 2.0, cfg);
  CHECK(imm.converged);
  CHECK(imm.lambda == 2.0);
  CHECK(imm.evaluations == 1);

  // Negative start walks the bracket down; eval at lambda exactly 1 returns 0.
  ScalarResult down = bisect_boundary([](double lam) { return 1.0 - lam; }, 8.0, cfg);
  CHECK(down.converged);
  CHECK(down.lambda == 1.0);

  // Positive start grows the bracket up before refining.
  ScalarResult up = bisect_boundary([](double lam) { return 100.0 - lam; }, 0.5, cfg);
  CHECK(up.converged);
  CHECK(up.lambda == Approx(100.0).margin(0.011));
}

TEST_CASE("bisection reports unbracketable margins") {
  RadiusSolverConfig cfg;
  CHECK_THROWS_AS(bisect_boundary([](double) { return 1.0; }, 1.0, cfg), BracketError);
  CHECK_THROWS_AS(bisect_boundary([](double) { return -1.0; }, 1.0, cfg), BracketError);
  CHECK_THROWS_AS(bisect_boundary([](double) { return 0.5; }, 0.0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(bisect_boundary([](double) { return 0.5; }, -2.0, cfg), std::invalid_argument);
}

TEST_CASE("solver configuration validation") {
  RadiusSolverConfig cfg;
  cfg.mc_n = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RadiusSolverConfig{};
  cfg.bisect_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RadiusSolverConfig{};
  cfg.k_threshold = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RadiusSolverConfig{};
  cfg.bracket_growth = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RadiusSolverConfig{};
  cfg.pso_particles = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RadiusSolverConfig{};
  cfg.pso_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("scalar stage recovers the gaussian boundary distance") {
  NoiseSpec spec = NoiseSpec::gaussian(1.0, 2);
  RadiusSolverConfig cfg;
  cfg.mc_n = 20000;
  cfg.bisect_iters = 40;
  cfg.k_threshold = 0.01;
  cfg.norm = Norm::kL2;

  Rng rng = make_rng(21);
  ScalarResult r = scalar_optimize({3.0, 4.0}, 0.9, 0.1, spec, cfg, rng);
  CHECK(r.converged);
  // Isotropic noise: every direction has the closed-form boundary distance.
  CHECK(r.lambda == Approx(1.2815515655446004).epsilon(0.05));

  // Deterministic in the rng seed.
  Rng rng2 = make_rng(21);
  ScalarResult again = scalar_optimize({3.0, 4.0}, 0.9, 0.1, spec, cfg, rng2);
  CHECK(again.lambda == r.lambda);
  CHECK(again.evaluations == r.evaluations);

  // Isotropy: an axis direction lands near the same boundary.
  Rng rng3 = make_rng(22);
  ScalarResult axis = scalar_optimize({0.0, 1.0}, 0.9, 0.1, spec, cfg, rng3);
  CHECK(axis.lambda == Approx(r.lambda).epsilon(0.1));

  CHECK_THROWS_AS(scalar_optimize({1.0}, 0.9, 0.1, spec, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(scalar_optimize({0.0, 0.0}, 0.9, 0.1, spec, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(scalar_optimize({1.0, 0.0}, 1.5, 0.1, spec, cfg, rng), std::invalid_argument);
}

TEST_CASE("full solver matches the gaussian closed form in l2") {
  NoiseSpec spec = NoiseSpec::gaussian(0.8, 2);
  RadiusSolverConfig cfg;
  cfg.mc_n = 20000;
  cfg.bisect_iters = 30;
  cfg.k_threshold = 0.01;
  cfg.pso_particles = 8;
  cfg.pso_iters = 10;

  Rng rng = make_rng(33);
  RadiusResult r = certified_radius(0.95, 0.05, spec, Norm::kL2, cfg, rng);
  CHECK(r.converged);
  CHECK(r.gaussian_cross_check == Approx(1.3158829015611779).margin(1e-12));
  CHECK(r.radius == Approx(1.3158829015611779).epsilon(0.06));
  CHECK(norm_value(r.direction, Norm::kL2) == Approx(1.0).margin(1e-9));
  CHECK(r.evaluations > 0);

  // Bitwise deterministic re-run.
  Rng rng2 = make_rng(33);
  RadiusResult s = certified_radius(0.95, 0.05, spec, Norm::kL2, cfg, rng2);
  CHECK(s.radius == r.radius);
  CHECK(s.direction == r.direction);
}

TEST_CASE("degenerate probability pairs yield radius zero without solving") {
  NoiseSpec spec = NoiseSpec::gaussian(1.0, 3);
  RadiusSolverConfig cfg;
  Rng rng = make_rng(1);
  RadiusResult r = certified_radius(0.4, 0.6, spec, Norm::kL2, cfg, rng);
  CHECK(r.radius == 0.0);
  CHECK(r.converged);
  CHECK(r.evaluations == 0);
  CHECK(std::isnan(r.gaussian_cross_check));
  REQUIRE(r.direction.size() == 3);
  CHECK(r.direction[0] == 1.0);
}

TEST_CASE("certified radii order across norms") {
  // Unit balls nest (l1 inside l2 inside linf), so certified radii must obey
  // R_l1 >= R_l2 >= R_linf up to Monte Carlo slack.
  NoiseSpec spec = NoiseSpec::laplace(1.0, 3);
  RadiusSolverConfig cfg;
  cfg.mc_n = 8000;
  cfg.bisect_iters = 30;
  cfg.k_threshold = 0.01;
  cfg.pso_particles = 8;
  cfg.pso_iters = 8;

  Rng rng = make_rng(55);
  double r1 = certified_radius(0.85, 0.15, spec, Norm::kL1, cfg, rng).radius;
  double r2 = certified_radius(0.85, 0.15, spec, Norm::kL2, cfg, rng).radius;
  double rinf = certified_radius(0.85, 0.15, spec, Norm::kLinf, cfg, rng).radius;
  INFO("r1=" << r1 << " r2=" << r2 << " rinf=" << rinf);
  CHECK(r1 >= r2 * 0.98);
  CHECK(r2 >= rinf * 0.98);
  CHECK(rinf > 0.0);
}

TEST_CASE("gaussian radius scales with sigma") {
  RadiusSolverConfig cfg;
  cfg.mc_n = 8000;
  cfg.bisect_iters = 30;
  cfg.k_threshold = 0.01;
  cfg.pso_particles = 6;
  cfg.pso_iters = 6;

  Rng r1 = make_rng(71), r2 = make_rng(72);
  NoiseSpec narrow = NoiseSpec::gaussian(0.5, 2);
  NoiseSpec wide = NoiseSpec::gaussian(1.0, 2);
  RadiusResult a = certified_radius(0.9, 0.1, narrow, Norm::kL2, cfg, r1);
  RadiusResult b = certified_radius(0.9, 0.1, wide, Norm::kL2, cfg, r2);
  CHECK(b.gaussian_cross_check == Approx(2.0 * a.gaussian_cross_check).margin(1e-12));
  CHECK(b.radius == Approx(2.0 * a.radius).epsilon(0.1));
}
