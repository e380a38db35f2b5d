#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "wafl/surrogate.hpp"

using namespace wafl;
using wafl::testing::random_normal;
using wafl::testing::train_gd;

namespace {

const ModelSpec kScalar = ModelSpec::mlr(1, 1, 0.0);

ModelParams scalar_params(double theta) { return ModelParams{Vec{{theta, 0.0}}}; }

SurrogateConfig precise(double gamma) {
  SurrogateConfig cfg;
  cfg.gamma = gamma;
  cfg.ascent_steps = 2000;
  cfg.ascent_tol = 1e-12;
  return cfg;
}

double closed_form_zeta(double theta, double x, double y, double gamma) {
  return (2.0 * gamma * x - theta * y) / (2.0 * gamma - theta * theta);
}

// Maximize 0.5 (theta z - y)^2 - gamma (z - x)^2 on a grid of step 1e-4.
double grid_value(double theta, double x, double y, double gamma) {
  double best = -1e300;
  for (double z = x - 20.0; z <= x + 20.0; z += 1e-4) {
    const double r = theta * z - y;
    best = std::max(best, 0.5 * r * r - gamma * (z - x) * (z - x));
  }
  return best;
}

}  // namespace

TEST_CASE("transport cost examples") {
  CHECK(transport_cost_sq(Vec{{1.0, 2.0}}, 1.0, Vec{{1.0, 2.0}}, 1.0, kInfiniteKappa) == 0.0);
  CHECK(transport_cost_sq(Vec{{1.0, 0.0}}, 1.0, Vec{{0.0, 0.0}}, 0.0, 2.0) == 3.0);
  CHECK(transport_cost_sq(Vec{{3.0, 4.0}}, 1.0, Vec{{0.0, 0.0}}, 1.0, kInfiniteKappa) == 25.0);
  CHECK_THROWS_WITH_AS(transport_cost_sq(Vec{{0.0}}, 1.0, Vec{{0.0}}, 0.0, kInfiniteKappa),
                       "label perturbation disallowed", InvalidArgument);
}

TEST_CASE("inner max on the scalar square-loss example") {
  const LabeledExample z{Vec{{1.0}}, 0.0};
  const auto w = solve_inner_max(kScalar, scalar_params(1.0), z, precise(1.0), LossKind::Square);
  CHECK(w.zeta[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(w.surrogate_value == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(w.transport_cost_sq == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(surrogate_loss(kScalar, scalar_params(1.0), z, precise(1.0), LossKind::Square) ==
        doctest::Approx(1.0).epsilon(1e-8));
  const Vec g = surrogate_grad_theta(kScalar, scalar_params(1.0), z, precise(1.0), LossKind::Square);
  CHECK(g[0] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("inner max with a constant loss stays at the example") {
  const auto spec = ModelSpec::mlr(3, 4);
  const ModelParams zero{Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  const LabeledExample z{Vec{{0.2, -1.0, 3.0}}, 2.0};
  const auto w = solve_inner_max(spec, zero, z, SurrogateConfig{}, LossKind::CrossEntropy);
  CHECK(w.zeta == z.x);
  CHECK(w.transport_cost_sq == 0.0);
  CHECK(w.surrogate_value == doctest::Approx(std::log(4.0)));
  CHECK(surrogate_grad_theta(spec, zero, z, SurrogateConfig{}, LossKind::CrossEntropy) ==
        grad_theta(spec, zero, z, LossKind::CrossEntropy));
}

TEST_CASE("closed form and grid oracle on the 1-D quadratic family") {
  auto rng = derive_stream(11, "quadratic-family");
  for (int trial = 0; trial < 50; ++trial) {
    const double theta = rng.uniform(-2.0, 2.0);
    const double gamma = theta * theta / 2.0 + rng.uniform(0.3, 3.0);
    const double x = rng.uniform(-2.0, 2.0);
    const double y = rng.uniform(-2.0, 2.0);
    const auto w = solve_inner_max(kScalar, scalar_params(theta), LabeledExample{Vec{{x}}, y}, precise(gamma),
                                   LossKind::Square);
    const double zs = closed_form_zeta(theta, x, y, gamma);
    const double r = theta * zs - y;
    CHECK(std::abs(w.zeta[0] - zs) <= 1e-6);
    CHECK(std::abs(w.surrogate_value - (0.5 * r * r - gamma * (zs - x) * (zs - x))) <= 1e-6);
    if (trial < 10) CHECK(std::abs(w.surrogate_value - grid_value(theta, x, y, gamma)) <= 1e-3);
  }
}

TEST_CASE("large gamma leaves the example essentially unperturbed") {
  auto rng = derive_stream(5, "large-gamma");
  const auto spec = ModelSpec::mlp(4, 3, {6});
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams p{random_normal(static_cast<Eigen::Index>(spec.param_count()), rng)};
    const LabeledExample z{random_normal(4, rng), static_cast<double>(trial % 3)};
    SurrogateConfig cfg;
    cfg.gamma = 1e6;
    const auto w = solve_inner_max(spec, p, z, cfg, LossKind::CrossEntropy);
    CHECK((w.zeta - z.x).norm() <= 1e-3);
    CHECK(std::abs(w.surrogate_value - loss(spec, p, z, LossKind::CrossEntropy)) <= 1e-3);
  }
}

TEST_CASE("surrogate dominates the loss and decreases in gamma") {
  auto rng = derive_stream(6, "surrogate-order");
  const auto spec = ModelSpec::mlr(5, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelParams p{random_normal(static_cast<Eigen::Index>(spec.param_count()), rng, 0.5)};
    const LabeledExample z{random_normal(5, rng), static_cast<double>(rng.uniform_index(3))};
    const double base = loss(spec, p, z, LossKind::CrossEntropy);
    double previous = 1e300;
    for (double gamma : {0.5, 1.0, 2.0, 10.0}) {
      const double phi = surrogate_loss(spec, p, z, precise(gamma), LossKind::CrossEntropy);
      CHECK(phi >= base);
      CHECK(phi <= previous + 1e-9);
      previous = phi;
    }
  }
}

TEST_CASE("ascent objective is monotone over accepted iterates") {
  auto rng = derive_stream(8, "monotone-ascent");
  const auto spec = ModelSpec::mlp(3, 2, {5});
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p{random_normal(static_cast<Eigen::Index>(spec.param_count()), rng, 0.7)};
    const LabeledExample z{random_normal(3, rng), static_cast<double>(trial % 2)};
    SurrogateConfig cfg;
    cfg.gamma = 4.0 * std::max(1.0, estimate_input_smoothness(spec, p, z, LossKind::CrossEntropy));
    InnerMaxTrace trace;
    solve_inner_max(spec, p, z, cfg, LossKind::CrossEntropy, &trace);
    for (std::size_t i = 1; i < trace.objective.size(); ++i) CHECK(trace.objective[i] >= trace.objective[i - 1]);
  }
}

TEST_CASE("envelope gradient matches finite differences of the surrogate") {
  auto rng = derive_stream(9, "envelope");
  const auto spec = ModelSpec::mlr(4, 3, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p{random_normal(static_cast<Eigen::Index>(spec.param_count()), rng, 0.5)};
    const LabeledExample z{random_normal(4, rng), static_cast<double>(rng.uniform_index(3))};
    const double l_zz = estimate_input_smoothness(spec, p, z, LossKind::CrossEntropy);
    const auto cfg = precise(std::max(10.0 * l_zz, 0.5));
    const Vec g = surrogate_grad_theta(spec, p, z, cfg, LossKind::CrossEntropy);
    const Vec fd = finite_diff_grad(
        [&](const Vec& t) { return surrogate_loss(spec, ModelParams{t}, z, cfg, LossKind::CrossEntropy); }, p.theta,
        1e-5);
    CHECK(relative_error(g, fd) <= 1e-3);
  }
}

TEST_CASE("label channel moves only with finite kappa on square loss") {
  const LabeledExample z{Vec{{1.0}}, 0.0};
  auto cfg = precise(1.0);
  cfg.kappa = 1.0;
  const auto w = solve_inner_max(kScalar, scalar_params(1.0), z, cfg, LossKind::Square);
  CHECK(w.zeta_label != 0.0);
  CHECK(w.transport_cost_sq == doctest::Approx((w.zeta[0] - 1.0) * (w.zeta[0] - 1.0) + w.zeta_label * w.zeta_label));
}

TEST_CASE("divergence is reported when gamma is below the input curvature") {
  const LabeledExample z{Vec{{1.0}}, 0.0};
  SurrogateConfig cfg;
  cfg.gamma = 0.1;
  cfg.ascent_steps = 200;
  CHECK_THROWS_WITH_AS(solve_inner_max(kScalar, scalar_params(2.0), z, cfg, LossKind::Square),
                       doctest::Contains("inner ascent diverged"), NumericError);
}

TEST_CASE("average worst-case perturbation") {
  const auto data = gen_synthetic_mixture(2, 2, 200, 3.0, 4);
  const auto fed = partition_noniid(data, 4, 2, 0.0, 4);
  const auto spec = ModelSpec::mlr(2, 2);
  const ModelParams zero{Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  CHECK(avg_worst_case_perturbation(fed, spec, zero, SurrogateConfig{}, LossKind::CrossEntropy, 20, 1) == 0.0);

  const auto trained = train_gd(spec, data, 200, 0.5);
  double previous = 1e300;
  for (double gamma : {0.1, 1.0, 10.0}) {
    SurrogateConfig cfg;
    cfg.gamma = gamma;
    const double rho = avg_worst_case_perturbation(fed, spec, trained, cfg, LossKind::CrossEntropy, 20, 1);
    CHECK(rho < previous);
    previous = rho;
  }
  SurrogateConfig huge;
  huge.gamma = 1e6;
  CHECK(avg_worst_case_perturbation(fed, spec, trained, huge, LossKind::CrossEntropy, 20, 1) <= 1e-3);
}

TEST_CASE("smoothness constant") {
  CHECK(smoothness_constant(1, 1, 1, 0.5, 1.5) == 2.0);
  CHECK(smoothness_constant(2, 0, 0, 0, 1) == 2.0);
  CHECK(smoothness_constant(2, 1, 1, 0.5, 1e9) == doctest::Approx(2.0));
  CHECK_THROWS_WITH_AS(smoothness_constant(1, 1, 1, 2.0, 1.0), "dual parameter below smoothness threshold",
                       InvalidArgument);
}

TEST_CASE("input smoothness estimate on the scalar square loss") {
  CHECK(estimate_input_smoothness(kScalar, scalar_params(3.0), LabeledExample{Vec{{0.5}}, 1.0}, LossKind::Square) ==
        doctest::Approx(9.0).epsilon(1e-4));
}
