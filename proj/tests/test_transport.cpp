#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "wafl/transport.hpp"

using namespace wafl;

namespace {

Mat random_cloud(Eigen::Index n, Eigen::Index dim, RngStream& rng) {
  Mat m(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  }
  return m;
}

Mat line(std::initializer_list<double> xs) {
  Mat m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

void check_marginals(const OTResult& r, double tol) {
  CHECK((r.coupling.plan.rowwise().sum() - r.coupling.row_marginal).cwiseAbs().maxCoeff() <= tol);
  CHECK((r.coupling.plan.colwise().sum().transpose() - r.coupling.col_marginal).cwiseAbs().maxCoeff() <= tol);
  CHECK(r.coupling.plan.minCoeff() >= 0.0);
}

}  // namespace

TEST_CASE("exact solver examples") {
  const auto a = uniform_distribution(Mat{{0.0, 0.0}});
  const auto b = uniform_distribution(Mat{{3.0, 4.0}});
  CHECK(exact_w_small(a, b, 2).cost == doctest::Approx(5.0).epsilon(1e-12));

  const auto p = uniform_distribution(line({0.0, 1.0, 2.0}));
  const auto q = uniform_distribution(line({0.0, 1.0, 3.0}));
  const auto r = exact_w_small(p, q, 2);
  CHECK(r.cost * r.cost == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  check_marginals(r, 1e-12);

  const auto self = exact_w_small(p, p, 2);
  CHECK(self.cost == 0.0);
  CHECK(self.coupling.plan.isApprox(Mat::Identity(3, 3) / 3.0));

  const auto weighted = make_distribution(line({0.0, 1.0}), Vec{{0.25, 0.75}});
  const auto single = uniform_distribution(line({2.0}));
  CHECK(exact_w_small(weighted, single, 2).cost * exact_w_small(weighted, single, 2).cost ==
        doctest::Approx(0.25 * 4 + 0.75 * 1));

  auto rng = derive_stream(1, "oversize");
  const auto big = uniform_distribution(random_cloud(65, 2, rng));
  CHECK_THROWS_WITH_AS(exact_w_small(big, big, 2), doctest::Contains("exact solver limited to small instances"),
                       InvalidArgument);
}

TEST_CASE("exact solver satisfies the metric axioms") {
  auto rng = derive_stream(2, "metric");
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.uniform_index(3));
    const auto p = uniform_distribution(random_cloud(4, dim, rng));
    const auto q = uniform_distribution(random_cloud(4, dim, rng));
    const auto s = uniform_distribution(random_cloud(4, dim, rng));
    const double pq = exact_w_small(p, q, 2).cost;
    CHECK(pq >= 0.0);
    CHECK(exact_w_small(p, p, 2).cost <= 1e-9);
    CHECK(std::abs(pq - exact_w_small(q, p, 2).cost) <= 1e-9);
    CHECK(pq <= exact_w_small(p, s, 2).cost + exact_w_small(s, q, 2).cost + 1e-9);
  }
}

TEST_CASE("hungarian assignment matches brute force") {
  auto rng = derive_stream(3, "hungarian");
  for (int trial = 0; trial < 20; ++trial) {
    Mat c(5, 5);
    for (auto& v : c.reshaped()) v = rng.uniform(0.0, 10.0);
    const auto assignment = hungarian_assignment(c);
    double got = 0.0;
    for (int i = 0; i < 5; ++i) got += c(i, assignment[static_cast<std::size_t>(i)]);
    std::vector<int> perm{0, 1, 2, 3, 4};
    double best = 1e300;
    do {
      double total = 0.0;
      for (int i = 0; i < 5; ++i) total += c(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("sinkhorn agrees with the exact oracle") {
  auto rng = derive_stream(4, "sinkhorn-vs-exact");
  const OTConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_index(7));
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.uniform_index(3));
    const auto p = uniform_distribution(random_cloud(n, dim, rng));
    const auto q = uniform_distribution(random_cloud(n, dim, rng));
    const auto exact = exact_w_small(p, q, 2);
    const auto approx = sinkhorn_w(p, q, cfg);
    CHECK(approx.converged);
    CHECK(relative_error(Vec{{approx.cost}}, Vec{{exact.cost}}) <= 0.01);
    check_marginals(approx, 1e-9);
  }
}

TEST_CASE("sinkhorn on diracs and identical clouds") {
  const auto a = uniform_distribution(Mat{{1.0, 1.0}});
  const auto b = uniform_distribution(Mat{{4.0, 5.0}});
  CHECK(sinkhorn_w(a, b, OTConfig{}).cost == doctest::Approx(5.0).epsilon(1e-12));

  auto rng = derive_stream(5, "self-bias");
  const Mat pts = random_cloud(6, 2, rng);
  const auto p = uniform_distribution(pts);
  double diameter = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < pts.rows(); ++j) diameter = std::max(diameter, (pts.row(i) - pts.row(j)).norm());
  }
  CHECK(sinkhorn_w(p, p, OTConfig{}).cost <= 0.05 * diameter);
}

TEST_CASE("sinkhorn flags non-convergence") {
  auto rng = derive_stream(6, "unconverged");
  OTConfig cfg;
  cfg.anneal = false;
  cfg.entropic_reg = 1e-4;
  cfg.max_iters = 3;
  const auto r = sinkhorn_w(uniform_distribution(random_cloud(8, 2, rng)), uniform_distribution(random_cloud(8, 2, rng)), cfg);
  CHECK_FALSE(r.converged);
  CHECK(r.marginal_error > cfg.marginal_tol);
}

TEST_CASE("mixture convexity bound") {
  auto rng = derive_stream(7, "mixture");
  for (int trial = 0; trial < 10; ++trial) {
    const Mat a = random_cloud(3, 2, rng);
    const Mat b = random_cloud(3, 2, rng);
    const auto q = uniform_distribution(random_cloud(6, 2, rng));
    Mat both(6, 2);
    both << a, b;
    const auto mixture = uniform_distribution(both);
    const double wa = std::pow(exact_w_small(uniform_distribution(a), q, 2).cost, 2);
    const double wb = std::pow(exact_w_small(uniform_distribution(b), q, 2).cost, 2);
    CHECK(std::pow(exact_w_small(mixture, q, 2).cost, 2) <= 0.5 * wa + 0.5 * wb + 1e-9);
  }
}

TEST_CASE("dataset distances") {
  const auto a = gen_synthetic_mixture(2, 2, 300, 2.0, 1);
  const auto shifted = translate_features(a, Vec{{1.5, -1.0}});
  OTConfig cfg;
  cfg.entropic_reg = 1e-2;
  cfg.marginal_tol = 1e-5;
  CHECK(pairwise_dataset_distance(a, a, cfg, 100, 3) <= 0.05);
  const double d = pairwise_dataset_distance(a, shifted, cfg, 150, 3);
  CHECK(std::abs(d - 3.25) <= 0.15 * 3.25);
  CHECK(d == pairwise_dataset_distance(shifted, a, cfg, 150, 3));
}

TEST_CASE("lambda linear program") {
  const auto r = select_lambda_domain_adaptation(Vec{{3.0, 1.0, 2.0}});
  CHECK(r.lambda.values() == Vec{{0.0, 1.0, 0.0}});
  CHECK(r.rho_star_sq == 1.0);
  CHECK(select_lambda_domain_adaptation(Vec{{1.0, 1.0}}).lambda.values() == Vec{{0.5, 0.5}});
  CHECK(select_lambda_domain_adaptation(Vec{{5.0}}).lambda.values() == Vec{{1.0}});
  CHECK(select_lambda_domain_adaptation(Vec{{2.0, 1.0, 1.0 + 1e-12, 1.0}}).lambda.values() ==
        Vec{{0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}});
  CHECK_THROWS_AS(select_lambda_domain_adaptation(Vec{}), InvalidArgument);
}

TEST_CASE("fixed-support barycenters") {
  const std::vector<DiscreteDistribution> diracs{uniform_distribution(line({0.0})), uniform_distribution(line({2.0}))};
  const auto half = ProbabilityVector::from_weights(Vec{{0.5, 0.5}});
  const auto mid = barycenter_fixed_support(diracs, half, line({0.0, 1.0, 2.0}), BarycenterConfig{});
  CHECK(mid.barycenter.masses[1] >= 0.95);
  CHECK(mid.objective == doctest::Approx(1.0).epsilon(0.05));

  const auto one_sided =
      barycenter_fixed_support(diracs, ProbabilityVector::from_weights(Vec{{1.0, 0.0}}), line({0.0, 1.0, 2.0}), BarycenterConfig{});
  CHECK(one_sided.barycenter.masses[0] >= 0.95);

  auto rng = derive_stream(8, "self-barycenter");
  const Mat pts = random_cloud(5, 2, rng);
  const auto p = uniform_distribution(pts);
  const auto self = barycenter_fixed_support({p}, ProbabilityVector::uniform(1), pts, BarycenterConfig{});
  CHECK((self.barycenter.masses.values() - p.masses.values()).cwiseAbs().maxCoeff() <= 0.05);
  CHECK(self.objective <= 0.05);
}

TEST_CASE("alternating minimization") {
  auto rng = derive_stream(9, "alternating");
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<DiscreteDistribution> dists;
    for (int i = 0; i < 3; ++i) dists.push_back(uniform_distribution(random_cloud(4, 2, rng)));
    const auto r = alternating_min_lambda_barycenter(dists, union_support(dists), AlternatingConfig{});
    REQUIRE_FALSE(r.objective_log.empty());
    for (std::size_t i = 1; i < r.objective_log.size(); ++i) CHECK(r.objective_log[i] <= r.objective_log[i - 1]);
    CHECK(r.rho_star == doctest::Approx(std::sqrt(r.objective_log.back())));
  }

  const auto p = uniform_distribution(random_cloud(4, 2, rng));
  const auto single = alternating_min_lambda_barycenter({p}, p.points, AlternatingConfig{});
  CHECK(single.lambda.values() == Vec{{1.0}});
  CHECK(single.rho_star <= 0.25);
  const auto twin = alternating_min_lambda_barycenter({p, p}, p.points, AlternatingConfig{});
  CHECK(twin.objective_log.back() <= 0.05);
}

TEST_CASE("concentration radii") {
  ConcentrationParams params;
  params.delta = 0.1;
  CHECK(concentration_radius(100, params) == doctest::Approx(std::sqrt(std::log(10.0) / 100.0)).epsilon(1e-12));
  CHECK(concentration_radius(100, params) == doctest::Approx(0.15175).epsilon(1e-4));
  double previous = 1e300;
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    const double r = concentration_radius(n, params);
    CHECK(r < previous);
    previous = r;
  }
  auto tighter = params;
  tighter.delta = 0.01;
  CHECK(concentration_radius(100, tighter) > concentration_radius(100, params));
  auto small_n = params;
  small_n.c2 = 0.001;
  CHECK(concentration_radius(10, small_n) == doctest::Approx(std::pow(std::log(10.0) / 0.01, 0.5)));
  auto bad = params;
  bad.delta = 0.5;
  bad.c1 = 0.4;
  CHECK_THROWS_WITH_AS(concentration_radius(10, bad), "confidence/constant mismatch", InvalidArgument);

  CHECK(combined_radius(ProbabilityVector::uniform(1), Vec{{0.04}}) == doctest::Approx(0.2));
  CHECK(combined_radius(ProbabilityVector::uniform(3), Vec::Zero(3)) == 0.0);
  CHECK(combined_radius(ProbabilityVector::uniform(2), Vec{{0.02, 0.02}}) == doctest::Approx(std::sqrt(0.02)));
}

TEST_CASE("distribution json round trip") {
  const auto p = make_distribution(line({0.5, -1.25}), Vec{{0.25, 0.75}});
  const auto back = distribution_from_json(distribution_to_json(p));
  CHECK(back.points == p.points);
  CHECK(back.masses == p.masses);
}
