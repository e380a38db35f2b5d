#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "wafl/core_math.hpp"
#include "wafl/data.hpp"

namespace wafl {

/// Weighted point cloud for OT computations; shares its layout with EmpiricalDistribution.
using DiscreteDistribution = EmpiricalDistribution;

DiscreteDistribution make_distribution(Mat points, Vec masses);
DiscreteDistribution uniform_distribution(Mat points);

struct Coupling {
  Mat plan;
  Vec row_marginal;
  Vec col_marginal;
};

struct OTResult {
  /// (<plan, C>)^(1/p) with the unregularized cost matrix.
  double cost = 0.0;
  Coupling coupling;
  bool converged = true;
  /// L1 marginal violation of the scaled plan before rounding.
  double marginal_error = 0.0;
  int iterations = 0;
};

struct OTConfig {
  double entropic_reg = 1e-3;
  int max_iters = 20000;
  double marginal_tol = 1e-7;
  int cost_exponent = 2;
  /// Start from a large regularization and halve it down to entropic_reg.
  bool anneal = true;

  void validate() const;
};

/// C_ij = ||a_i - b_j||^p.
Mat cost_matrix(const Mat& a_points, const Mat& b_points, int p);

/// Minimum-cost perfect matching on a square cost matrix; result[row] = column.
std::vector<int> hungarian_assignment(const Mat& cost);

inline constexpr std::size_t kExactSupportLimit = 64;

/// Exact min <plan, cost> over couplings of the two mass vectors, for any ground cost.
/// Masses must share a common denominator D <= 64; each support point is
/// replicated mass * D times and the resulting assignment problem solved exactly.
OTResult exact_ot_with_cost(const Mat& cost, const ProbabilityVector& p_masses, const ProbabilityVector& q_masses);

/// Exact W_p on small supports via exact_ot_with_cost.
OTResult exact_w_small(const DiscreteDistribution& p_dist, const DiscreteDistribution& q_dist, int p);

/// Log-domain Sinkhorn. The returned plan is rounded onto the exact marginals.
OTResult sinkhorn_w(const DiscreteDistribution& p_dist, const DiscreteDistribution& q_dist, const OTConfig& cfg);

/// Sinkhorn W_2^2 between seeded subsamples of two datasets' feature vectors.
double pairwise_dataset_distance(const Examples& a, const Examples& b, const OTConfig& cfg,
                                 std::size_t subsample, std::uint64_t seed);

struct LambdaSelection {
  ProbabilityVector lambda;
  double rho_star_sq = 0.0;
};

inline constexpr double kLambdaTieTolerance = 1e-9;

/// argmin_{lambda in simplex} sum_i lambda_i costs_i: all mass on the smallest
/// cost, split evenly across costs within kLambdaTieTolerance of it.
LambdaSelection select_lambda_domain_adaptation(const Vec& costs);

struct BarycenterConfig {
  OTConfig ot{.entropic_reg = 1e-2};
  int max_iters = 5000;
  double mass_tol = 1e-6;
};

struct BarycenterResult {
  DiscreteDistribution barycenter;
  /// sum_i lambda_i W_2^2(P_i, Q) with Sinkhorn costs.
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Fixed-support barycenter by iterative Bregman projections in the log domain.
BarycenterResult barycenter_fixed_support(const std::vector<DiscreteDistribution>& dists,
                                          const ProbabilityVector& lambda, const Mat& support,
                                          const BarycenterConfig& cfg);

/// Rows of every distribution stacked, duplicates kept.
Mat union_support(const std::vector<DiscreteDistribution>& dists);

struct AlternatingResult {
  ProbabilityVector lambda;
  DiscreteDistribution barycenter;
  double rho_star = 0.0;
  /// Objective after each completed alternation, non-increasing.
  std::vector<double> objective_log;
};

struct AlternatingConfig {
  BarycenterConfig barycenter;
  int max_alternations = 50;
  double decrease_tol = 1e-8;
};

/// Block descent on sum_i lambda_i W_2^2(P_i, Q): barycenter step in Q, LP step in lambda.
AlternatingResult alternating_min_lambda_barycenter(const std::vector<DiscreteDistribution>& dists,
                                                    const Mat& support, const AlternatingConfig& cfg);

struct ConcentrationParams {
  double c1 = 1.0;
  double c2 = 1.0;
  double a = 2.0;
  int dim = 2;
  double delta = 0.05;

  void validate() const;
};

/// Radius such that W_2(P_n, P) <= radius with probability >= 1 - delta:
/// (log(c1/delta) / (c2 n))^min(2/d, 1/2) when n >= log(c1/delta)/c2, else the same base ^ (1/a).
double concentration_radius(std::size_t n, const ConcentrationParams& params);

/// sqrt(sum_i lambda_i radius_i).
double combined_radius(const ProbabilityVector& lambda, const Vec& per_client_radii);

nlohmann::json distribution_to_json(const DiscreteDistribution& dist);
DiscreteDistribution distribution_from_json(const nlohmann::json& j);

}  // namespace wafl
