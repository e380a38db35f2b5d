#pragma once

#include <limits>
#include <vector>

#include "wafl/data.hpp"
#include "wafl/model.hpp"

namespace wafl {

inline constexpr double kInfiniteKappa = std::numeric_limits<double>::infinity();

/// Controls for phi_gamma(z, theta) = sup_zeta [ loss(zeta) - gamma * d^p(zeta, z) ].
struct SurrogateConfig {
  double gamma = 1.0;
  /// Label transport weight; infinity means only features move.
  double kappa = kInfiniteKappa;
  int ascent_steps = 15;
  /// Step size of the inner ascent; 0 selects 1 / (2 gamma).
  double ascent_lr = 0.0;
  /// Stop once the ascent gradient norm falls below this.
  double ascent_tol = 1e-6;
  int wasserstein_p = 2;

  double effective_lr() const { return ascent_lr > 0.0 ? ascent_lr : 1.0 / (2.0 * gamma); }
  void validate() const;
};

struct WorstCasePoint {
  Vec zeta;
  /// Equal to the original label unless the label channel is allowed to move.
  double zeta_label = 0.0;
  /// d^2(zeta*, z), always the squared cost regardless of wasserstein_p.
  double transport_cost_sq = 0.0;
  double surrogate_value = 0.0;
  int ascent_iters_used = 0;
};

/// Objective values of the accepted ascent iterates, starting with zeta = z.
struct InnerMaxTrace {
  std::vector<double> objective;
};

/// ||x - x'||^2 + kappa |y - y'|^2. With kappa = infinity the labels must match.
double transport_cost_sq(const Vec& x, double y, const Vec& x_prime, double y_prime, double kappa);
inline double transport_cost_sq(const LabeledExample& a, const LabeledExample& b, double kappa) {
  return transport_cost_sq(a.x, a.y, b.x, b.y, kappa);
}

/// Gradient ascent on zeta -> loss(zeta) - gamma d^p(zeta, z) from zeta = z.
/// A step that lowers the objective is rejected and the step size halved;
/// a second consecutive rejection, or a non-finite iterate, raises NumericError.
WorstCasePoint solve_inner_max(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                               const SurrogateConfig& cfg, LossKind kind, InnerMaxTrace* trace = nullptr);

double surrogate_loss(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                      const SurrogateConfig& cfg, LossKind kind);

/// Envelope form: grad_theta of the loss evaluated at the worst-case point.
Vec surrogate_grad_theta(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                         const SurrogateConfig& cfg, LossKind kind);

/// rho_hat = sqrt( sum_i lambda_i * mean_{z in sample_i} d^2(zeta*(z), z) ),
/// with at most `sample_cap` train examples per client chosen by a seeded shuffle.
double avg_worst_case_perturbation(const FederationData& federation, const ModelSpec& spec,
                                   const ModelParams& params, const SurrogateConfig& cfg, LossKind kind,
                                   std::size_t sample_cap, std::uint64_t seed);

/// L = L_tt + L_tz L_zt / (gamma - L_zz); requires gamma > L_zz.
double smoothness_constant(double l_tt, double l_tz, double l_zt, double l_zz, double gamma);

/// Largest curvature of x -> loss(x) near z, estimated by power iteration on
/// finite-difference Hessian-vector products of the input gradient.
double estimate_input_smoothness(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                                 LossKind kind, int iterations = 30);

}  // namespace wafl
