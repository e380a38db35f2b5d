#include "wafl/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "wafl/error.hpp"

namespace wafl {
namespace {

bool label_moves(const SurrogateConfig& cfg, LossKind kind) {
  return std::isfinite(cfg.kappa) && kind == LossKind::Square;
}

struct AscentState {
  Vec x;
  double y = 0.0;
  double loss = 0.0;
  double objective = 0.0;
  Vec grad_x;  // gradient of the objective in the features
  double grad_y = 0.0;
};

// Penalty gamma * d^p and its gradient, d measured on the transport cost.
AscentState evaluate(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                     const SurrogateConfig& cfg, LossKind kind, Vec x, double y) {
  AscentState s;
  s.x = std::move(x);
  s.y = y;
  Vec loss_grad;
  s.loss = loss_and_grad_input(spec, params, s.x, s.y, kind, loss_grad);
  const bool moves = label_moves(cfg, kind);
  const Vec dx = s.x - z.x;
  const double dy = moves ? s.y - z.y : 0.0;
  const double cost_sq = dx.squaredNorm() + (moves ? cfg.kappa * dy * dy : 0.0);
  double loss_grad_y = moves ? grad_label_square(spec, params, s.x, s.y) : 0.0;
  if (cfg.wasserstein_p == 2) {
    s.objective = s.loss - cfg.gamma * cost_sq;
    s.grad_x = loss_grad - 2.0 * cfg.gamma * dx;
    s.grad_y = loss_grad_y - 2.0 * cfg.gamma * (moves ? cfg.kappa * dy : 0.0);
  } else {
    const double d = std::sqrt(cost_sq);
    s.objective = s.loss - cfg.gamma * d;
    // Subgradient 0 of the norm at the origin.
    const double scale = d > 0.0 ? cfg.gamma / d : 0.0;
    s.grad_x = loss_grad - scale * dx;
    s.grad_y = loss_grad_y - scale * (moves ? cfg.kappa * dy : 0.0);
  }
  return s;
}

}  // namespace

void SurrogateConfig::validate() const {
  if (!(gamma > 0.0)) throw InvalidArgument("surrogate gamma must be positive");
  if (!(kappa > 0.0)) throw InvalidArgument("surrogate kappa must be positive (or infinite)");
  if (ascent_steps < 1) throw InvalidArgument("surrogate ascent_steps must be >= 1");
  if (ascent_lr < 0.0 || !std::isfinite(ascent_lr)) {
    throw InvalidArgument("surrogate ascent_lr must be positive (0 selects 1/(2 gamma))");
  }
  if (!(ascent_tol >= 0.0)) throw InvalidArgument("surrogate ascent_tol must be nonnegative");
  if (wasserstein_p != 1 && wasserstein_p != 2) throw InvalidArgument("wasserstein_p must be 1 or 2");
}

double transport_cost_sq(const Vec& x, double y, const Vec& x_prime, double y_prime, double kappa) {
  if (x.size() != x_prime.size()) throw InvalidArgument("transport_cost_sq: dimension mismatch");
  const double feature_part = (x - x_prime).squaredNorm();
  if (y == y_prime) return feature_part;
  if (!std::isfinite(kappa)) throw InvalidArgument("label perturbation disallowed");
  return feature_part + kappa * (y - y_prime) * (y - y_prime);
}

WorstCasePoint solve_inner_max(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                               const SurrogateConfig& cfg, LossKind kind, InnerMaxTrace* trace) {
  cfg.validate();
  const bool moves = label_moves(cfg, kind);
  AscentState current = evaluate(spec, params, z, cfg, kind, z.x, z.y);
  if (trace) trace->objective.assign(1, current.objective);

  double lr = cfg.effective_lr();
  int rejections = 0;
  int iters = 0;
  for (; iters < cfg.ascent_steps; ++iters) {
    const double grad_norm =
        std::sqrt(current.grad_x.squaredNorm() + current.grad_y * current.grad_y);
    if (grad_norm <= cfg.ascent_tol) break;
    Vec x_next = current.x + lr * current.grad_x;
    const double y_next = moves ? current.y + lr * current.grad_y : current.y;
    if (!x_next.allFinite() || !std::isfinite(y_next)) {
      throw NumericError("inner ascent diverged: gamma likely <= L_zz (non-finite iterate)");
    }
    AscentState next = evaluate(spec, params, z, cfg, kind, std::move(x_next), y_next);
    if (!std::isfinite(next.objective)) {
      throw NumericError("inner ascent diverged: gamma likely <= L_zz (non-finite objective)");
    }
    if (next.objective < current.objective) {
      // A drop at rounding level means the ascent has stalled at the maximizer.
      if (current.objective - next.objective <= 1e-12 * (1.0 + std::abs(current.objective))) break;
      if (++rejections >= 2) {
        throw NumericError("inner ascent diverged: gamma likely <= L_zz (objective decreased twice)");
      }
      lr *= 0.5;
      continue;
    }
    rejections = 0;
    current = std::move(next);
    if (trace) trace->objective.push_back(current.objective);
  }

  WorstCasePoint out;
  out.zeta = current.x;
  out.zeta_label = current.y;
  out.transport_cost_sq = (current.x - z.x).squaredNorm() +
                          (moves ? cfg.kappa * (current.y - z.y) * (current.y - z.y) : 0.0);
  out.surrogate_value = current.objective;
  out.ascent_iters_used = iters;
  return out;
}

double surrogate_loss(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                      const SurrogateConfig& cfg, LossKind kind) {
  return solve_inner_max(spec, params, z, cfg, kind).surrogate_value;
}

Vec surrogate_grad_theta(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                         const SurrogateConfig& cfg, LossKind kind) {
  const WorstCasePoint w = solve_inner_max(spec, params, z, cfg, kind);
  return grad_theta(spec, params, w.zeta, w.zeta_label, kind);
}

double avg_worst_case_perturbation(const FederationData& federation, const ModelSpec& spec,
                                   const ModelParams& params, const SurrogateConfig& cfg, LossKind kind,
                                   std::size_t sample_cap, std::uint64_t seed) {
  if (sample_cap < 1) throw InvalidArgument("avg_worst_case_perturbation: sample_cap must be >= 1");
  double total = 0.0;
  for (std::size_t i = 0; i < federation.clients.size(); ++i) {
    const auto& train = federation.clients[i].train;
    if (train.empty()) continue;
    auto rng = derive_stream(seed, "rho:client:" + std::to_string(i));
    auto order = rng.permutation(train.size());
    order.resize(std::min(sample_cap, order.size()));
    std::sort(order.begin(), order.end());
    double client_sum = 0.0;
    for (std::size_t k : order) {
      client_sum += solve_inner_max(spec, params, train[k], cfg, kind).transport_cost_sq;
    }
    total += federation.weights[i] * client_sum / static_cast<double>(order.size());
  }
  return std::sqrt(total);
}

double smoothness_constant(double l_tt, double l_tz, double l_zt, double l_zz, double gamma) {
  if (!(gamma > l_zz)) throw InvalidArgument("dual parameter below smoothness threshold");
  return l_tt + l_tz * l_zt / (gamma - l_zz);
}

double estimate_input_smoothness(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                                 LossKind kind, int iterations) {
  auto rng = derive_stream(0, "input-smoothness");
  Vec v(z.x.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = rng.normal();
  v.normalize();
  const double h = 1e-5;
  double eigen = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Vec hv = (grad_input(spec, params, Vec(z.x + h * v), z.y, kind) -
                    grad_input(spec, params, Vec(z.x - h * v), z.y, kind)) /
                   (2.0 * h);
    eigen = hv.norm();
    if (eigen == 0.0) return 0.0;
    v = hv / eigen;
  }
  return eigen;
}

}  // namespace wafl
