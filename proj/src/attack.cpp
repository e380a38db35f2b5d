#include "wafl/attack.hpp"

#include <algorithm>
#include <cmath>

#include "wafl/error.hpp"

namespace wafl {
namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void clip_in_place(Vec& x, const std::optional<ClipBox>& clip) {
  if (clip) x = x.cwiseMax(clip->lo).cwiseMin(clip->hi);
}

Vec sign_step(const Vec& g, double step) {
  Vec out(g.size());
  for (Eigen::Index k = 0; k < g.size(); ++k) out[k] = step * sign(g[k]);
  return out;
}

}  // namespace

AttackConfig AttackConfig::mnist() { return AttackConfig{}; }

AttackConfig AttackConfig::cifar() {
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;
  cfg.alpha = 2.0 / 255.0;
  cfg.steps = 10;
  return cfg;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw InvalidArgument("attack epsilon must be >= 0");
  if (steps < 0) throw InvalidArgument("attack steps must be >= 0");
  if (steps >= 1 && !(alpha > 0.0)) throw InvalidArgument("attack alpha must be > 0 when steps >= 1");
  if (clip && !(clip->lo < clip->hi)) throw InvalidArgument("attack clip_min must be < clip_max");
  if (!(attacked_fraction >= 0.0 && attacked_fraction <= 1.0)) {
    throw InvalidArgument("attacked_fraction must be in [0, 1]");
  }
}

LabeledExample fgsm(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z, double epsilon,
                    const std::optional<ClipBox>& clip, LossKind kind) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("fgsm epsilon must be >= 0");
  LabeledExample out = z;
  if (epsilon == 0.0) return out;
  out.x += sign_step(grad_input(spec, params, z, kind), epsilon);
  clip_in_place(out.x, clip);
  return out;
}

LabeledExample pgd(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                   const AttackConfig& cfg, LossKind kind) {
  cfg.validate();
  LabeledExample out = z;
  if (cfg.epsilon == 0.0) return out;
  const Vec lower = z.x.array() - cfg.epsilon;
  const Vec upper = z.x.array() + cfg.epsilon;
  for (int t = 0; t < cfg.steps; ++t) {
    out.x += sign_step(grad_input(spec, params, out, kind), cfg.alpha);
    clip_in_place(out.x, cfg.clip);
    out.x = out.x.cwiseMax(lower).cwiseMin(upper);
  }
  return out;
}

std::vector<int> select_attacked_clients(int m, double attacked_fraction, std::uint64_t seed) {
  if (m < 0) throw InvalidArgument("select_attacked_clients: negative client count");
  if (!(attacked_fraction >= 0.0 && attacked_fraction <= 1.0)) {
    throw InvalidArgument("attacked_fraction must be in [0, 1]");
  }
  const auto count = static_cast<std::size_t>(std::llround(attacked_fraction * m));
  auto rng = derive_stream(seed, "attacked-clients");
  const auto order = rng.permutation(static_cast<std::size_t>(m));
  std::vector<int> ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

FederationData shift_test_sets(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                               const AttackConfig& cfg, LossKind kind) {
  cfg.validate();
  FederationData shifted = federation;
  if (cfg.epsilon == 0.0) return shifted;
  for (int id : select_attacked_clients(static_cast<int>(federation.num_clients()), cfg.attacked_fraction,
                                        cfg.seed)) {
    for (auto& z : shifted.clients[static_cast<std::size_t>(id)].test) z = pgd(spec, params, z, cfg, kind);
  }
  return shifted;
}

}  // namespace wafl
