#pragma once

#include <optional>
#include <vector>

#include "wafl/data.hpp"
#include "wafl/model.hpp"

namespace wafl {

struct ClipBox {
  double lo = 0.0;
  double hi = 1.0;

  friend bool operator==(const ClipBox&, const ClipBox&) = default;
};

struct AttackConfig {
  double epsilon = 0.3;
  double alpha = 0.01;
  int steps = 40;
  std::optional<ClipBox> clip = ClipBox{};
  double attacked_fraction = 0.0;
  std::uint64_t seed = 0;

  /// t_adv = 40, epsilon = 0.3, alpha = 0.01 on pixels in [0, 1].
  static AttackConfig mnist();
  /// t_adv = 10, epsilon = 8/255, alpha = 2/255 on pixels in [0, 1].
  static AttackConfig cifar();

  void validate() const;
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// x' = clip(x + epsilon * sign(grad_x loss)); sign(0) = 0.
LabeledExample fgsm(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z, double epsilon,
                    const std::optional<ClipBox>& clip, LossKind kind = LossKind::CrossEntropy);

/// `steps` iterations of x <- Proj_{||x - x0||_inf <= eps}(clip(x + alpha * sign(grad))), from x0.
LabeledExample pgd(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                   const AttackConfig& cfg, LossKind kind = LossKind::CrossEntropy);

/// round(fraction * m) distinct ids in ascending order. Ids come from a seeded
/// permutation prefix, so larger fractions select supersets under one seed.
std::vector<int> select_attacked_clients(int m, double attacked_fraction, std::uint64_t seed);

/// Copy of `federation` whose attacked clients' test sets are PGD-perturbed
/// against `params`. Train sets are never touched.
FederationData shift_test_sets(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                               const AttackConfig& cfg, LossKind kind = LossKind::CrossEntropy);

}  // namespace wafl
