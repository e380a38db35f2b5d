#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wafl/federated.hpp"
#include "wafl/transport.hpp"

namespace wafl {

/// One (axis value, variant) cell of a sweep.
struct SweepRecord {
  double axis = 0.0;
  std::string variant;
  double clean_acc = 0.0;
  double clean_loss = 0.0;
  std::optional<double> shifted_acc;
  std::optional<double> shifted_loss;
  std::optional<double> rho_hat;
};

struct SweepResult {
  std::string axis_name;  // "gamma" or "attacked_fraction"
  std::vector<SweepRecord> records;
  /// FedAvg trained with the same seeds, for comparison with the gamma grid.
  std::optional<SweepRecord> reference;

  /// Columns: axis_name,variant,clean_acc,clean_loss,shifted_acc,shifted_loss,rho_hat.
  /// The reference row, when present, comes last with an empty axis cell.
  void write_csv(std::ostream& out) const;
};

struct GammaSweepOptions {
  /// Evaluate shifted accuracy with this attack when set.
  std::optional<AttackConfig> attack;
  std::size_t rho_sample_cap = 50;
  bool fedavg_reference = true;
};

/// Trains WAFL once per gamma (point k starts from init stream "init:point:k",
/// the FedAvg reference from "init:reference") and records
/// clean/shifted metrics and rho_hat of the trained model.
SweepResult gamma_sweep(const FederationData& federation, const ModelSpec& spec, const TrainConfig& base_config,
                        const std::vector<double>& gamma_grid, const GammaSweepOptions& options = {});

/// Trains each configured variant once, then evaluates it with the test sets of
/// round(f * m) attacked clients shifted by PGD for every fraction f.
SweepResult robustness_sweep(const FederationData& federation, const ModelSpec& spec,
                             const std::vector<TrainConfig>& configs, const AttackConfig& attack,
                             const std::vector<double>& fractions);

struct DomainAdaptationRow {
  std::string method;
  ProbabilityVector lambda;  // weights used for aggregation (final weights for agnostic)
  double target_acc = 0.0;
  double target_loss = 0.0;
};

struct DomainAdaptationResult {
  Vec source_costs;  // W_2^2(source_i, target)
  LambdaSelection selection;
  std::vector<DomainAdaptationRow> rows;

  /// Columns: method,lambda_json,target_acc,target_loss.
  void write_csv(std::ostream& out) const;
};

struct DomainAdaptationOptions {
  /// Dataset distances are read off the rounded plan, so a loose marginal tolerance suffices.
  OTConfig ot{.entropic_reg = 1e-2, .marginal_tol = 1e-5};
  std::size_t subsample = 200;
  double lambda_lr = 0.01;
};

/// Distances to the target, lambda by the LP, then WAFL(lambda*), FedAvg with
/// data-proportional and uniform weights, and agnostic ascent, each evaluated on
/// the target. Each source is one client. Needs at least 2 sources.
DomainAdaptationResult domain_adaptation_eval(const std::vector<Examples>& sources, const Examples& target,
                                              const ModelSpec& spec, const TrainConfig& wafl_config,
                                              const DomainAdaptationOptions& options);

/// Mean ||x_pgd - x|| over a seeded sample of train examples.
double mean_attack_displacement(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                                const AttackConfig& attack, LossKind kind, std::size_t sample_cap,
                                std::uint64_t seed);

/// Bisects log(gamma) on [lo, hi] until rho_hat(gamma) matches `target_rho`
/// for the fixed model (rho_hat decreases in gamma).
double gamma_for_target_rho(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                            SurrogateConfig cfg, LossKind kind, double target_rho, double lo, double hi,
                            std::size_t sample_cap, std::uint64_t seed, int iterations = 30);

}  // namespace wafl
