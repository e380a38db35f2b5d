#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wafl/attack.hpp"
#include "wafl/data.hpp"
#include "wafl/model.hpp"
#include "wafl/surrogate.hpp"

namespace wafl {

enum class VariantKind { FedAvg, WAFL, FedFGSM, FedPGD, AgnosticAscent };

std::string to_string(VariantKind kind);
VariantKind parse_variant_kind(const std::string& text);

/// Training algorithm. Only the config matching `kind` is read.
struct AlgorithmVariant {
  VariantKind kind = VariantKind::FedAvg;
  SurrogateConfig surrogate;   // WAFL
  AttackConfig attack;         // FedFGSM (epsilon, clip) and FedPGD
  double lambda_lr = 0.01;     // AgnosticAscent

  static AlgorithmVariant fedavg();
  static AlgorithmVariant wafl(SurrogateConfig cfg);
  static AlgorithmVariant fed_fgsm(AttackConfig cfg);
  static AlgorithmVariant fed_pgd(AttackConfig cfg);
  static AlgorithmVariant agnostic(double lambda_lr);

  std::string name() const { return to_string(kind); }
  void validate() const;
};

enum class WeightsMode { DataProportional, Uniform, Explicit };

/// Metrics computed while training; the expensive ones are opt-in.
struct EvalConfig {
  /// Clean metrics and the training objective every this many rounds (0: final round only).
  int every = 1;
  /// Shift attacked clients' test sets with this attack for the shifted columns.
  std::optional<AttackConfig> shift;
  /// Shifted metrics every this many rounds (0: final round only).
  int shift_every = 0;
  /// Log rho_hat of the WAFL surrogate with this many samples per client (0: off).
  std::size_t rho_sample_cap = 0;
  /// Train examples per client used for the objective column (0: all).
  std::size_t objective_sample_cap = 0;
};

struct TrainConfig {
  int rounds = 200;
  int local_steps = 2;
  double eta = 0.05;
  int clients_per_round = 10;
  int batch_size = 64;
  AlgorithmVariant variant;
  WeightsMode weights_mode = WeightsMode::DataProportional;
  Vec explicit_weights;
  LossKind loss = LossKind::CrossEntropy;
  std::uint64_t seed = 0;
  /// Threads for local updates; results do not depend on it.
  int workers = 1;
  EvalConfig eval;

  void validate(std::size_t num_clients) const;
};

struct RoundLog {
  int round = 0;
  std::vector<int> participants;
  /// Global training objective: sum_i lambda_i mean phi_gamma for WAFL, mean loss otherwise.
  std::optional<double> surrogate_loss;
  std::optional<double> clean_acc;
  std::optional<double> clean_loss;
  std::optional<double> shifted_acc;
  std::optional<double> shifted_loss;
  std::optional<double> rho_hat;
  std::optional<Vec> lambda;  // AgnosticAscent
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<RoundLog> logs;
  ProbabilityVector weights;
};

/// Uniform sample of `clients_per_round` distinct ids, ascending.
std::vector<int> sample_clients(int m, int clients_per_round, RngStream& stream);

/// The aggregation weights selected by `mode`.
ProbabilityVector resolve_weights(const FederationData& federation, WeightsMode mode, const Vec& explicit_weights);

/// K mini-batch SGD steps of the configured variant from theta_global.
/// Batches are drawn without replacement, reshuffling when a pass ends, from
/// derive_stream(seed, "client:<id>:round:<t>").
ModelParams local_update(const ClientDataset& client, const ModelSpec& spec, const ModelParams& theta_global,
                         const TrainConfig& config, int round);

/// Per-example training gradient of the configured variant.
Vec variant_gradient(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                     const AlgorithmVariant& variant, LossKind kind);

/// sum_{i in S} lambda_i theta_i / sum_{i in S} lambda_i, summed in ascending id order.
ModelParams aggregate(std::vector<std::pair<int, ModelParams>> local_models, const ProbabilityVector& lambda);

/// project_simplex(lambda + lr * losses).
ProbabilityVector agnostic_lambda_step(const ProbabilityVector& lambda, const Vec& losses, double lambda_lr);

/// Training objective at `params`: sum_i lambda_i * mean over client i's train
/// examples (up to `sample_cap`, 0 = all) of phi_gamma (WAFL) or the loss.
double global_objective(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                        const AlgorithmVariant& variant, LossKind kind, const ProbabilityVector& lambda,
                        std::size_t sample_cap = 0);

struct EvalMetrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Accuracy and mean loss pooled over every client's test examples.
EvalMetrics evaluate_test(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                          LossKind kind);

/// Runs the protocol for config.rounds rounds. Starts from `initial` when given,
/// otherwise from init_params with derive_stream(seed, "init").
TrainResult run_federated(const FederationData& federation, const ModelSpec& spec, const TrainConfig& config,
                          const std::optional<ModelParams>& initial = std::nullopt,
                          const std::function<void(const RoundLog&)>& on_round = {});

/// rounds.csv: round,variant,clean_acc,clean_loss,shifted_acc,shifted_loss,surrogate_loss,rho_hat,lambda_json
void write_rounds_csv(std::ostream& out, const std::vector<RoundLog>& logs, const std::string& variant);
inline constexpr const char* kRoundsCsvHeader =
    "round,variant,clean_acc,clean_loss,shifted_acc,shifted_loss,surrogate_loss,rho_hat,lambda_json";

nlohmann::json train_summary(const TrainResult& result, const ModelSpec& spec, const TrainConfig& config);

/// Shortest decimal text that reads back to the same double ("nan"/"inf" for non-finite).
std::string format_double(double v);

}  // namespace wafl
