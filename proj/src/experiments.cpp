#include "wafl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "wafl/error.hpp"

namespace wafl {
namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

SweepRecord evaluate_record(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                            LossKind kind, double axis, const std::string& variant) {
  SweepRecord r;
  r.axis = axis;
  r.variant = variant;
  const auto clean = evaluate_test(federation, spec, params, kind);
  r.clean_acc = clean.accuracy;
  r.clean_loss = clean.loss;
  return r;
}

TrainConfig quiet(TrainConfig cfg) {
  // Sweeps only need the trained model; skip per-round metrics.
  cfg.eval = EvalConfig{};
  cfg.eval.every = 0;
  return cfg;
}

}  // namespace

void SweepResult::write_csv(std::ostream& out) const {
  out << axis_name << ",variant,clean_acc,clean_loss,shifted_acc,shifted_loss,rho_hat\n";
  auto row = [&](const SweepRecord& r, bool with_axis) {
    out << (with_axis ? format_double(r.axis) : std::string()) << ',' << r.variant << ',' << format_double(r.clean_acc)
        << ',' << format_double(r.clean_loss) << ',' << cell(r.shifted_acc) << ',' << cell(r.shifted_loss) << ','
        << cell(r.rho_hat) << '\n';
  };
  for (const auto& r : records) row(r, true);
  if (reference) row(*reference, false);
}

SweepResult gamma_sweep(const FederationData& federation, const ModelSpec& spec, const TrainConfig& base_config,
                        const std::vector<double>& gamma_grid, const GammaSweepOptions& options) {
  if (gamma_grid.empty()) throw InvalidArgument("gamma_sweep: empty gamma grid");
  if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end())) {
    throw InvalidArgument("gamma_sweep: gamma grid must be ascending");
  }
  SweepResult result;
  result.axis_name = "gamma";

  auto shifted_metrics = [&](const ModelParams& params, SweepRecord& r) {
    if (!options.attack) return;
    const auto shifted_fed = shift_test_sets(federation, spec, params, *options.attack, base_config.loss);
    const auto shifted = evaluate_test(shifted_fed, spec, params, base_config.loss);
    r.shifted_acc = shifted.accuracy;
    r.shifted_loss = shifted.loss;
  };

  for (std::size_t k = 0; k < gamma_grid.size(); ++k) {
    const double gamma = gamma_grid[k];
    TrainConfig cfg = quiet(base_config);
    SurrogateConfig sur = base_config.variant.kind == VariantKind::WAFL ? base_config.variant.surrogate : SurrogateConfig{};
    sur.gamma = gamma;
    cfg.variant = AlgorithmVariant::wafl(sur);
    auto init_rng = derive_stream(cfg.seed, "init:point:" + std::to_string(k));
    const auto trained = run_federated(federation, spec, cfg, init_params(spec, init_rng));
    auto record = evaluate_record(federation, spec, trained.params, cfg.loss, gamma, cfg.variant.name());
    shifted_metrics(trained.params, record);
    FederationData weighted = federation;
    weighted.weights = trained.weights;
    record.rho_hat = avg_worst_case_perturbation(weighted, spec, trained.params, sur, cfg.loss,
                                                 options.rho_sample_cap, cfg.seed);
    result.records.push_back(std::move(record));
  }
  if (options.fedavg_reference) {
    TrainConfig cfg = quiet(base_config);
    cfg.variant = AlgorithmVariant::fedavg();
    auto init_rng = derive_stream(cfg.seed, "init:reference");
    const auto trained = run_federated(federation, spec, cfg, init_params(spec, init_rng));
    auto record = evaluate_record(federation, spec, trained.params, cfg.loss, std::nan(""), cfg.variant.name());
    shifted_metrics(trained.params, record);
    result.reference = std::move(record);
  }
  return result;
}

SweepResult robustness_sweep(const FederationData& federation, const ModelSpec& spec,
                             const std::vector<TrainConfig>& configs, const AttackConfig& attack,
                             const std::vector<double>& fractions) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("robustness_sweep: fractions must lie in [0, 1]");
  }
  SweepResult result;
  result.axis_name = "attacked_fraction";
  std::vector<std::pair<std::string, TrainResult>> trained;
  for (const auto& cfg : configs) trained.emplace_back(cfg.variant.name(), run_federated(federation, spec, quiet(cfg)));

  for (double f : fractions) {
    for (std::size_t v = 0; v < configs.size(); ++v) {
      const auto& params = trained[v].second.params;
      const LossKind kind = configs[v].loss;
      auto record = evaluate_record(federation, spec, params, kind, f, trained[v].first);
      if (f == 0.0) {
        record.shifted_acc = record.clean_acc;
        record.shifted_loss = record.clean_loss;
      } else {
        AttackConfig a = attack;
        a.attacked_fraction = f;
        const auto shifted = evaluate_test(shift_test_sets(federation, spec, params, a, kind), spec, params, kind);
        record.shifted_acc = shifted.accuracy;
        record.shifted_loss = shifted.loss;
      }
      result.records.push_back(std::move(record));
    }
  }
  return result;
}

void DomainAdaptationResult::write_csv(std::ostream& out) const {
  out << "method,lambda_json,target_acc,target_loss\n";
  for (const auto& r : rows) {
    out << r.method << ",\"[";
    for (std::size_t i = 0; i < r.lambda.size(); ++i) out << (i ? "," : "") << format_double(r.lambda[i]);
    out << "]\"," << format_double(r.target_acc) << ',' << format_double(r.target_loss) << '\n';
  }
}

DomainAdaptationResult domain_adaptation_eval(const std::vector<Examples>& sources, const Examples& target,
                                              const ModelSpec& spec, const TrainConfig& wafl_config,
                                              const DomainAdaptationOptions& options) {
  if (sources.size() < 2) throw InvalidArgument("need >= 2 sources");
  if (target.empty()) throw InvalidArgument("domain adaptation needs a non-empty target");
  DomainAdaptationResult result;
  result.source_costs.resize(static_cast<Eigen::Index>(sources.size()));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    result.source_costs[static_cast<Eigen::Index>(i)] =
        pairwise_dataset_distance(sources[i], target, options.ot, options.subsample, wafl_config.seed);
  }
  result.selection = select_lambda_domain_adaptation(result.source_costs);

  int num_classes = std::max(infer_num_classes(target), spec.num_classes);
  for (const auto& s : sources) num_classes = std::max(num_classes, infer_num_classes(s));
  FederationData fed = federation_from_datasets(sources, num_classes);
  // The target plays the role of every client's test set for evaluation.
  FederationData target_fed = fed;
  for (auto& c : target_fed.clients) c.test.clear();
  target_fed.clients.front().test = target;

  auto run = [&](const std::string& method, TrainConfig cfg) {
    cfg.clients_per_round = static_cast<int>(sources.size());
    cfg = quiet(cfg);
    const auto trained = run_federated(fed, spec, cfg);
    const auto metrics = evaluate_test(target_fed, spec, trained.params, cfg.loss);
    result.rows.push_back({method, trained.weights, metrics.accuracy, metrics.loss});
  };

  TrainConfig wafl = wafl_config;
  wafl.weights_mode = WeightsMode::Explicit;
  wafl.explicit_weights = result.selection.lambda.values();
  run("wafl_lp_lambda", wafl);

  TrainConfig avg = wafl_config;
  avg.variant = AlgorithmVariant::fedavg();
  avg.weights_mode = WeightsMode::DataProportional;
  run("fedavg_data_weights", avg);
  avg.weights_mode = WeightsMode::Uniform;
  run("fedavg_uniform_weights", avg);

  TrainConfig afl = wafl_config;
  afl.variant = AlgorithmVariant::agnostic(options.lambda_lr);
  afl.weights_mode = WeightsMode::Uniform;
  run("agnostic_ascent", afl);
  return result;
}

double mean_attack_displacement(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                                const AttackConfig& attack, LossKind kind, std::size_t sample_cap,
                                std::uint64_t seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < federation.clients.size(); ++i) {
    const auto& train = federation.clients[i].train;
    auto rng = derive_stream(seed, "displacement:client:" + std::to_string(i));
    auto order = rng.permutation(train.size());
    order.resize(std::min(sample_cap, order.size()));
    std::sort(order.begin(), order.end());
    double sum = 0.0;
    for (std::size_t k : order) sum += (pgd(spec, params, train[k], attack, kind).x - train[k].x).norm();
    total += federation.weights[i] * sum / static_cast<double>(order.size());
  }
  return total;
}

double gamma_for_target_rho(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                            SurrogateConfig cfg, LossKind kind, double target_rho, double lo, double hi,
                            std::size_t sample_cap, std::uint64_t seed, int iterations) {
  if (!(lo > 0.0 && hi > lo)) throw InvalidArgument("gamma_for_target_rho: need 0 < lo < hi");
  double log_lo = std::log(lo);
  double log_hi = std::log(hi);
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (log_lo + log_hi);
    cfg.gamma = std::exp(mid);
    const double rho = avg_worst_case_perturbation(federation, spec, params, cfg, kind, sample_cap, seed);
    // Larger gamma, smaller rho: move toward the side that brackets the target.
    if (rho > target_rho) {
      log_lo = mid;
    } else {
      log_hi = mid;
    }
  }
  return std::exp(0.5 * (log_lo + log_hi));
}

}  // namespace wafl
