#include "wafl/federated.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "wafl/error.hpp"

namespace wafl {
namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t cap, RngStream& rng) {
  auto order = rng.permutation(n);
  if (cap > 0 && cap < n) order.resize(cap);
  std::sort(order.begin(), order.end());
  return order;
}

bool due(int every, int round, int total) {
  return round == total || (every > 0 && round % every == 0);
}

std::string json_array(const Vec& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out + "]";
}

}  // namespace

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::FedAvg: return "fedavg";
    case VariantKind::WAFL: return "wafl";
    case VariantKind::FedFGSM: return "fedfgsm";
    case VariantKind::FedPGD: return "fedpgd";
    case VariantKind::AgnosticAscent: return "agnostic";
  }
  return "unknown";
}

VariantKind parse_variant_kind(const std::string& text) {
  for (auto k : {VariantKind::FedAvg, VariantKind::WAFL, VariantKind::FedFGSM, VariantKind::FedPGD,
                 VariantKind::AgnosticAscent}) {
    if (to_string(k) == text) return k;
  }
  throw InvalidArgument("unknown variant '" + text + "' (expected fedavg, wafl, fedfgsm, fedpgd or agnostic)");
}

AlgorithmVariant AlgorithmVariant::fedavg() { return {}; }

AlgorithmVariant AlgorithmVariant::wafl(SurrogateConfig cfg) {
  AlgorithmVariant v;
  v.kind = VariantKind::WAFL;
  v.surrogate = cfg;
  return v;
}

AlgorithmVariant AlgorithmVariant::fed_fgsm(AttackConfig cfg) {
  AlgorithmVariant v;
  v.kind = VariantKind::FedFGSM;
  v.attack = cfg;
  return v;
}

AlgorithmVariant AlgorithmVariant::fed_pgd(AttackConfig cfg) {
  AlgorithmVariant v;
  v.kind = VariantKind::FedPGD;
  v.attack = cfg;
  return v;
}

AlgorithmVariant AlgorithmVariant::agnostic(double lambda_lr) {
  AlgorithmVariant v;
  v.kind = VariantKind::AgnosticAscent;
  v.lambda_lr = lambda_lr;
  return v;
}

void AlgorithmVariant::validate() const {
  switch (kind) {
    case VariantKind::WAFL: surrogate.validate(); break;
    case VariantKind::FedFGSM:
    case VariantKind::FedPGD: attack.validate(); break;
    case VariantKind::AgnosticAscent:
      if (!(lambda_lr >= 0.0)) throw InvalidArgument("lambda_lr must be nonnegative");
      break;
    case VariantKind::FedAvg: break;
  }
}

void TrainConfig::validate(std::size_t num_clients) const {
  if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
  if (local_steps < 1) throw InvalidArgument("local_steps must be >= 1");
  if (!(eta >= 0.0)) throw InvalidArgument("eta must be nonnegative");
  if (clients_per_round < 1 || static_cast<std::size_t>(clients_per_round) > num_clients) {
    throw InvalidArgument("clients_per_round must be in [1, number of clients]");
  }
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  if (weights_mode == WeightsMode::Explicit && static_cast<std::size_t>(explicit_weights.size()) != num_clients) {
    throw InvalidArgument("explicit weights must have one entry per client");
  }
  if (eval.shift) eval.shift->validate();
  variant.validate();
}

std::vector<int> sample_clients(int m, int clients_per_round, RngStream& stream) {
  if (clients_per_round < 1 || clients_per_round > m) {
    throw InvalidArgument("sample_clients: clients_per_round must be in [1, m]");
  }
  auto order = stream.permutation(static_cast<std::size_t>(m));
  std::vector<int> ids(order.begin(), order.begin() + clients_per_round);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ProbabilityVector resolve_weights(const FederationData& federation, WeightsMode mode, const Vec& explicit_weights) {
  switch (mode) {
    case WeightsMode::DataProportional: return default_weights(federation);
    case WeightsMode::Uniform: return ProbabilityVector::uniform(federation.num_clients());
    case WeightsMode::Explicit:
      if (static_cast<std::size_t>(explicit_weights.size()) != federation.num_clients()) {
        throw InvalidArgument("explicit weights must have one entry per client");
      }
      return ProbabilityVector(explicit_weights);
  }
  throw InvalidArgument("unknown weights mode");
}

Vec variant_gradient(const ModelSpec& spec, const ModelParams& params, const LabeledExample& z,
                     const AlgorithmVariant& variant, LossKind kind) {
  switch (variant.kind) {
    case VariantKind::WAFL: return surrogate_grad_theta(spec, params, z, variant.surrogate, kind);
    case VariantKind::FedFGSM:
      return grad_theta(spec, params, fgsm(spec, params, z, variant.attack.epsilon, variant.attack.clip, kind), kind);
    case VariantKind::FedPGD: return grad_theta(spec, params, pgd(spec, params, z, variant.attack, kind), kind);
    case VariantKind::FedAvg:
    case VariantKind::AgnosticAscent: return grad_theta(spec, params, z, kind);
  }
  throw InvalidArgument("unknown variant");
}

ModelParams local_update(const ClientDataset& client, const ModelSpec& spec, const ModelParams& theta_global,
                         const TrainConfig& config, int round) {
  const std::size_t n = client.train.size();
  if (n == 0) throw InvalidArgument("local_update: client " + std::to_string(client.client_id) + " has no data");
  ModelParams theta = theta_global;
  auto rng = derive_stream(config.seed, "client:" + std::to_string(client.client_id) + ":round:" + std::to_string(round));
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order;
  std::size_t cursor = n;
  for (int k = 0; k < config.local_steps; ++k) {
    std::vector<std::size_t> picked;
    if (batch >= n) {
      picked.resize(n);
      for (std::size_t i = 0; i < n; ++i) picked[i] = i;
    } else {
      if (cursor + batch > n) {
        order = rng.permutation(n);
        cursor = 0;
      }
      picked.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                    order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
      cursor += batch;
    }
    Vec grad = Vec::Zero(theta.theta.size());
    for (std::size_t idx : picked) grad += variant_gradient(spec, theta, client.train[idx], config.variant, config.loss);
    theta.theta -= (config.eta / static_cast<double>(picked.size())) * grad;
  }
  return theta;
}

ModelParams aggregate(std::vector<std::pair<int, ModelParams>> local_models, const ProbabilityVector& lambda) {
  if (local_models.empty()) throw InvalidArgument("aggregate: no participating clients");
  std::sort(local_models.begin(), local_models.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double total = 0.0;
  for (const auto& [id, _] : local_models) {
    if (id < 0 || static_cast<std::size_t>(id) >= lambda.size()) throw InvalidArgument("aggregate: client id out of range");
    total += lambda[static_cast<std::size_t>(id)];
  }
  if (!(total > 0.0)) throw NumericError("degenerate aggregation weights");
  ModelParams out{Vec::Zero(local_models.front().second.theta.size())};
  for (const auto& [id, params] : local_models) {
    out.theta += (lambda[static_cast<std::size_t>(id)] / total) * params.theta;
  }
  return out;
}

ProbabilityVector agnostic_lambda_step(const ProbabilityVector& lambda, const Vec& losses, double lambda_lr) {
  if (static_cast<Eigen::Index>(lambda.size()) != losses.size()) {
    throw InvalidArgument("agnostic_lambda_step: length mismatch");
  }
  return project_simplex(lambda.values() + lambda_lr * losses);
}

double global_objective(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                        const AlgorithmVariant& variant, LossKind kind, const ProbabilityVector& lambda,
                        std::size_t sample_cap) {
  double total = 0.0;
  for (std::size_t i = 0; i < federation.clients.size(); ++i) {
    if (lambda[i] == 0.0) continue;
    const auto& train = federation.clients[i].train;
    auto rng = derive_stream(0, "objective:client:" + std::to_string(i));
    const auto picked = sample_indices(train.size(), sample_cap, rng);
    double sum = 0.0;
    for (std::size_t k : picked) {
      sum += variant.kind == VariantKind::WAFL ? surrogate_loss(spec, params, train[k], variant.surrogate, kind)
                                               : loss(spec, params, train[k], kind);
    }
    total += lambda[i] * sum / static_cast<double>(picked.size());
  }
  return total;
}

EvalMetrics evaluate_test(const FederationData& federation, const ModelSpec& spec, const ModelParams& params,
                          LossKind kind) {
  std::size_t count = 0;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const auto& c : federation.clients) {
    for (const auto& z : c.test) {
      ++count;
      loss_sum += loss(spec, params, z, kind);
      if (kind == LossKind::CrossEntropy && predict(spec, params, z.x) == z.label()) ++correct;
    }
  }
  if (count == 0) throw InvalidArgument("evaluate_test: federation has no test examples");
  return {static_cast<double>(correct) / static_cast<double>(count), loss_sum / static_cast<double>(count)};
}

TrainResult run_federated(const FederationData& federation, const ModelSpec& spec, const TrainConfig& config,
                          const std::optional<ModelParams>& initial,
                          const std::function<void(const RoundLog&)>& on_round) {
  federation.validate();
  spec.validate();
  config.validate(federation.num_clients());
  if (spec.feature_dim != federation.feature_dim) throw InvalidArgument("model and data feature dimensions differ");

  const int m = static_cast<int>(federation.num_clients());
  const bool agnostic = config.variant.kind == VariantKind::AgnosticAscent;
  std::size_t test_count = 0;
  for (const auto& c : federation.clients) test_count += c.test.size();

  TrainResult result;
  result.weights = resolve_weights(federation, config.weights_mode, config.explicit_weights);
  if (initial) {
    result.params = *initial;
  } else {
    auto init_rng = derive_stream(config.seed, "init");
    result.params = init_params(spec, init_rng);
  }
  Vec last_losses = Vec::Zero(m);

  for (int t = 0; t < config.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    auto sample_rng = derive_stream(config.seed, "sample:" + std::to_string(t));
    const auto participants = sample_clients(m, config.clients_per_round, sample_rng);

    const std::size_t tasks = participants.size();
    std::vector<ModelParams> locals(tasks);
    std::vector<double> task_losses(tasks, 0.0);
    std::vector<std::exception_ptr> failures(tasks);
    auto run_task = [&](std::size_t j) {
      const auto& client = federation.clients[static_cast<std::size_t>(participants[j])];
      try {
        if (agnostic) task_losses[j] = mean_loss(spec, result.params, client.train, config.loss);
        locals[j] = local_update(client, spec, result.params, config, t);
      } catch (...) {
        failures[j] = std::current_exception();
      }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), tasks);
    if (workers <= 1) {
      for (std::size_t j = 0; j < tasks; ++j) run_task(j);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t j = w; j < tasks; j += workers) run_task(j);
        });
      }
    }
    for (std::size_t j = 0; j < tasks; ++j) {
      if (!failures[j]) continue;
      try {
        std::rethrow_exception(failures[j]);
      } catch (const std::exception& e) {
        throw Error("round " + std::to_string(t + 1) + ", client " + std::to_string(participants[j]) +
                    ": local update failed: " + e.what());
      }
    }

    std::vector<std::pair<int, ModelParams>> arrivals;
    for (std::size_t j = 0; j < tasks; ++j) arrivals.emplace_back(participants[j], std::move(locals[j]));
    result.params = aggregate(std::move(arrivals), result.weights);
    if (agnostic) {
      for (std::size_t j = 0; j < tasks; ++j) last_losses[participants[j]] = task_losses[j];
      result.weights = agnostic_lambda_step(result.weights, last_losses, config.variant.lambda_lr);
    }

    RoundLog log;
    log.round = t + 1;
    log.participants = participants;
    if (due(config.eval.every, t + 1, config.rounds)) {
      log.surrogate_loss = global_objective(federation, spec, result.params, config.variant, config.loss,
                                            result.weights, config.eval.objective_sample_cap);
      if (test_count > 0) {
        const auto clean = evaluate_test(federation, spec, result.params, config.loss);
        log.clean_acc = clean.accuracy;
        log.clean_loss = clean.loss;
      }
    }
    if (config.eval.shift && test_count > 0 && due(config.eval.shift_every, t + 1, config.rounds)) {
      const auto shifted_fed = shift_test_sets(federation, spec, result.params, *config.eval.shift, config.loss);
      const auto shifted = evaluate_test(shifted_fed, spec, result.params, config.loss);
      log.shifted_acc = shifted.accuracy;
      log.shifted_loss = shifted.loss;
    }
    if (config.eval.rho_sample_cap > 0 && config.variant.kind == VariantKind::WAFL) {
      FederationData weighted = federation;
      weighted.weights = result.weights;
      log.rho_hat = avg_worst_case_perturbation(weighted, spec, result.params, config.variant.surrogate, config.loss,
                                                config.eval.rho_sample_cap, config.seed);
    }
    if (agnostic) log.lambda = result.weights.values();
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (on_round) on_round(log);
    result.logs.push_back(std::move(log));
  }
  return result;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_rounds_csv(std::ostream& out, const std::vector<RoundLog>& logs, const std::string& variant) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << kRoundsCsvHeader << '\n';
  for (const auto& log : logs) {
    out << log.round << ',' << variant << ',' << opt(log.clean_acc) << ',' << opt(log.clean_loss) << ','
        << opt(log.shifted_acc) << ',' << opt(log.shifted_loss) << ',' << opt(log.surrogate_loss) << ','
        << opt(log.rho_hat) << ',';
    if (log.lambda) out << '"' << json_array(*log.lambda) << '"';
    out << '\n';
  }
}

nlohmann::json train_summary(const TrainResult& result, const ModelSpec& spec, const TrainConfig& config) {
  nlohmann::json j;
  j["variant"] = config.variant.name();
  j["rounds"] = config.rounds;
  j["seed"] = config.seed;
  j["model"] = spec_to_json(spec);
  j["param_count"] = spec.param_count();
  j["theta_norm"] = result.params.theta.norm();
  const Vec& w = result.weights.values();
  j["weights"] = std::vector<double>(w.data(), w.data() + w.size());
  nlohmann::json final_metrics = nlohmann::json::object();
  // Latest value of each metric, even if the final round did not compute it.
  auto latest = [&](auto member) -> std::optional<double> {
    for (auto it = result.logs.rbegin(); it != result.logs.rend(); ++it) {
      if ((*it).*member) return (*it).*member;
    }
    return std::nullopt;
  };
  const std::pair<const char*, std::optional<double> RoundLog::*> fields[] = {
      {"clean_acc", &RoundLog::clean_acc},       {"clean_loss", &RoundLog::clean_loss},
      {"shifted_acc", &RoundLog::shifted_acc},   {"shifted_loss", &RoundLog::shifted_loss},
      {"surrogate_loss", &RoundLog::surrogate_loss}, {"rho_hat", &RoundLog::rho_hat}};
  for (const auto& [name, member] : fields) {
    if (auto v = latest(member)) final_metrics[name] = *v;
  }
  j["final"] = final_metrics;
  return j;
}

}  // namespace wafl
