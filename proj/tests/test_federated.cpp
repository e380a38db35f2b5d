#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "wafl/federated.hpp"

using namespace wafl;

namespace {

FederationData small_federation(int m = 4, std::uint64_t seed = 2) {
  return partition_noniid(gen_synthetic_mixture(3, 3, 240, 3.0, seed), m, 2, 0.4, seed);
}

TrainConfig base_config(int rounds = 5) {
  TrainConfig cfg;
  cfg.rounds = rounds;
  cfg.local_steps = 2;
  cfg.eta = 0.1;
  cfg.clients_per_round = 3;
  cfg.batch_size = 8;
  cfg.seed = 11;
  return cfg;
}

std::string rounds_csv(const TrainResult& r, const TrainConfig& cfg) {
  std::ostringstream out;
  write_rounds_csv(out, r.logs, cfg.variant.name());
  return out.str();
}

}  // namespace

TEST_CASE("client sampling") {
  auto rng = derive_stream(1, "sample:0");
  CHECK(sample_clients(5, 5, rng) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(sample_clients(1, 1, rng) == std::vector<int>{0});
  for (int trial = 0; trial < 20; ++trial) {
    const auto ids = sample_clients(100, 10, rng);
    CHECK(ids.size() == 10);
    CHECK(std::set<int>(ids.begin(), ids.end()).size() == 10);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(ids.back() < 100);
  }
  CHECK_THROWS_AS(sample_clients(3, 4, rng), InvalidArgument);
}

TEST_CASE("aggregation") {
  const auto lambda = ProbabilityVector::from_weights(Vec{{0.25, 0.75}});
  const auto avg = aggregate({{0, ModelParams{Vec{{1.0, 1.0}}}}, {1, ModelParams{Vec{{3.0, 5.0}}}}}, lambda);
  CHECK(avg.theta.isApprox(Vec{{2.5, 4.0}}, 1e-15));
  CHECK(aggregate({{1, ModelParams{Vec{{3.0, 5.0}}}}}, lambda).theta == Vec{{3.0, 5.0}});
  CHECK(aggregate({{0, ModelParams{Vec{{0.0, 0.0}}}}, {1, ModelParams{Vec{{2.0, 2.0}}}}}, ProbabilityVector::uniform(2))
            .theta == Vec{{1.0, 1.0}});
  CHECK_THROWS_WITH_AS(aggregate({{0, ModelParams{Vec{{1.0}}}}}, ProbabilityVector::from_weights(Vec{{0.0, 1.0}})),
                       "degenerate aggregation weights", NumericError);

  auto rng = derive_stream(2, "aggregate-perm");
  const auto weights = ProbabilityVector::from_weights(Vec{{0.1, 0.2, 0.3, 0.15, 0.25}});
  std::vector<std::pair<int, ModelParams>> models;
  for (int i = 0; i < 5; ++i) models.emplace_back(i, ModelParams{wafl::testing::random_normal(4, rng)});
  const auto reference = aggregate(models, weights);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(models);
    CHECK(aggregate(models, weights) == reference);
  }
}

TEST_CASE("agnostic lambda step") {
  const auto half = ProbabilityVector::uniform(2);
  CHECK(agnostic_lambda_step(half, Vec{{1.0, 0.0}}, 0.0) == half);
  CHECK(agnostic_lambda_step(half, Vec{{0.7, 0.7}}, 0.3).values().isApprox(half.values(), 1e-15));
  const auto step = agnostic_lambda_step(half, Vec{{1.0, 0.0}}, 0.2);
  CHECK(step[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(step[1] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("weights modes") {
  const auto fed = small_federation();
  CHECK(resolve_weights(fed, WeightsMode::DataProportional, {}) == default_weights(fed));
  CHECK(resolve_weights(fed, WeightsMode::Uniform, {}) == ProbabilityVector::uniform(fed.num_clients()));
  CHECK(resolve_weights(fed, WeightsMode::Explicit, Vec{{0.0, 1.0, 0.0, 0.0}}).values() == Vec{{0.0, 1.0, 0.0, 0.0}});
  CHECK_THROWS_AS(resolve_weights(fed, WeightsMode::Explicit, Vec{{1.0}}), InvalidArgument);
}

TEST_CASE("local update special cases") {
  const auto fed = small_federation();
  const auto spec = ModelSpec::mlr(3, 3);
  auto rng = derive_stream(3, "local");
  const ModelParams start{wafl::testing::random_normal(static_cast<Eigen::Index>(spec.param_count()), rng, 0.1)};
  const auto& client = fed.clients[1];

  auto cfg = base_config();
  cfg.eta = 0.0;
  CHECK(local_update(client, spec, start, cfg, 0) == start);

  cfg.eta = 0.3;
  cfg.local_steps = 1;
  cfg.batch_size = static_cast<int>(client.train.size());
  Vec g = Vec::Zero(start.theta.size());
  for (const auto& z : client.train) g += grad_theta(spec, start, z, LossKind::CrossEntropy);
  const Vec expected = start.theta - 0.3 / static_cast<double>(client.train.size()) * g;
  CHECK(relative_error(local_update(client, spec, start, cfg, 0).theta, expected) <= 1e-12);
}

TEST_CASE("single client full batch equals centralized gradient descent") {
  const auto data = gen_synthetic_mixture(2, 2, 80, 4.0, 5);
  const auto fed = federation_from_datasets({data}, 2);
  const auto spec = ModelSpec::mlr(2, 2);
  auto cfg = base_config(10);
  cfg.local_steps = 1;
  cfg.clients_per_round = 1;
  cfg.batch_size = 1000;
  cfg.eta = 0.5;
  ModelParams central{Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  for (int t = 1; t <= 10; ++t) {
    auto step_cfg = cfg;
    step_cfg.rounds = t;
    const Vec got = run_federated(fed, spec, step_cfg, ModelParams{Vec::Zero(central.theta.size())}).params.theta;
    Vec g = Vec::Zero(central.theta.size());
    for (const auto& z : data) g += grad_theta(spec, central, z, LossKind::CrossEntropy);
    central.theta -= 0.5 / static_cast<double>(data.size()) * g;
    CHECK((got - central.theta).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("runs are deterministic across repeats and worker counts") {
  const auto fed = small_federation(6);
  const auto spec = ModelSpec::mlp(3, 3, {4});
  for (auto variant : {AlgorithmVariant::fedavg(), AlgorithmVariant::wafl(SurrogateConfig{}),
                       AlgorithmVariant::agnostic(0.05)}) {
    auto cfg = base_config(4);
    cfg.variant = variant;
    const auto a = run_federated(fed, spec, cfg);
    const auto b = run_federated(fed, spec, cfg);
    cfg.workers = 4;
    const auto c = run_federated(fed, spec, cfg);
    CHECK(a.params == b.params);
    CHECK(a.params == c.params);
    CHECK(rounds_csv(a, cfg) == rounds_csv(b, cfg));
    CHECK(rounds_csv(a, cfg) == rounds_csv(c, cfg));
  }
}

TEST_CASE("fgsm variant equals single-step pgd variant") {
  const auto fed = small_federation();
  const auto spec = ModelSpec::mlr(3, 3);
  AttackConfig attack;
  attack.clip.reset();
  attack.epsilon = 0.2;
  attack.alpha = 0.2;
  attack.steps = 1;
  auto cfg = base_config(3);
  cfg.variant = AlgorithmVariant::fed_fgsm(attack);
  const auto fgsm_run = run_federated(fed, spec, cfg);
  cfg.variant = AlgorithmVariant::fed_pgd(attack);
  CHECK(run_federated(fed, spec, cfg).params == fgsm_run.params);
}

TEST_CASE("wafl with very large gamma tracks fedavg") {
  const auto fed = small_federation();
  const auto spec = ModelSpec::mlr(3, 3);
  auto cfg = base_config(5);
  const auto plain = run_federated(fed, spec, cfg);
  SurrogateConfig huge;
  huge.gamma = 1e6;
  cfg.variant = AlgorithmVariant::wafl(huge);
  const auto robust = run_federated(fed, spec, cfg);
  CHECK(relative_error(robust.params.theta, plain.params.theta) <= 1e-3);
}

TEST_CASE("agnostic ascent logs lambda and the csv quotes it") {
  const auto fed = small_federation();
  const auto spec = ModelSpec::mlr(3, 3);
  auto cfg = base_config(3);
  cfg.variant = AlgorithmVariant::agnostic(0.5);
  const auto r = run_federated(fed, spec, cfg);
  REQUIRE(r.logs.back().lambda);
  CHECK(is_probability_vector(*r.logs.back().lambda));
  CHECK_FALSE(r.weights == default_weights(fed));
  const auto csv = rounds_csv(r, cfg);
  CHECK(csv.rfind(kRoundsCsvHeader, 0) == 0);
  CHECK(csv.find(",\"[") != std::string::npos);
}

TEST_CASE("evaluation columns follow the eval config") {
  const auto fed = small_federation();
  const auto spec = ModelSpec::mlr(3, 3);
  auto cfg = base_config(4);
  cfg.eval.every = 2;
  auto r = run_federated(fed, spec, cfg);
  CHECK_FALSE(r.logs[0].clean_acc);
  CHECK(r.logs[1].clean_acc);
  CHECK(r.logs[3].clean_acc);
  CHECK_FALSE(r.logs[3].shifted_acc);
  for (const auto& log : r.logs) CHECK(log.participants.size() == 3);

  AttackConfig attack;
  attack.clip.reset();
  attack.attacked_fraction = 1.0;
  attack.steps = 5;
  cfg.eval.shift = attack;
  cfg.eval.rho_sample_cap = 5;
  cfg.variant = AlgorithmVariant::wafl(SurrogateConfig{});
  r = run_federated(fed, spec, cfg);
  CHECK_FALSE(r.logs[0].shifted_acc);
  REQUIRE(r.logs[3].shifted_acc);
  CHECK(*r.logs[3].shifted_acc <= *r.logs[3].clean_acc);
  CHECK(r.logs[3].rho_hat);
}

TEST_CASE("surrogate objective decreases in trend") {
  const auto data = gen_synthetic_mixture(2, 2, 200, 6.0, 9);
  const auto fed = partition_noniid(data, 5, 2, 0.0, 9);
  const auto spec = ModelSpec::mlr(2, 2);
  auto cfg = base_config(60);
  cfg.clients_per_round = 5;
  cfg.batch_size = 1000;
  cfg.eta = 0.2;
  cfg.variant = AlgorithmVariant::wafl(SurrogateConfig{});
  const auto r = run_federated(fed, spec, cfg, ModelParams{Vec::Zero(6)});
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += *r.logs[static_cast<std::size_t>(i)].surrogate_loss;
    last += *r.logs[r.logs.size() - 1 - static_cast<std::size_t>(i)].surrogate_loss;
  }
  CHECK(last < first);
}

TEST_CASE("config validation and failure reporting") {
  const auto fed = small_federation();
  auto cfg = base_config();
  cfg.clients_per_round = 5;
  CHECK_THROWS_AS(cfg.validate(fed.num_clients()), InvalidArgument);
  cfg = base_config();
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(fed.num_clients()), InvalidArgument);
  CHECK_THROWS_AS(parse_variant_kind("drfa"), InvalidArgument);
  CHECK(parse_variant_kind("fedpgd") == VariantKind::FedPGD);

  const auto reg_data = Examples{{Vec{{1.0}}, 0.0}, {Vec{{2.0}}, 1.0}};
  const auto reg_fed = federation_from_datasets({reg_data, reg_data}, 1);
  SurrogateConfig weak;
  weak.gamma = 0.01;
  weak.ascent_steps = 100;
  cfg = base_config(1);
  cfg.clients_per_round = 2;
  cfg.loss = LossKind::Square;
  cfg.variant = AlgorithmVariant::wafl(weak);
  CHECK_THROWS_WITH_AS(run_federated(reg_fed, ModelSpec::mlr(1, 1, 0.0), cfg, ModelParams{Vec{{3.0, 0.0}}}),
                       doctest::Contains("round 1, client 0: local update failed: inner ascent diverged"), Error);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
}
