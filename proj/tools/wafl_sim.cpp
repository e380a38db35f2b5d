#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "wafl/config.hpp"

namespace fs = std::filesystem;
using namespace wafl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  bool dry_run = false;
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("wafl_sim");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("WAFL_SIM_LOG");
  spdlog::set_level(env && *env ? spdlog::level::from_str(env) : spdlog::level::info);
}

ExperimentConfig resolve_config(const GlobalOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError("wafl_sim", 0, "--config", "a config file is required");
  ExperimentConfig cfg = load_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.workers = *opts.workers;
  if (opts.out) cfg.out = *opts.out;
  validate_config(cfg, opts.config_path);
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) { open_output(path) << text; }

int cmd_run(const ExperimentConfig& cfg) {
  const auto fed = build_federation(cfg);
  const auto spec = cfg.model_spec(fed.feature_dim, fed.num_classes);
  const auto train = cfg.train_config();
  spdlog::info("run: {} clients, {} train examples, variant {}, {} rounds", fed.num_clients(), fed.total_train(),
               train.variant.name(), train.rounds);
  const auto result = run_federated(fed, spec, train, std::nullopt, [](const RoundLog& log) {
    spdlog::debug("round {}: clean_acc {} objective {}", log.round, log.clean_acc ? format_double(*log.clean_acc) : "-",
                  log.surrogate_loss ? format_double(*log.surrogate_loss) : "-");
  });
  auto csv = open_output(cfg.out / "rounds.csv");
  write_rounds_csv(csv, result.logs, train.variant.name());
  auto summary = train_summary(result, spec, train);
  summary["clients"] = fed.num_clients();
  summary["total_train"] = fed.total_train();
  write_text(cfg.out / "summary.json", summary.dump(2) + "\n");
  save_checkpoint(cfg.out / "checkpoint.json", spec, result.params);
  spdlog::info("wrote {}", cfg.out.string());
  return kExitOk;
}

int cmd_sweep_gamma(const ExperimentConfig& cfg) {
  const auto fed = build_federation(cfg);
  const auto spec = cfg.model_spec(fed.feature_dim, fed.num_classes);
  GammaSweepOptions options;
  options.rho_sample_cap = cfg.sweep.rho_sample_cap;
  if (cfg.sweep.with_attack) options.attack = cfg.attack;
  spdlog::info("sweep-gamma: {} grid points", cfg.sweep.gamma_grid.size());
  const auto sweep = gamma_sweep(fed, spec, cfg.train_config(VariantKind::WAFL), cfg.sweep.gamma_grid, options);
  auto out = open_output(cfg.out / "gamma_sweep.csv");
  sweep.write_csv(out);
  spdlog::info("wrote {}", (cfg.out / "gamma_sweep.csv").string());
  return kExitOk;
}

int cmd_sweep_attack(const ExperimentConfig& cfg) {
  const auto fed = build_federation(cfg);
  const auto spec = cfg.model_spec(fed.feature_dim, fed.num_classes);
  std::vector<TrainConfig> configs;
  for (auto kind : cfg.sweep.variants) {
    auto t = cfg.train_config(kind);
    t.eval.shift.reset();
    configs.push_back(t);
  }
  spdlog::info("sweep-attack: {} variants x {} fractions", configs.size(), cfg.sweep.fractions.size());
  const auto sweep = robustness_sweep(fed, spec, configs, cfg.attack, cfg.sweep.fractions);
  auto out = open_output(cfg.out / "attack_sweep.csv");
  sweep.write_csv(out);
  spdlog::info("wrote {}", (cfg.out / "attack_sweep.csv").string());
  return kExitOk;
}

int cmd_domain_adapt(const ExperimentConfig& cfg, const std::string& source) {
  if (cfg.domain.sources.size() < 2) throw ConfigError(source, 0, "domain.sources", "need >= 2 sources");
  if (cfg.domain.target.empty()) throw ConfigError(source, 0, "domain.target", "missing required path");
  std::vector<Examples> sources;
  for (const auto& p : cfg.domain.sources) sources.push_back(load_csv(p));
  const auto target = load_csv(cfg.domain.target);
  int num_classes = infer_num_classes(target);
  for (const auto& s : sources) num_classes = std::max(num_classes, infer_num_classes(s));
  const auto spec = cfg.model_spec(static_cast<int>(target.front().x.size()), num_classes);
  DomainAdaptationOptions options;
  options.ot.entropic_reg = cfg.domain.entropic_reg;
  options.ot.marginal_tol = cfg.domain.marginal_tol;
  options.subsample = cfg.domain.subsample;
  options.lambda_lr = cfg.train.variant.lambda_lr;
  auto train = cfg.train_config(VariantKind::WAFL);
  const auto result = domain_adaptation_eval(sources, target, spec, train, options);
  auto out = open_output(cfg.out / "domain_adaptation.csv");
  result.write_csv(out);
  for (const auto& row : result.rows) spdlog::info("{}: target accuracy {}", row.method, format_double(row.target_acc));
  return kExitOk;
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int n = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), n);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size() || n < 1 ||
        static_cast<std::size_t>(n) > kExactSupportLimit) {
      throw ConfigError("command line", 0, "--sizes", "entries must be integers in [1, 64], got '" + item + "'");
    }
    sizes.push_back(n);
  }
  if (sizes.empty()) throw ConfigError("command line", 0, "--sizes", "must list at least one size");
  return sizes;
}

int cmd_ot_check(const std::string& sizes_text, int trials, std::uint64_t seed) {
  const auto sizes = parse_sizes(sizes_text);
  auto rng = derive_stream(seed, "ot-check");
  double worst = 0.0;
  int count = 0;
  for (int n : sizes) {
    for (int t = 0; t < trials; ++t) {
      const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.uniform_index(3));
      Mat a(n, dim), b(n, dim);
      for (auto& v : a.reshaped()) v = rng.uniform(-1.0, 1.0);
      for (auto& v : b.reshaped()) v = rng.uniform(-1.0, 1.0);
      const auto p = uniform_distribution(a);
      const auto q = uniform_distribution(b);
      const double exact = exact_w_small(p, q, 2).cost;
      const double approx = sinkhorn_w(p, q, OTConfig{}).cost;
      worst = std::max(worst, relative_error(Vec{{approx}}, Vec{{exact}}));
      ++count;
    }
  }
  std::cout << "ot-check: " << count << " instances, max relative error " << format_double(worst) << '\n';
  return worst <= 0.01 ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Federated learning simulator with Wasserstein distributionally robust training"};
  app.require_subcommand(1);
  GlobalOptions opts;
  auto add_globals = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "Experiment config (INI or JSON)");
    cmd->add_option("--seed", opts.seed, "Override the root seed");
    cmd->add_option("--workers", opts.workers, "Threads for client updates")->check(CLI::PositiveNumber);
    cmd->add_option("--out", opts.out, "Output directory");
    cmd->add_flag("--dry-run", opts.dry_run, "Validate and print the resolved config without computing");
  };

  auto* run = app.add_subcommand("run", "Train one variant; writes rounds.csv, summary.json, checkpoint.json");
  auto* sweep_gamma = app.add_subcommand("sweep-gamma", "Train WAFL over a gamma grid; writes gamma_sweep.csv");
  auto* sweep_attack = app.add_subcommand("sweep-attack", "Shifted accuracy per variant and attacked fraction");
  auto* domain = app.add_subcommand("domain-adapt", "Source weighting by the lambda LP versus baselines");
  auto* ot_check = app.add_subcommand("ot-check", "Compare Sinkhorn against the exact solver");
  for (auto* cmd : {run, sweep_gamma, sweep_attack, domain}) add_globals(cmd);

  std::optional<std::string> gamma_grid;
  bool with_attack = false;
  sweep_gamma->add_option("--gamma-grid", gamma_grid, "Comma-separated ascending gamma values");
  sweep_gamma->add_flag("--with-attack", with_attack, "Also record shifted accuracy");
  std::optional<std::string> fractions;
  sweep_attack->add_option("--fractions", fractions, "Comma-separated attacked fractions");
  std::string sizes = "4,8";
  int trials = 20;
  std::uint64_t ot_seed = 0;
  ot_check->add_option("--sizes", sizes, "Comma-separated support sizes");
  ot_check->add_option("--trials", trials, "Instances per size")->check(CLI::PositiveNumber);
  ot_check->add_option("--seed", ot_seed, "Root seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (ot_check->parsed()) return cmd_ot_check(sizes, trials, ot_seed);
    ExperimentConfig cfg = resolve_config(opts);
    if (gamma_grid) apply_setting(cfg, "sweep.gamma_grid", *gamma_grid, "--gamma-grid");
    if (fractions) apply_setting(cfg, "sweep.fractions", *fractions, "--fractions");
    if (with_attack) cfg.sweep.with_attack = true;
    validate_config(cfg, "command line");
    if (opts.dry_run) {
      std::cout << to_ini(cfg);
      return kExitOk;
    }
    if (run->parsed()) return cmd_run(cfg);
    if (sweep_gamma->parsed()) return cmd_sweep_gamma(cfg);
    if (sweep_attack->parsed()) return cmd_sweep_attack(cfg);
    if (domain->parsed()) return cmd_domain_adapt(cfg, opts.config_path);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
