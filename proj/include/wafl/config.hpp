#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wafl/error.hpp"
#include "wafl/experiments.hpp"

namespace wafl {

/// Invalid configuration. `line` is 0 when the source has no line information.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, int line, const std::string& key, const std::string& message);

  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | csv
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path path;
  std::optional<std::size_t> limit;
  int num_classes = 4;
  int feature_dim = 10;
  std::size_t n = 2000;
  double separation = 3.0;
  int clients = 10;
  int labels_per_client = 2;
  double size_dispersion = 0.5;
};

struct SweepConfig {
  std::vector<double> gamma_grid{0.05, 0.1, 0.5, 1.0, 5.0, 10.0};
  std::vector<double> fractions{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<VariantKind> variants{VariantKind::FedAvg, VariantKind::WAFL, VariantKind::FedFGSM,
                                    VariantKind::FedPGD, VariantKind::AgnosticAscent};
  bool with_attack = false;
  std::size_t rho_sample_cap = 50;
};

struct DomainConfig {
  std::vector<std::filesystem::path> sources;
  std::filesystem::path target;
  std::size_t subsample = 200;
  double entropic_reg = 1e-2;
  double marginal_tol = 1e-5;
};

struct ExperimentConfig {
  std::string preset;
  std::uint64_t seed = 0;
  int workers = 1;
  std::filesystem::path out = "wafl_out";
  DatasetConfig dataset;
  ModelKind model_kind = ModelKind::MLR;
  std::vector<int> hidden_dims;
  Activation activation = Activation::Tanh;
  double l2_reg = 1e-4;
  LossKind loss = LossKind::CrossEntropy;
  VariantKind variant = VariantKind::FedAvg;
  TrainConfig train;
  SurrogateConfig surrogate;
  AttackConfig attack;
  /// Evaluate shifted accuracy during `run` with the [attack] settings.
  bool shift_eval = false;
  SweepConfig sweep;
  DomainConfig domain;

  /// TrainConfig with the variant, seed and workers filled in.
  TrainConfig train_config() const;
  TrainConfig train_config(VariantKind kind) const;
  ModelSpec model_spec(int feature_dim, int num_classes) const;
};

/// Names accepted by the `preset` key.
std::vector<std::string> preset_names();
/// Defaults of a named preset; throws InvalidArgument for unknown names.
ExperimentConfig preset_config(const std::string& name);

/// Parses INI text (or JSON when the first non-blank character is '{') and
/// validates it. `source` names the document in error messages; relative
/// paths are resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>",
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets one "section.key" (or top-level "key") as if it appeared in a config
/// file; unknown keys and malformed values raise ConfigError naming `source`.
/// Call validate_config afterwards.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                   const std::string& source);

/// Checks value ranges, cross-key constraints and that referenced files exist.
void validate_config(const ExperimentConfig& cfg, const std::string& source = "<config>");

/// Fully resolved config in the INI grammar; parsing it back reproduces the same text.
std::string to_ini(const ExperimentConfig& cfg);

/// Loads and partitions the configured dataset.
FederationData build_federation(const ExperimentConfig& cfg);

/// Directory holding the bundled mnist-small IDX files (WAFL_DATA_DIR overrides).
std::filesystem::path default_data_dir();

}  // namespace wafl
