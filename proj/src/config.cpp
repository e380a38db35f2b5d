#include "wafl/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace wafl {
namespace {

namespace fs = std::filesystem;

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;

  std::string name() const { return section.empty() ? key : section + "." + key; }
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<Entry> parse_ini(const std::string& text, const std::string& source) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(source, line, "", "unterminated section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      if (section.empty()) throw ConfigError(source, line, "", "empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "", "expected 'key = value'");
    Entry e{section, trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)), line};
    if (e.key.empty()) throw ConfigError(source, line, "", "missing key before '='");
    const auto hash = e.value.find(" #");
    if (hash != std::string::npos) e.value = trim(std::string_view(e.value).substr(0, hash));
    if (e.value.size() >= 2 && e.value.front() == '"' && e.value.back() == '"') {
      e.value = e.value.substr(1, e.value.size() - 2);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_null()) return "none";
  throw InvalidArgument("expected a scalar");
}

std::vector<Entry> parse_json(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source, 0, "", std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source, 0, "", "top level must be an object");
  std::vector<Entry> entries;
  auto add = [&](const std::string& section, const std::string& key, const nlohmann::json& v) {
    Entry e{section, key, {}, 0};
    try {
      if (v.is_array()) {
        std::string joined;
        for (std::size_t i = 0; i < v.size(); ++i) joined += (i ? "," : "") + json_scalar(v[i]);
        e.value = joined;
      } else {
        e.value = json_scalar(v);
      }
    } catch (const InvalidArgument&) {
      throw ConfigError(source, 0, e.name(), "expected a scalar or an array of scalars");
    }
    entries.push_back(std::move(e));
  };
  for (const auto& [name, value] : doc.items()) {
    if (value.is_object()) {
      for (const auto& [key, v] : value.items()) add(name, key, v);
    } else {
      add("", name, value);
    }
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Typed value parsing

struct Reader {
  const Entry& e;
  const std::string& source;

  [[noreturn]] void fail(const std::string& message) const { throw ConfigError(source, e.line, e.name(), message); }

  double real(const std::string& text) const {
    double v = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) fail("expected a number, got '" + text + "'");
    return v;
  }
  double real() const { return real(e.value); }

  long long integer(const std::string& text) const {
    long long v = 0;
    const auto* last = text.data() + text.size();
    const auto res = std::from_chars(text.data(), last, v);
    if (res.ec != std::errc() || res.ptr != last) fail("expected an integer, got '" + text + "'");
    return v;
  }
  int integer() const {
    const auto v = integer(e.value);
    if (v < -2147483647LL || v > 2147483647LL) fail("integer out of range");
    return static_cast<int>(v);
  }
  std::size_t count() const {
    const auto v = integer(e.value);
    if (v < 0) fail("expected a nonnegative integer");
    return static_cast<std::size_t>(v);
  }
  std::uint64_t u64() const {
    std::uint64_t v = 0;
    const auto* last = e.value.data() + e.value.size();
    const auto res = std::from_chars(e.value.data(), last, v);
    if (res.ec != std::errc() || res.ptr != last) fail("expected an unsigned integer, got '" + e.value + "'");
    return v;
  }
  bool boolean() const {
    if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
    if (e.value == "false" || e.value == "no" || e.value == "0") return false;
    fail("expected true or false, got '" + e.value + "'");
  }
  std::vector<double> reals() const {
    std::vector<double> out;
    for (const auto& item : split_list(e.value)) out.push_back(real(item));
    return out;
  }
  std::vector<int> integers() const {
    std::vector<int> out;
    for (const auto& item : split_list(e.value)) out.push_back(static_cast<int>(integer(item)));
    return out;
  }
  template <typename F>
  auto parsed(F&& parse) const {
    try {
      return parse(e.value);
    } catch (const InvalidArgument& err) {
      fail(err.what());
    }
  }
};

using Setter = std::function<void(ExperimentConfig&, const Reader&, const fs::path&)>;

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

WeightsMode parse_weights_mode(const std::string& text) {
  if (text == "data") return WeightsMode::DataProportional;
  if (text == "uniform") return WeightsMode::Uniform;
  if (text == "explicit") return WeightsMode::Explicit;
  throw InvalidArgument("unknown weights mode '" + text + "' (expected data, uniform or explicit)");
}

std::string weights_mode_name(WeightsMode mode) {
  switch (mode) {
    case WeightsMode::DataProportional: return "data";
    case WeightsMode::Uniform: return "uniform";
    case WeightsMode::Explicit: return "explicit";
  }
  return "data";
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](auto& c, const Reader& r, auto&) { c.seed = r.u64(); }},
      {"workers", [](auto& c, const Reader& r, auto&) { c.workers = r.integer(); }},
      {"out", [](auto& c, const Reader& r, auto& base) { c.out = resolve(base, r.e.value); }},

      {"dataset.kind", [](auto& c, const Reader& r, auto&) { c.dataset.kind = r.e.value; }},
      {"dataset.images", [](auto& c, const Reader& r, auto& base) { c.dataset.images = resolve(base, r.e.value); }},
      {"dataset.labels", [](auto& c, const Reader& r, auto& base) { c.dataset.labels = resolve(base, r.e.value); }},
      {"dataset.path", [](auto& c, const Reader& r, auto& base) { c.dataset.path = resolve(base, r.e.value); }},
      {"dataset.limit",
       [](auto& c, const Reader& r, auto&) {
         if (r.e.value == "none") {
           c.dataset.limit.reset();
         } else {
           c.dataset.limit = r.count();
         }
       }},
      {"dataset.num_classes", [](auto& c, const Reader& r, auto&) { c.dataset.num_classes = r.integer(); }},
      {"dataset.feature_dim", [](auto& c, const Reader& r, auto&) { c.dataset.feature_dim = r.integer(); }},
      {"dataset.n", [](auto& c, const Reader& r, auto&) { c.dataset.n = r.count(); }},
      {"dataset.separation", [](auto& c, const Reader& r, auto&) { c.dataset.separation = r.real(); }},
      {"dataset.clients", [](auto& c, const Reader& r, auto&) { c.dataset.clients = r.integer(); }},
      {"dataset.labels_per_client", [](auto& c, const Reader& r, auto&) { c.dataset.labels_per_client = r.integer(); }},
      {"dataset.size_dispersion", [](auto& c, const Reader& r, auto&) { c.dataset.size_dispersion = r.real(); }},

      {"model.kind", [](auto& c, const Reader& r, auto&) { c.model_kind = r.parsed(parse_model_kind); }},
      {"model.hidden", [](auto& c, const Reader& r, auto&) { c.hidden_dims = r.integers(); }},
      {"model.activation", [](auto& c, const Reader& r, auto&) { c.activation = r.parsed(parse_activation); }},
      {"model.l2_reg", [](auto& c, const Reader& r, auto&) { c.l2_reg = r.real(); }},
      {"model.loss", [](auto& c, const Reader& r, auto&) { c.loss = r.parsed(parse_loss_kind); }},

      {"train.variant", [](auto& c, const Reader& r, auto&) { c.variant = r.parsed(parse_variant_kind); }},
      {"train.rounds", [](auto& c, const Reader& r, auto&) { c.train.rounds = r.integer(); }},
      {"train.local_steps", [](auto& c, const Reader& r, auto&) { c.train.local_steps = r.integer(); }},
      {"train.eta", [](auto& c, const Reader& r, auto&) { c.train.eta = r.real(); }},
      {"train.clients_per_round", [](auto& c, const Reader& r, auto&) { c.train.clients_per_round = r.integer(); }},
      {"train.batch_size", [](auto& c, const Reader& r, auto&) { c.train.batch_size = r.integer(); }},
      {"train.weights", [](auto& c, const Reader& r, auto&) { c.train.weights_mode = r.parsed(parse_weights_mode); }},
      {"train.explicit_weights",
       [](auto& c, const Reader& r, auto&) {
         const auto w = r.reals();
         c.train.explicit_weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
       }},
      {"train.lambda_lr", [](auto& c, const Reader& r, auto&) { c.train.variant.lambda_lr = r.real(); }},
      {"train.eval_every", [](auto& c, const Reader& r, auto&) { c.train.eval.every = r.integer(); }},
      {"train.shift_eval", [](auto& c, const Reader& r, auto&) { c.shift_eval = r.boolean(); }},
      {"train.shift_every", [](auto& c, const Reader& r, auto&) { c.train.eval.shift_every = r.integer(); }},
      {"train.rho_sample_cap", [](auto& c, const Reader& r, auto&) { c.train.eval.rho_sample_cap = r.count(); }},
      {"train.objective_sample_cap",
       [](auto& c, const Reader& r, auto&) { c.train.eval.objective_sample_cap = r.count(); }},

      {"surrogate.gamma", [](auto& c, const Reader& r, auto&) { c.surrogate.gamma = r.real(); }},
      {"surrogate.kappa", [](auto& c, const Reader& r, auto&) { c.surrogate.kappa = r.real(); }},
      {"surrogate.ascent_steps", [](auto& c, const Reader& r, auto&) { c.surrogate.ascent_steps = r.integer(); }},
      {"surrogate.ascent_lr", [](auto& c, const Reader& r, auto&) { c.surrogate.ascent_lr = r.real(); }},
      {"surrogate.ascent_tol", [](auto& c, const Reader& r, auto&) { c.surrogate.ascent_tol = r.real(); }},
      {"surrogate.p", [](auto& c, const Reader& r, auto&) { c.surrogate.wasserstein_p = r.integer(); }},

      {"attack.epsilon", [](auto& c, const Reader& r, auto&) { c.attack.epsilon = r.real(); }},
      {"attack.alpha", [](auto& c, const Reader& r, auto&) { c.attack.alpha = r.real(); }},
      {"attack.steps", [](auto& c, const Reader& r, auto&) { c.attack.steps = r.integer(); }},
      {"attack.clip",
       [](auto& c, const Reader& r, auto&) {
         if (r.e.value == "none") {
           c.attack.clip.reset();
           return;
         }
         const auto box = r.reals();
         if (box.size() != 2) r.fail("expected 'none' or 'lo, hi'");
         c.attack.clip = ClipBox{box[0], box[1]};
       }},
      {"attack.attacked_fraction", [](auto& c, const Reader& r, auto&) { c.attack.attacked_fraction = r.real(); }},
      {"attack.seed", [](auto& c, const Reader& r, auto&) { c.attack.seed = r.u64(); }},

      {"sweep.gamma_grid", [](auto& c, const Reader& r, auto&) { c.sweep.gamma_grid = r.reals(); }},
      {"sweep.fractions", [](auto& c, const Reader& r, auto&) { c.sweep.fractions = r.reals(); }},
      {"sweep.variants",
       [](auto& c, const Reader& r, auto&) {
         c.sweep.variants.clear();
         for (const auto& item : split_list(r.e.value)) {
           try {
             c.sweep.variants.push_back(parse_variant_kind(item));
           } catch (const InvalidArgument& err) {
             r.fail(err.what());
           }
         }
       }},
      {"sweep.with_attack", [](auto& c, const Reader& r, auto&) { c.sweep.with_attack = r.boolean(); }},
      {"sweep.rho_sample_cap", [](auto& c, const Reader& r, auto&) { c.sweep.rho_sample_cap = r.count(); }},

      {"domain.sources",
       [](auto& c, const Reader& r, auto& base) {
         c.domain.sources.clear();
         for (const auto& item : split_list(r.e.value)) c.domain.sources.push_back(resolve(base, item));
       }},
      {"domain.target", [](auto& c, const Reader& r, auto& base) { c.domain.target = resolve(base, r.e.value); }},
      {"domain.subsample", [](auto& c, const Reader& r, auto&) { c.domain.subsample = r.count(); }},
      {"domain.entropic_reg", [](auto& c, const Reader& r, auto&) { c.domain.entropic_reg = r.real(); }},
      {"domain.marginal_tol", [](auto& c, const Reader& r, auto&) { c.domain.marginal_tol = r.real(); }},
  };
  return table;
}

using LineMap = std::map<std::string, int>;

void validate_impl(const ExperimentConfig& c, const std::string& source, const LineMap& lines) {
  auto fail = [&](const std::string& key, const std::string& message) {
    const auto it = lines.find(key);
    throw ConfigError(source, it == lines.end() ? 0 : it->second, key, message);
  };
  auto check = [&](bool ok, const std::string& key, const std::string& message) {
    if (!ok) fail(key, message);
  };
  auto require_file = [&](const fs::path& p, const std::string& key) {
    if (p.empty()) fail(key, "missing required path");
    if (!fs::exists(p)) fail(key, "file not found: " + p.string());
  };

  check(c.workers >= 1, "workers", "must be >= 1");
  const auto& d = c.dataset;
  if (d.kind == "synthetic") {
    check(d.num_classes >= 2, "dataset.num_classes", "must be >= 2");
    check(d.feature_dim >= 1, "dataset.feature_dim", "must be >= 1");
    check(d.n >= 1, "dataset.n", "must be >= 1");
    check(d.separation >= 0.0, "dataset.separation", "must be nonnegative");
  } else if (d.kind == "idx") {
    require_file(d.images, "dataset.images");
    require_file(d.labels, "dataset.labels");
  } else if (d.kind == "csv") {
    require_file(d.path, "dataset.path");
  } else {
    fail("dataset.kind", "unknown dataset kind '" + d.kind + "' (expected synthetic, idx or csv)");
  }
  check(d.clients >= 1, "dataset.clients", "must be >= 1");
  check(d.labels_per_client >= 1, "dataset.labels_per_client", "must be >= 1");
  check(d.size_dispersion >= 0.0, "dataset.size_dispersion", "must be nonnegative");
  if (d.kind == "synthetic") {
    check(d.labels_per_client <= d.num_classes, "dataset.labels_per_client", "must not exceed dataset.num_classes");
  }

  check(c.model_kind == ModelKind::MLR || !c.hidden_dims.empty(), "model.hidden", "an mlp needs hidden widths");
  for (int h : c.hidden_dims) check(h >= 1, "model.hidden", "widths must be >= 1");
  check(c.l2_reg >= 0.0, "model.l2_reg", "must be nonnegative");

  const auto& t = c.train;
  check(t.rounds >= 1, "train.rounds", "must be >= 1");
  check(t.local_steps >= 1, "train.local_steps", "must be >= 1");
  check(t.eta >= 0.0, "train.eta", "must be nonnegative");
  check(t.clients_per_round >= 1 && t.clients_per_round <= d.clients, "train.clients_per_round",
        "must be in [1, dataset.clients]");
  check(t.batch_size >= 1, "train.batch_size", "must be >= 1");
  check(t.variant.lambda_lr >= 0.0, "train.lambda_lr", "must be nonnegative");
  check(t.eval.every >= 0, "train.eval_every", "must be >= 0");
  check(t.eval.shift_every >= 0, "train.shift_every", "must be >= 0");
  if (t.weights_mode == WeightsMode::Explicit) {
    check(t.explicit_weights.size() == d.clients, "train.explicit_weights", "needs one weight per client");
    check(is_probability_vector(t.explicit_weights), "train.explicit_weights", "must be nonnegative and sum to 1");
  }

  const auto& s = c.surrogate;
  check(s.gamma > 0.0, "surrogate.gamma", "must be positive");
  check(s.kappa > 0.0, "surrogate.kappa", "must be positive (or inf)");
  check(s.ascent_steps >= 1, "surrogate.ascent_steps", "must be >= 1");
  check(s.ascent_lr >= 0.0 && std::isfinite(s.ascent_lr), "surrogate.ascent_lr", "must be finite and >= 0");
  check(s.ascent_tol >= 0.0, "surrogate.ascent_tol", "must be nonnegative");
  check(s.wasserstein_p == 1 || s.wasserstein_p == 2, "surrogate.p", "must be 1 or 2");

  const auto& a = c.attack;
  check(a.epsilon >= 0.0, "attack.epsilon", "must be nonnegative");
  check(a.steps >= 0, "attack.steps", "must be >= 0");
  check(a.steps == 0 || a.alpha > 0.0, "attack.alpha", "must be positive when attack.steps >= 1");
  check(!a.clip || a.clip->lo < a.clip->hi, "attack.clip", "lo must be below hi");
  check(a.attacked_fraction >= 0.0 && a.attacked_fraction <= 1.0, "attack.attacked_fraction", "must lie in [0, 1]");

  check(!c.sweep.gamma_grid.empty(), "sweep.gamma_grid", "must not be empty");
  for (std::size_t i = 0; i < c.sweep.gamma_grid.size(); ++i) {
    check(c.sweep.gamma_grid[i] > 0.0, "sweep.gamma_grid", "values must be positive");
    check(i == 0 || c.sweep.gamma_grid[i] > c.sweep.gamma_grid[i - 1], "sweep.gamma_grid", "must be ascending");
  }
  for (double f : c.sweep.fractions) check(f >= 0.0 && f <= 1.0, "sweep.fractions", "values must lie in [0, 1]");
  check(!c.sweep.variants.empty(), "sweep.variants", "must not be empty");
  check(c.sweep.rho_sample_cap >= 1, "sweep.rho_sample_cap", "must be >= 1");

  for (const auto& p : c.domain.sources) require_file(p, "domain.sources");
  if (!c.domain.target.empty()) require_file(c.domain.target, "domain.target");
  check(c.domain.subsample >= 2, "domain.subsample", "must be >= 2");
  check(c.domain.entropic_reg > 0.0, "domain.entropic_reg", "must be positive");
  check(c.domain.marginal_tol > 0.0, "domain.marginal_tol", "must be positive");
}

std::string list_text(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + format_double(xs[i]);
  return out;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& key, const std::string& message)
    : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " +
            (key.empty() ? std::string() : key + ": ") + message),
      line_(line),
      key_(key) {}

TrainConfig ExperimentConfig::train_config() const { return train_config(variant); }

TrainConfig ExperimentConfig::train_config(VariantKind kind) const {
  TrainConfig t = train;
  t.seed = seed;
  t.workers = workers;
  t.loss = loss;
  switch (kind) {
    case VariantKind::FedAvg: t.variant = AlgorithmVariant::fedavg(); break;
    case VariantKind::WAFL: t.variant = AlgorithmVariant::wafl(surrogate); break;
    case VariantKind::FedFGSM: t.variant = AlgorithmVariant::fed_fgsm(attack); break;
    case VariantKind::FedPGD: t.variant = AlgorithmVariant::fed_pgd(attack); break;
    case VariantKind::AgnosticAscent: t.variant = AlgorithmVariant::agnostic(train.variant.lambda_lr); break;
  }
  if (shift_eval) t.eval.shift = attack;
  return t;
}

ModelSpec ExperimentConfig::model_spec(int feature_dim, int num_classes) const {
  ModelSpec spec;
  spec.kind = model_kind;
  spec.feature_dim = feature_dim;
  spec.num_classes = num_classes;
  spec.hidden_dims = model_kind == ModelKind::MLP ? hidden_dims : std::vector<int>{};
  spec.l2_reg = l2_reg;
  spec.activation = activation;
  spec.validate();
  return spec;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("WAFL_DATA_DIR"); env && *env) return env;
  return WAFL_DEFAULT_DATA_DIR;
}

std::vector<std::string> preset_names() { return {"synthetic", "mnist-small"}; }

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "synthetic") {
    c.dataset = DatasetConfig{};
    c.train.rounds = 50;
    c.train.local_steps = 2;
    c.train.eta = 0.05;
    c.train.clients_per_round = 5;
    c.train.batch_size = 32;
    c.attack.clip.reset();
    c.attack.epsilon = 0.5;
    c.attack.alpha = 0.05;
    c.attack.steps = 20;
    c.attack.attacked_fraction = 0.5;
    return c;
  }
  if (name == "mnist-small") {
    c.dataset.kind = "idx";
    c.dataset.images = default_data_dir() / "mnist-small-images-idx3-ubyte";
    c.dataset.labels = default_data_dir() / "mnist-small-labels-idx1-ubyte";
    c.dataset.clients = 20;
    c.dataset.labels_per_client = 2;
    c.dataset.size_dispersion = 0.5;
    c.train.rounds = 200;
    c.train.local_steps = 2;
    c.train.eta = 0.05;
    c.train.clients_per_round = 10;
    c.train.batch_size = 64;
    c.attack = AttackConfig::mnist();
    c.attack.attacked_fraction = 0.5;
    c.surrogate.gamma = 0.5;
    return c;
  }
  throw InvalidArgument("unknown preset '" + name + "' (expected synthetic or mnist-small)");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source, const fs::path& base_dir) {
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool json = first != std::string::npos && text[first] == '{';
  const auto entries = json ? parse_json(text, source) : parse_ini(text, source);

  ExperimentConfig cfg;
  LineMap lines;
  for (const auto& e : entries) {
    if (lines.count(e.name())) {
      throw ConfigError(source, e.line, e.name(),
                        "duplicate key (first set on line " + std::to_string(lines[e.name()]) + ")");
    }
    lines[e.name()] = e.line;
  }
  for (const auto& e : entries) {
    if (e.name() != "preset") continue;
    try {
      cfg = preset_config(e.value);
    } catch (const InvalidArgument& err) {
      throw ConfigError(source, e.line, e.name(), err.what());
    }
  }
  const auto& table = setters();
  for (const auto& e : entries) {
    if (e.name() == "preset") continue;
    const auto it = table.find(e.name());
    if (it == table.end()) {
      throw ConfigError(source, e.line, e.name(), "unknown key");
    }
    it->second(cfg, Reader{e, source}, base_dir);
  }
  if (!lines.count("out")) cfg.out = resolve(base_dir, cfg.out.string());
  validate_impl(cfg, source, lines);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), 0, "", "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), fs::absolute(path).parent_path());
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                   const std::string& source) {
  const auto dot = key.find('.');
  Entry e{dot == std::string::npos ? std::string() : key.substr(0, dot),
          dot == std::string::npos ? key : key.substr(dot + 1), trim(value), 0};
  const auto& table = setters();
  const auto it = table.find(e.name());
  if (it == table.end()) throw ConfigError(source, 0, key, "unknown key");
  it->second(cfg, Reader{e, source}, {});
}

void validate_config(const ExperimentConfig& cfg, const std::string& source) { validate_impl(cfg, source, {}); }

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  auto path = [](const fs::path& p) { return p.string(); };
  if (!c.preset.empty()) o << "preset = " << c.preset << '\n';
  o << "seed = " << c.seed << '\n' << "workers = " << c.workers << '\n' << "out = " << path(c.out) << "\n\n";

  const auto& d = c.dataset;
  o << "[dataset]\nkind = " << d.kind << '\n';
  if (d.kind == "idx") {
    o << "images = " << path(d.images) << "\nlabels = " << path(d.labels) << '\n'
      << "limit = " << (d.limit ? std::to_string(*d.limit) : "none") << '\n';
  } else if (d.kind == "csv") {
    o << "path = " << path(d.path) << '\n';
  } else {
    o << "num_classes = " << d.num_classes << "\nfeature_dim = " << d.feature_dim << "\nn = " << d.n
      << "\nseparation = " << format_double(d.separation) << '\n';
  }
  o << "clients = " << d.clients << "\nlabels_per_client = " << d.labels_per_client
    << "\nsize_dispersion = " << format_double(d.size_dispersion) << "\n\n";

  o << "[model]\nkind = " << to_string(c.model_kind) << '\n';
  if (c.model_kind == ModelKind::MLP) {
    o << "hidden = ";
    for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) o << (i ? ", " : "") << c.hidden_dims[i];
    o << '\n';
  }
  o << "activation = " << to_string(c.activation) << "\nl2_reg = " << format_double(c.l2_reg)
    << "\nloss = " << to_string(c.loss) << "\n\n";

  const auto& t = c.train;
  o << "[train]\nvariant = " << to_string(c.variant) << "\nrounds = " << t.rounds
    << "\nlocal_steps = " << t.local_steps << "\neta = " << format_double(t.eta)
    << "\nclients_per_round = " << t.clients_per_round << "\nbatch_size = " << t.batch_size
    << "\nweights = " << weights_mode_name(t.weights_mode) << '\n';
  if (t.weights_mode == WeightsMode::Explicit) {
    o << "explicit_weights = "
      << list_text(std::vector<double>(t.explicit_weights.begin(), t.explicit_weights.end())) << '\n';
  }
  o << "lambda_lr = " << format_double(t.variant.lambda_lr) << "\neval_every = " << t.eval.every
    << "\nshift_eval = " << (c.shift_eval ? "true" : "false") << "\nshift_every = " << t.eval.shift_every
    << "\nrho_sample_cap = " << t.eval.rho_sample_cap << "\nobjective_sample_cap = " << t.eval.objective_sample_cap
    << "\n\n";

  const auto& s = c.surrogate;
  o << "[surrogate]\ngamma = " << format_double(s.gamma) << "\nkappa = " << format_double(s.kappa)
    << "\nascent_steps = " << s.ascent_steps << "\nascent_lr = " << format_double(s.ascent_lr)
    << "\nascent_tol = " << format_double(s.ascent_tol) << "\np = " << s.wasserstein_p << "\n\n";

  const auto& a = c.attack;
  o << "[attack]\nepsilon = " << format_double(a.epsilon) << "\nalpha = " << format_double(a.alpha)
    << "\nsteps = " << a.steps << "\nclip = "
    << (a.clip ? format_double(a.clip->lo) + ", " + format_double(a.clip->hi) : std::string("none"))
    << "\nattacked_fraction = " << format_double(a.attacked_fraction) << "\nseed = " << a.seed << "\n\n";

  o << "[sweep]\ngamma_grid = " << list_text(c.sweep.gamma_grid) << "\nfractions = " << list_text(c.sweep.fractions)
    << "\nvariants = ";
  for (std::size_t i = 0; i < c.sweep.variants.size(); ++i) o << (i ? ", " : "") << to_string(c.sweep.variants[i]);
  o << "\nwith_attack = " << (c.sweep.with_attack ? "true" : "false") << "\nrho_sample_cap = " << c.sweep.rho_sample_cap
    << "\n\n";

  o << "[domain]\n";
  if (!c.domain.sources.empty()) {
    o << "sources = ";
    for (std::size_t i = 0; i < c.domain.sources.size(); ++i) o << (i ? ", " : "") << path(c.domain.sources[i]);
    o << '\n';
  }
  if (!c.domain.target.empty()) o << "target = " << path(c.domain.target) << '\n';
  o << "subsample = " << c.domain.subsample << "\nentropic_reg = " << format_double(c.domain.entropic_reg)
    << "\nmarginal_tol = " << format_double(c.domain.marginal_tol) << '\n';
  return o.str();
}

FederationData build_federation(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  Examples examples;
  if (d.kind == "synthetic") {
    examples = gen_synthetic_mixture(d.num_classes, d.feature_dim, d.n, d.separation, cfg.seed);
  } else if (d.kind == "idx") {
    examples = load_idx(d.images, d.labels, d.limit);
  } else {
    examples = load_csv(d.path);
  }
  return partition_noniid(examples, d.clients, d.labels_per_client, d.size_dispersion, cfg.seed);
}

}  // namespace wafl
