#include "wafl/model.hpp"

#include <cmath>
#include <fstream>

#include "wafl/error.hpp"

namespace wafl {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstLayer = Eigen::Map<const RowMat>;
using Layer = Eigen::Map<RowMat>;

struct Pass {
  std::vector<Vec> pre;   // z_l for every layer
  std::vector<Vec> post;  // a_0 = x, a_l = act(z_{l-1}); the output layer stays linear
};

double activate(Activation act, double z) {
  if (act == Activation::Tanh) return std::tanh(z);
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double activate_slope(Activation act, double z, double a) {
  if (act == Activation::Tanh) return 1.0 - a * a;
  return 1.0 / (1.0 + std::exp(-z));
}

void check_inputs(const ModelSpec& spec, const ModelParams& params, const Vec& x) {
  if (params.theta.size() != static_cast<Eigen::Index>(spec.param_count())) {
    throw InvalidArgument("dimension mismatch: theta has " + std::to_string(params.theta.size()) +
                          " entries, spec needs " + std::to_string(spec.param_count()));
  }
  if (x.size() != spec.feature_dim) {
    throw InvalidArgument("dimension mismatch: x has " + std::to_string(x.size()) + " features, spec needs " +
                          std::to_string(spec.feature_dim));
  }
}

void check_label(const ModelSpec& spec, double y, LossKind kind) {
  if (kind == LossKind::CrossEntropy) {
    if (spec.num_classes < 2) throw InvalidArgument("CrossEntropy needs at least 2 classes");
    if (y != std::floor(y) || y < 0 || y >= spec.num_classes) {
      throw InvalidArgument("CrossEntropy needs a class label in [0, num_classes)");
    }
  } else if (spec.num_classes != 1) {
    throw InvalidArgument("Square loss needs a scalar-output model (num_classes = 1)");
  }
}

Pass run_forward(const ModelSpec& spec, const Vec& theta, const Vec& x) {
  const auto widths = spec.widths();
  const std::size_t layers = widths.size() - 1;
  Pass pass;
  pass.post.push_back(x);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    ConstLayer w(theta.data() + offset, out, in + 1);
    Vec z = w.leftCols(in) * pass.post.back() + w.col(in);
    offset += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
    if (l + 1 < layers) {
      Vec a(z.size());
      for (Eigen::Index k = 0; k < z.size(); ++k) a[k] = activate(spec.activation, z[k]);
      pass.pre.push_back(std::move(z));
      pass.post.push_back(std::move(a));
    } else {
      pass.pre.push_back(std::move(z));
    }
  }
  return pass;
}

// Data term of the loss and its derivative with respect to the output layer.
double output_loss(const Vec& out, double y, LossKind kind, Vec* delta) {
  if (kind == LossKind::Square) {
    const double r = out[0] - y;
    if (delta) *delta = Vec::Constant(1, r);
    return 0.5 * r * r;
  }
  const double lse = log_sum_exp(out.data(), static_cast<std::size_t>(out.size()));
  const auto label = static_cast<Eigen::Index>(y);
  if (delta) {
    *delta = (out.array() - lse).exp().matrix();
    (*delta)[label] -= 1.0;
  }
  return lse - out[label];
}

double weight_penalty(const ModelSpec& spec, const Vec& theta) {
  const auto widths = spec.widths();
  std::size_t offset = 0;
  double total = 0.0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    ConstLayer w(theta.data() + offset, out, in + 1);
    total += w.leftCols(in).squaredNorm();
    offset += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
  }
  return 0.5 * spec.l2_reg * total;
}

// Backpropagates `delta` (d loss / d output); fills whichever gradients are requested.
void backward(const ModelSpec& spec, const Vec& theta, const Pass& pass, Vec delta, Vec* g_theta, Vec* g_x) {
  const auto widths = spec.widths();
  const std::size_t layers = widths.size() - 1;
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(widths[l + 1]) * static_cast<std::size_t>(widths[l] + 1);
  }
  if (g_theta) g_theta->setZero(theta.size());
  for (std::size_t l = layers; l-- > 0;) {
    const int in = widths[l];
    const int out = widths[l + 1];
    ConstLayer w(theta.data() + offsets[l], out, in + 1);
    if (g_theta) {
      Layer gw(g_theta->data() + offsets[l], out, in + 1);
      gw.leftCols(in).noalias() = delta * pass.post[l].transpose();
      gw.col(in) = delta;
    }
    if (l == 0 && !g_x) break;
    Vec back = w.leftCols(in).transpose() * delta;
    if (l == 0) {
      *g_x = std::move(back);
      break;
    }
    const Vec& z = pass.pre[l - 1];
    const Vec& a = pass.post[l];
    for (Eigen::Index k = 0; k < back.size(); ++k) back[k] *= activate_slope(spec.activation, z[k], a[k]);
    delta = std::move(back);
  }
}

void add_weight_decay(const ModelSpec& spec, const Vec& theta, Vec& g) {
  const auto widths = spec.widths();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    ConstLayer w(theta.data() + offset, out, in + 1);
    Layer gw(g.data() + offset, out, in + 1);
    gw.leftCols(in) += spec.l2_reg * w.leftCols(in);
    offset += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
  }
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::MLR ? "mlr" : "mlp"; }
std::string to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "softplus"; }
std::string to_string(LossKind kind) { return kind == LossKind::CrossEntropy ? "cross_entropy" : "square"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "mlr") return ModelKind::MLR;
  if (text == "mlp") return ModelKind::MLP;
  throw InvalidArgument("unknown model kind '" + text + "' (expected mlr or mlp)");
}

Activation parse_activation(const std::string& text) {
  if (text == "tanh") return Activation::Tanh;
  if (text == "softplus") return Activation::Softplus;
  throw InvalidArgument("unknown activation '" + text + "' (expected tanh or softplus)");
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "cross_entropy") return LossKind::CrossEntropy;
  if (text == "square") return LossKind::Square;
  throw InvalidArgument("unknown loss '" + text + "' (expected cross_entropy or square)");
}

ModelSpec ModelSpec::mlr(int feature_dim, int num_classes, double l2_reg) {
  ModelSpec s;
  s.kind = ModelKind::MLR;
  s.feature_dim = feature_dim;
  s.num_classes = num_classes;
  s.l2_reg = l2_reg;
  return s;
}

ModelSpec ModelSpec::mlp(int feature_dim, int num_classes, std::vector<int> hidden, double l2_reg,
                         Activation act) {
  ModelSpec s;
  s.kind = ModelKind::MLP;
  s.feature_dim = feature_dim;
  s.num_classes = num_classes;
  s.hidden_dims = std::move(hidden);
  s.l2_reg = l2_reg;
  s.activation = act;
  return s;
}

std::vector<int> ModelSpec::widths() const {
  std::vector<int> w{feature_dim};
  if (kind == ModelKind::MLP) w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
  w.push_back(num_classes);
  return w;
}

std::size_t ModelSpec::param_count() const {
  const auto w = widths();
  std::size_t d = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    d += static_cast<std::size_t>(w[l + 1]) * static_cast<std::size_t>(w[l] + 1);
  }
  return d;
}

void ModelSpec::validate() const {
  if (feature_dim < 1) throw InvalidArgument("model feature_dim must be >= 1");
  if (num_classes < 1) throw InvalidArgument("model num_classes must be >= 1");
  if (!(l2_reg >= 0.0)) throw InvalidArgument("model l2_reg must be nonnegative");
  if (kind == ModelKind::MLR && !hidden_dims.empty()) throw InvalidArgument("MLR takes no hidden layers");
  if (kind == ModelKind::MLP && hidden_dims.empty()) throw InvalidArgument("MLP needs at least one hidden layer");
  for (int h : hidden_dims) {
    if (h < 1) throw InvalidArgument("hidden layer widths must be >= 1");
  }
}

ModelParams init_params(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ModelParams p{Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  if (spec.kind == ModelKind::MLR) return p;
  const auto widths = spec.widths();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    Layer w(p.theta.data() + offset, out, in + 1);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    offset += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
  }
  return p;
}

Vec forward(const ModelSpec& spec, const ModelParams& params, const Vec& x) {
  check_inputs(spec, params, x);
  return run_forward(spec, params.theta, x).pre.back();
}

double loss(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind) {
  check_inputs(spec, params, x);
  check_label(spec, y, kind);
  const Pass pass = run_forward(spec, params.theta, x);
  double value = output_loss(pass.pre.back(), y, kind, nullptr);
  if (kind == LossKind::CrossEntropy && spec.l2_reg > 0.0) value += weight_penalty(spec, params.theta);
  return value;
}

Vec grad_theta(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind) {
  check_inputs(spec, params, x);
  check_label(spec, y, kind);
  const Pass pass = run_forward(spec, params.theta, x);
  Vec delta;
  output_loss(pass.pre.back(), y, kind, &delta);
  Vec g;
  backward(spec, params.theta, pass, std::move(delta), &g, nullptr);
  if (kind == LossKind::CrossEntropy && spec.l2_reg > 0.0) add_weight_decay(spec, params.theta, g);
  return g;
}

double loss_and_grad_input(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y,
                           LossKind kind, Vec& grad_x) {
  check_inputs(spec, params, x);
  check_label(spec, y, kind);
  const Pass pass = run_forward(spec, params.theta, x);
  Vec delta;
  double value = output_loss(pass.pre.back(), y, kind, &delta);
  backward(spec, params.theta, pass, std::move(delta), nullptr, &grad_x);
  if (kind == LossKind::CrossEntropy && spec.l2_reg > 0.0) value += weight_penalty(spec, params.theta);
  return value;
}

Vec grad_input(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind) {
  Vec g;
  loss_and_grad_input(spec, params, x, y, kind, g);
  return g;
}

double grad_label_square(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y) {
  check_inputs(spec, params, x);
  check_label(spec, y, LossKind::Square);
  return -(run_forward(spec, params.theta, x).pre.back()[0] - y);
}

int predict(const ModelSpec& spec, const ModelParams& params, const Vec& x) {
  const Vec out = forward(spec, params, x);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < out.size(); ++k) {
    if (out[k] > out[best]) best = k;
  }
  return static_cast<int>(best);
}

double accuracy(const ModelSpec& spec, const ModelParams& params, const Examples& examples) {
  if (examples.empty()) throw InvalidArgument("accuracy of an empty example list");
  std::size_t correct = 0;
  for (const auto& z : examples) {
    if (predict(spec, params, z.x) == z.label()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double mean_loss(const ModelSpec& spec, const ModelParams& params, const Examples& examples, LossKind kind) {
  if (examples.empty()) throw InvalidArgument("mean loss of an empty example list");
  double total = 0.0;
  for (const auto& z : examples) total += loss(spec, params, z, kind);
  return total / static_cast<double>(examples.size());
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},     {"feature_dim", spec.feature_dim},
          {"num_classes", spec.num_classes},  {"hidden_dims", spec.hidden_dims},
          {"l2_reg", spec.l2_reg},            {"activation", to_string(spec.activation)}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.kind = parse_model_kind(j.at("kind").get<std::string>());
  spec.feature_dim = j.at("feature_dim").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  spec.l2_reg = j.at("l2_reg").get<double>();
  spec.activation = parse_activation(j.at("activation").get<std::string>());
  spec.validate();
  return spec;
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["spec"] = spec_to_json(spec);
  j["theta"] = std::vector<double>(params.theta.data(), params.theta.data() + params.theta.size());
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
}

std::pair<ModelSpec, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  const auto j = nlohmann::json::parse(in);
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw Error("unsupported checkpoint format_version in " + path.string());
  }
  ModelSpec spec = spec_from_json(j.at("spec"));
  const auto theta = j.at("theta").get<std::vector<double>>();
  ModelParams params{Eigen::Map<const Vec>(theta.data(), static_cast<Eigen::Index>(theta.size()))};
  if (params.theta.size() != static_cast<Eigen::Index>(spec.param_count())) {
    throw Error("checkpoint theta length does not match its spec in " + path.string());
  }
  return {spec, params};
}

}  // namespace wafl
