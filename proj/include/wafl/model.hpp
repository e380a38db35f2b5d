#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wafl/core_math.hpp"
#include "wafl/data.hpp"

namespace wafl {

enum class ModelKind { MLR, MLP };
enum class Activation { Tanh, Softplus };
enum class LossKind { CrossEntropy, Square };

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
std::string to_string(LossKind kind);
ModelKind parse_model_kind(const std::string& text);
Activation parse_activation(const std::string& text);
LossKind parse_loss_kind(const std::string& text);

/// Architecture of h_theta. Parameters are laid out layer by layer; each layer
/// is an out x (in + 1) row-major block whose last column is the bias.
/// MLR is the zero-hidden-layer case, so d = (feature_dim + 1) * num_classes.
/// `num_classes` is the output width: 1 for scalar regression with Square loss.
struct ModelSpec {
  ModelKind kind = ModelKind::MLR;
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<int> hidden_dims;  // MLP only
  double l2_reg = 1e-4;
  Activation activation = Activation::Tanh;

  static ModelSpec mlr(int feature_dim, int num_classes, double l2_reg = 1e-4);
  static ModelSpec mlp(int feature_dim, int num_classes, std::vector<int> hidden, double l2_reg = 1e-4,
                       Activation act = Activation::Tanh);

  /// Layer widths including input and output.
  std::vector<int> widths() const;
  std::size_t param_count() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ModelParams {
  Vec theta;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.theta.size() == b.theta.size() && a.theta == b.theta;
  }
};

/// Zeros for MLR; Glorot-uniform weights and zero biases for MLP.
ModelParams init_params(const ModelSpec& spec, RngStream& rng);

/// CrossEntropy: -log softmax(f(x))[y] + (l2_reg / 2) ||W||^2 over weight
/// entries (biases excluded). Square: (1/2) (f(x) - y)^2, scalar output only.
double loss(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind);
Vec grad_theta(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind);
Vec grad_input(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y, LossKind kind);

/// Loss and input gradient from one forward/backward pass.
double loss_and_grad_input(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y,
                           LossKind kind, Vec& grad_x);

/// Derivative of the Square loss in the label, -(f(x) - y).
double grad_label_square(const ModelSpec& spec, const ModelParams& params, const Vec& x, double y);

inline double loss(const ModelSpec& s, const ModelParams& p, const LabeledExample& z, LossKind k) {
  return loss(s, p, z.x, z.y, k);
}
inline Vec grad_theta(const ModelSpec& s, const ModelParams& p, const LabeledExample& z, LossKind k) {
  return grad_theta(s, p, z.x, z.y, k);
}
inline Vec grad_input(const ModelSpec& s, const ModelParams& p, const LabeledExample& z, LossKind k) {
  return grad_input(s, p, z.x, z.y, k);
}

/// Network output (logits for classification).
Vec forward(const ModelSpec& spec, const ModelParams& params, const Vec& x);

/// argmax of the logits; ties go to the lowest class index.
int predict(const ModelSpec& spec, const ModelParams& params, const Vec& x);
/// Fraction classified correctly. Throws on an empty list.
double accuracy(const ModelSpec& spec, const ModelParams& params, const Examples& examples);
/// Mean loss over `examples`.
double mean_loss(const ModelSpec& spec, const ModelParams& params, const Examples& examples, LossKind kind);

// Checkpoints: {"format_version": 1, "spec": {...}, "theta": [...]}.
inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params);
std::pair<ModelSpec, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace wafl
