#pragma once

#include <filesystem>

#include "wafl/data.hpp"
#include "wafl/model.hpp"

namespace wafl::testing {

inline const std::filesystem::path kMnistImages =
    std::filesystem::path(WAFL_DATA_DIR) / "mnist-small-images-idx3-ubyte";
inline const std::filesystem::path kMnistLabels =
    std::filesystem::path(WAFL_DATA_DIR) / "mnist-small-labels-idx1-ubyte";

/// Full-batch gradient descent from zero, used to obtain trained models in tests.
inline ModelParams train_gd(const ModelSpec& spec, const Examples& data, int iters, double lr,
                            LossKind kind = LossKind::CrossEntropy) {
  ModelParams p{Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  for (int it = 0; it < iters; ++it) {
    Vec g = Vec::Zero(p.theta.size());
    for (const auto& z : data) g += grad_theta(spec, p, z, kind);
    p.theta -= lr / static_cast<double>(data.size()) * g;
  }
  return p;
}

inline Vec random_normal(Eigen::Index n, RngStream& rng, double scale = 1.0) {
  Vec v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace wafl::testing
