#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace wafl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A seeded random stream identified by (root_seed, tag).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Conversions to doubles and indices are done here rather than with
/// <random> distributions, whose algorithms vary between standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::string_view tag);

  std::uint64_t root_seed() const { return root_seed_; }
  const std::string& tag() const { return tag_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Unbiased integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t root_seed_;
  std::string tag_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

RngStream derive_stream(std::uint64_t root_seed, std::string_view tag);

/// Stable 64-bit hash of a tag (FNV-1a), exposed for sub-seed derivation.
std::uint64_t hash_tag(std::string_view tag);

/// A validated point of the probability simplex.
class ProbabilityVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbabilityVector() = default;
  /// Throws InvalidArgument unless entries are >= 0 and sum to 1 within kSumTolerance.
  explicit ProbabilityVector(Vec values);

  static ProbabilityVector uniform(std::size_t m);
  /// Normalizes nonnegative weights with a positive sum.
  static ProbabilityVector from_weights(const Vec& weights);

  const Vec& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  friend bool operator==(const ProbabilityVector& a, const ProbabilityVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vec values_;
};

bool is_probability_vector(const Vec& v, double tol = ProbabilityVector::kSumTolerance);

/// Euclidean projection onto the probability simplex (sort and threshold).
/// Inputs already on the simplex (to 1e-12) are returned unchanged, so the
/// projection is exactly idempotent.
ProbabilityVector project_simplex(const Vec& v);

using ScalarFn = std::function<double(const Vec&)>;

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h per coordinate.
Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h);

/// ||a - b|| / max(||a||, ||b||, floor). The floor keeps comparisons of
/// near-zero vectors from blowing up.
double relative_error(const Vec& a, const Vec& b, double floor = 1e-8);

/// Sum in index order.
double ordered_sum(const Vec& v);

/// log(sum(exp(v))) ignoring -inf entries; -inf when all entries are -inf.
double log_sum_exp(const double* data, std::size_t n, std::size_t stride = 1);

}  // namespace wafl
