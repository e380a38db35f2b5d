#include "wafl/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wafl/error.hpp"

namespace wafl {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RngStream::RngStream(std::uint64_t root_seed, std::string_view tag)
    : root_seed_(root_seed),
      tag_(tag),
      engine_(splitmix64(splitmix64(root_seed) ^ hash_tag(tag))) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * scale;
  has_spare_normal_ = true;
  return u * scale;
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n == 0) throw InvalidArgument("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection sampling on the largest multiple of n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = 0;
  do {
    draw = engine_();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % bound);
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle(idx);
  return idx;
}

RngStream derive_stream(std::uint64_t root_seed, std::string_view tag) {
  return RngStream(root_seed, tag);
}

bool is_probability_vector(const Vec& v, double tol) {
  if (v.size() == 0) return false;
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0) return false;
    total += v[i];
  }
  return std::abs(total - 1.0) <= tol;
}

ProbabilityVector::ProbabilityVector(Vec values) : values_(std::move(values)) {
  if (!is_probability_vector(values_)) {
    throw InvalidArgument("not a probability vector (entries must be >= 0 and sum to 1)");
  }
}

ProbabilityVector ProbabilityVector::uniform(std::size_t m) {
  if (m == 0) throw InvalidArgument("uniform weights need at least one entry");
  return ProbabilityVector(Vec::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m)));
}

ProbabilityVector ProbabilityVector::from_weights(const Vec& weights) {
  const double total = ordered_sum(weights);
  if (weights.size() == 0 || !(total > 0.0) || !std::isfinite(total) || weights.minCoeff() < 0.0) {
    throw InvalidArgument("weights must be nonnegative with a positive finite sum");
  }
  return ProbabilityVector(weights / total);
}

ProbabilityVector project_simplex(const Vec& v) {
  if (v.size() == 0) throw InvalidArgument("project_simplex: empty vector");
  if (!v.allFinite()) throw InvalidArgument("non-finite vector");
  if (is_probability_vector(v, 1e-12)) return ProbabilityVector(v);

  std::vector<double> u(v.data(), v.data() + v.size());
  std::stable_sort(u.begin(), u.end(), std::greater<>());
  double prefix = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    prefix += u[j];
    const double candidate = (prefix - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  Vec w = (v.array() - theta).max(0.0).matrix();
  // Remove the last ulp-level drift so the result satisfies the simplex check.
  const double total = ordered_sum(w);
  if (total > 0.0) w /= total;
  return ProbabilityVector(std::move(w));
}

Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double plus = f(probe);
    probe[j] = x[j] - h;
    const double minus = f(probe);
    probe[j] = x[j];
    g[j] = (plus - minus) / (2.0 * h);
  }
  return g;
}

double relative_error(const Vec& a, const Vec& b, double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

double ordered_sum(const Vec& v) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += v[i];
  return total;
}

double log_sum_exp(const double* data, std::size_t n, std::size_t stride) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, data[i * stride]);
  if (peak == -std::numeric_limits<double>::infinity()) return peak;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(data[i * stride] - peak);
  return peak + std::log(acc);
}

}  // namespace wafl
