#include "wafl/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wafl/error.hpp"

namespace wafl {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vec log_masses(const Vec& masses) {
  Vec out(masses.size());
  for (Eigen::Index i = 0; i < masses.size(); ++i) out[i] = masses[i] > 0.0 ? std::log(masses[i]) : kNegInf;
  return out;
}

void check_pair(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.size() == 0 || q.size() == 0) throw InvalidArgument("optimal transport needs non-empty supports");
  if (p.dim() != q.dim()) throw InvalidArgument("optimal transport: dimension mismatch");
}

// f_i = eps log a_i - eps LSE_j((g_j - C_ij) / eps).
void update_rows(const Mat& cost, const Vec& log_a, const Vec& g, double eps, Vec& f, std::vector<double>& buf) {
  const Eigen::Index m = cost.cols();
  buf.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    if (log_a[i] == kNegInf) {
      f[i] = kNegInf;
      continue;
    }
    for (Eigen::Index j = 0; j < m; ++j) buf[static_cast<std::size_t>(j)] = (g[j] - cost(i, j)) / eps;
    f[i] = eps * (log_a[i] - log_sum_exp(buf.data(), buf.size()));
  }
}

// LSE_i((f_i - C_ij) / eps) for every column j.
Vec column_lse(const Mat& cost, const Vec& f, double eps, std::vector<double>& buf) {
  const Eigen::Index n = cost.rows();
  buf.resize(static_cast<std::size_t>(n));
  Vec out(cost.cols());
  for (Eigen::Index j = 0; j < cost.cols(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = (f[i] - cost(i, j)) / eps;
    out[j] = log_sum_exp(buf.data(), buf.size());
  }
  return out;
}

void update_cols(const Mat& cost, const Vec& log_b, const Vec& f, double eps, Vec& g, std::vector<double>& buf) {
  const Vec lse = column_lse(cost, f, eps, buf);
  for (Eigen::Index j = 0; j < cost.cols(); ++j) {
    g[j] = log_b[j] == kNegInf ? kNegInf : eps * (log_b[j] - lse[j]);
  }
}

Mat scaled_plan(const Mat& cost, const Vec& f, const Vec& g, double eps) {
  Mat plan(cost.rows(), cost.cols());
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
      const double e = f[i] + g[j];
      plan(i, j) = e == kNegInf ? 0.0 : std::exp((e - cost(i, j)) / eps);
    }
  }
  return plan;
}

// Projects a nonnegative plan onto the transport polytope of (a, b).
Mat round_to_marginals(Mat plan, const Vec& a, const Vec& b) {
  const Vec rows = plan.rowwise().sum();
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    if (rows[i] > a[i]) plan.row(i) *= a[i] / rows[i];
  }
  const Vec cols = plan.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    if (cols[j] > b[j]) plan.col(j) *= b[j] / cols[j];
  }
  const Vec err_r = a - plan.rowwise().sum();
  const Vec err_c = b - plan.colwise().sum().transpose();
  const double mass = err_r.lpNorm<1>();
  if (mass > 0.0) plan += err_r * err_c.transpose() / mass;
  return plan.cwiseMax(0.0);
}

double plan_cost(const Mat& plan, const Mat& cost) { return (plan.array() * cost.array()).sum(); }

double root(double value, int p) { return p == 1 ? value : std::sqrt(std::max(value, 0.0)); }

std::vector<double> anneal_schedule(double start, double target, bool anneal) {
  std::vector<double> eps;
  if (anneal) {
    for (double e = start; e > target; e *= 0.5) eps.push_back(e);
  }
  eps.push_back(target);
  return eps;
}

}  // namespace

DiscreteDistribution make_distribution(Mat points, Vec masses) {
  if (points.rows() != masses.size()) {
    throw InvalidArgument("distribution: masses length must equal the number of points");
  }
  if (points.rows() == 0) throw InvalidArgument("distribution needs at least one point");
  return DiscreteDistribution{std::move(points), ProbabilityVector(std::move(masses))};
}

DiscreteDistribution uniform_distribution(Mat points) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw InvalidArgument("distribution needs at least one point");
  return DiscreteDistribution{std::move(points), ProbabilityVector::uniform(n)};
}

void OTConfig::validate() const {
  if (!(entropic_reg > 0.0)) throw InvalidArgument("entropic_reg must be positive");
  if (max_iters < 1) throw InvalidArgument("max_iters must be >= 1");
  if (!(marginal_tol > 0.0)) throw InvalidArgument("marginal_tol must be positive");
  if (cost_exponent != 1 && cost_exponent != 2) throw InvalidArgument("cost exponent must be 1 or 2");
}

Mat cost_matrix(const Mat& a_points, const Mat& b_points, int p) {
  if (a_points.cols() != b_points.cols()) throw InvalidArgument("cost_matrix: dimension mismatch");
  Mat c(a_points.rows(), b_points.rows());
  for (Eigen::Index i = 0; i < a_points.rows(); ++i) {
    for (Eigen::Index j = 0; j < b_points.rows(); ++j) {
      const double sq = (a_points.row(i) - b_points.row(j)).squaredNorm();
      c(i, j) = p == 2 ? sq : std::sqrt(sq);
    }
  }
  return c;
}

std::vector<int> hungarian_assignment(const Mat& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.rows() != cost.cols()) throw InvalidArgument("hungarian_assignment needs a square matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (cols); match[j] = row assigned to column j, 1-based with 0 as sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> min_slack(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double slack = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= n; ++j) assignment[match[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

OTResult exact_ot_with_cost(const Mat& base, const ProbabilityVector& p_masses, const ProbabilityVector& q_masses) {
  if (base.rows() != static_cast<Eigen::Index>(p_masses.size()) ||
      base.cols() != static_cast<Eigen::Index>(q_masses.size())) {
    throw InvalidArgument("exact_ot_with_cost: cost matrix shape does not match the masses");
  }
  if (p_masses.size() > kExactSupportLimit || q_masses.size() > kExactSupportLimit) {
    throw InvalidArgument("exact solver limited to small instances");
  }
  // Smallest common denominator that makes every mass an integer count.
  auto counts_for = [](const Vec& masses, std::size_t denom, std::vector<std::size_t>& counts) {
    counts.assign(static_cast<std::size_t>(masses.size()), 0);
    std::size_t total = 0;
    for (Eigen::Index i = 0; i < masses.size(); ++i) {
      const double scaled = masses[i] * static_cast<double>(denom);
      const double whole = std::round(scaled);
      if (std::abs(scaled - whole) > 1e-7) return false;
      counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(whole);
      total += counts[static_cast<std::size_t>(i)];
    }
    return total == denom;
  };
  std::size_t denom = 0;
  std::vector<std::size_t> p_counts, q_counts;
  for (std::size_t d = 1; d <= kExactSupportLimit; ++d) {
    if (counts_for(p_masses.values(), d, p_counts) && counts_for(q_masses.values(), d, q_counts)) {
      denom = d;
      break;
    }
  }
  if (denom == 0) throw InvalidArgument("exact solver limited to small instances (no common denominator <= 64)");

  std::vector<Eigen::Index> p_rows, q_rows;
  for (std::size_t i = 0; i < p_counts.size(); ++i) p_rows.insert(p_rows.end(), p_counts[i], static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < q_counts.size(); ++j) q_rows.insert(q_rows.end(), q_counts[j], static_cast<Eigen::Index>(j));
  Mat expanded(static_cast<Eigen::Index>(denom), static_cast<Eigen::Index>(denom));
  for (std::size_t r = 0; r < denom; ++r) {
    for (std::size_t c = 0; c < denom; ++c) {
      expanded(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = base(p_rows[r], q_rows[c]);
    }
  }
  const auto assignment = hungarian_assignment(expanded);

  OTResult result;
  result.coupling.plan = Mat::Zero(base.rows(), base.cols());
  result.coupling.row_marginal = p_masses.values();
  result.coupling.col_marginal = q_masses.values();
  const double unit = 1.0 / static_cast<double>(denom);
  double total = 0.0;
  for (std::size_t r = 0; r < denom; ++r) {
    const Eigen::Index i = p_rows[r];
    const Eigen::Index j = q_rows[static_cast<std::size_t>(assignment[r])];
    result.coupling.plan(i, j) += unit;
    total += base(i, j);
  }
  result.cost = total * unit;
  return result;
}

OTResult exact_w_small(const DiscreteDistribution& p_dist, const DiscreteDistribution& q_dist, int p) {
  check_pair(p_dist, q_dist);
  if (p != 1 && p != 2) throw InvalidArgument("exact_w_small: p must be 1 or 2");
  OTResult result = exact_ot_with_cost(cost_matrix(p_dist.points, q_dist.points, p), p_dist.masses, q_dist.masses);
  result.cost = root(result.cost, p);
  return result;
}

OTResult sinkhorn_w(const DiscreteDistribution& p_dist, const DiscreteDistribution& q_dist, const OTConfig& cfg) {
  check_pair(p_dist, q_dist);
  cfg.validate();
  const Mat cost = cost_matrix(p_dist.points, q_dist.points, cfg.cost_exponent);
  const Vec& a = p_dist.masses.values();
  const Vec& b = q_dist.masses.values();
  const Vec log_a = log_masses(a);
  const Vec log_b = log_masses(b);

  Vec f = Vec::Zero(cost.rows());
  Vec g = Vec::Zero(cost.cols());
  std::vector<double> buf;
  OTResult result;
  const double start = std::max(cost.maxCoeff(), cfg.entropic_reg);
  const auto schedule = anneal_schedule(start, cfg.entropic_reg, cfg.anneal);
  constexpr int kCheckEvery = 10;
  constexpr int kStageIters = 500;
  double err = std::numeric_limits<double>::infinity();

  auto row_error = [&](double eps) {
    const Mat plan = scaled_plan(cost, f, g, eps);
    return (plan.rowwise().sum() - a).lpNorm<1>();
  };

  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const double eps = schedule[s];
    const bool last = s + 1 == schedule.size();
    const int cap = last ? cfg.max_iters : kStageIters;
    const double tol = last ? cfg.marginal_tol : std::max(cfg.marginal_tol, 1e-4);
    for (int it = 1; it <= cap; ++it) {
      update_rows(cost, log_a, g, eps, f, buf);
      update_cols(cost, log_b, f, eps, g, buf);
      ++result.iterations;
      if (it % kCheckEvery == 0 || it == cap) {
        err = row_error(eps);
        if (err <= tol) break;
      }
    }
  }
  result.marginal_error = err;
  result.converged = err <= cfg.marginal_tol;
  result.coupling.plan = round_to_marginals(scaled_plan(cost, f, g, cfg.entropic_reg), a, b);
  result.coupling.row_marginal = a;
  result.coupling.col_marginal = b;
  result.cost = root(plan_cost(result.coupling.plan, cost), cfg.cost_exponent);
  return result;
}

double pairwise_dataset_distance(const Examples& a, const Examples& b, const OTConfig& cfg, std::size_t subsample,
                                 std::uint64_t seed) {
  if (subsample < 2) throw InvalidArgument("pairwise_dataset_distance: subsample must be >= 2");
  auto pick = [&](const Examples& data, std::string_view tag) {
    if (data.empty()) throw InvalidArgument("pairwise_dataset_distance: empty dataset");
    auto rng = derive_stream(seed, tag);
    auto order = rng.permutation(data.size());
    order.resize(std::min(subsample, order.size()));
    std::sort(order.begin(), order.end());
    Mat pts(static_cast<Eigen::Index>(order.size()), data.front().x.size());
    for (std::size_t k = 0; k < order.size(); ++k) pts.row(static_cast<Eigen::Index>(k)) = data[order[k]].x.transpose();
    return uniform_distribution(std::move(pts));
  };
  // Both sides draw from the same stream so d(A, B) and d(B, A) use the same subsamples.
  auto pa = pick(a, "dataset-subsample");
  auto pb = pick(b, "dataset-subsample");
  // A canonical argument order makes the result exactly symmetric.
  const auto key = [](const DiscreteDistribution& d) {
    return std::make_pair(d.points.rows(), std::vector<double>(d.points.data(), d.points.data() + d.points.size()));
  };
  if (key(pb) < key(pa)) std::swap(pa, pb);
  OTConfig sq = cfg;
  sq.cost_exponent = 2;
  const double w = sinkhorn_w(pa, pb, sq).cost;
  return w * w;
}

LambdaSelection select_lambda_domain_adaptation(const Vec& costs) {
  if (costs.size() == 0) throw InvalidArgument("select_lambda: empty cost vector");
  if (!costs.allFinite()) throw InvalidArgument("select_lambda: non-finite cost");
  const double best = costs.minCoeff();
  Vec lambda = Vec::Zero(costs.size());
  double ties = 0.0;
  for (Eigen::Index i = 0; i < costs.size(); ++i) {
    if (costs[i] - best <= kLambdaTieTolerance) {
      lambda[i] = 1.0;
      ties += 1.0;
    }
  }
  lambda /= ties;
  return {ProbabilityVector(std::move(lambda)), best};
}

Mat union_support(const std::vector<DiscreteDistribution>& dists) {
  if (dists.empty()) throw InvalidArgument("union_support: no distributions");
  Eigen::Index rows = 0;
  for (const auto& d : dists) rows += d.points.rows();
  Mat out(rows, dists.front().points.cols());
  Eigen::Index r = 0;
  for (const auto& d : dists) {
    out.middleRows(r, d.points.rows()) = d.points;
    r += d.points.rows();
  }
  return out;
}

BarycenterResult barycenter_fixed_support(const std::vector<DiscreteDistribution>& dists,
                                          const ProbabilityVector& lambda, const Mat& support,
                                          const BarycenterConfig& cfg) {
  if (dists.empty()) throw InvalidArgument("barycenter: no distributions");
  if (lambda.size() != dists.size()) throw InvalidArgument("barycenter: lambda length mismatch");
  if (support.rows() == 0) throw InvalidArgument("barycenter: empty support");
  cfg.ot.validate();
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (dists[i].dim() != support.cols()) throw InvalidArgument("barycenter: dimension mismatch");
    if (lambda[i] > 0.0) active.push_back(i);
  }

  std::vector<Mat> costs;
  std::vector<Vec> log_a, f, g;
  double start = cfg.ot.entropic_reg;
  for (std::size_t i : active) {
    costs.push_back(cost_matrix(dists[i].points, support, 2));
    start = std::max(start, costs.back().maxCoeff());
    log_a.push_back(log_masses(dists[i].masses.values()));
    f.emplace_back(Vec::Zero(dists[i].points.rows()));
    g.emplace_back(Vec::Zero(support.rows()));
  }

  const Eigen::Index s = support.rows();
  Vec q = Vec::Constant(s, 1.0 / static_cast<double>(s));
  std::vector<double> buf;
  BarycenterResult result;
  const auto schedule = anneal_schedule(start, cfg.ot.entropic_reg, cfg.ot.anneal);
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eps = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    const int cap = last ? cfg.max_iters : 200;
    for (int it = 0; it < cap; ++it) {
      Vec log_q = Vec::Zero(s);
      std::vector<Vec> h(active.size());
      for (std::size_t k = 0; k < active.size(); ++k) {
        update_rows(costs[k], log_a[k], g[k], eps, f[k], buf);
        h[k] = column_lse(costs[k], f[k], eps, buf);
        log_q += lambda[active[k]] * h[k];
      }
      // The active weights may not sum to one when some lambda_i are zero.
      double active_mass = 0.0;
      for (std::size_t i : active) active_mass += lambda[i];
      log_q /= active_mass;
      for (std::size_t k = 0; k < active.size(); ++k) g[k] = eps * (log_q - h[k]);

      const double peak = log_q.maxCoeff();
      Vec q_next = (log_q.array() - peak).exp().matrix();
      q_next /= ordered_sum(q_next);
      const double change = (q_next - q).lpNorm<1>();
      q = std::move(q_next);
      if (last) ++result.iterations;
      if (change <= cfg.mass_tol) {
        if (last) result.converged = true;
        break;
      }
    }
  }

  result.barycenter = DiscreteDistribution{support, ProbabilityVector::from_weights(q)};
  for (std::size_t i : active) {
    const double w = sinkhorn_w(dists[i], result.barycenter, cfg.ot).cost;
    result.objective += lambda[i] * w * w;
  }
  return result;
}

AlternatingResult alternating_min_lambda_barycenter(const std::vector<DiscreteDistribution>& dists,
                                                    const Mat& support, const AlternatingConfig& cfg) {
  if (dists.empty()) throw InvalidArgument("alternating_min: need at least one distribution");
  auto costs_to = [&](const DiscreteDistribution& q) {
    Vec c(static_cast<Eigen::Index>(dists.size()));
    for (std::size_t i = 0; i < dists.size(); ++i) {
      const double w = sinkhorn_w(dists[i], q, cfg.barycenter.ot).cost;
      c[static_cast<Eigen::Index>(i)] = w * w;
    }
    return c;
  };

  AlternatingResult out;
  out.lambda = ProbabilityVector::uniform(dists.size());
  out.barycenter = barycenter_fixed_support(dists, out.lambda, support, cfg.barycenter).barycenter;
  Vec costs = costs_to(out.barycenter);
  double objective = out.lambda.values().dot(costs);

  for (int k = 0; k < cfg.max_alternations; ++k) {
    // Lambda block: exact LP minimizer for the current barycenter.
    const auto sel = select_lambda_domain_adaptation(costs);
    out.lambda = sel.lambda;
    double next = sel.rho_star_sq;

    // Barycenter block; kept only when it does not raise the objective, since
    // the entropic barycenter solves its block approximately.
    auto candidate = barycenter_fixed_support(dists, out.lambda, support, cfg.barycenter).barycenter;
    const Vec cand_costs = costs_to(candidate);
    const double cand_obj = out.lambda.values().dot(cand_costs);
    const bool accepted = cand_obj <= next;
    if (accepted) {
      out.barycenter = std::move(candidate);
      costs = cand_costs;
      next = cand_obj;
    }
    out.objective_log.push_back(next);
    const double decrease = objective - next;
    objective = next;
    if (!accepted || decrease < cfg.decrease_tol) break;
  }
  out.rho_star = std::sqrt(std::max(objective, 0.0));
  return out;
}

void ConcentrationParams::validate() const {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw InvalidArgument("concentration constants c1, c2 must be positive");
  if (!(a > 1.0)) throw InvalidArgument("concentration exponent a must exceed 1");
  if (dim < 1) throw InvalidArgument("concentration dimension must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("concentration delta must be in (0, 1)");
}

double concentration_radius(std::size_t n, const ConcentrationParams& params) {
  params.validate();
  if (n < 1) throw InvalidArgument("concentration_radius: n must be >= 1");
  if (params.delta >= params.c1) throw InvalidArgument("confidence/constant mismatch");
  const double log_term = std::log(params.c1 / params.delta);
  const double base = log_term / (params.c2 * static_cast<double>(n));
  const double exponent = static_cast<double>(n) >= log_term / params.c2
                              ? std::min(2.0 / params.dim, 0.5)
                              : 1.0 / params.a;
  return std::pow(base, exponent);
}

double combined_radius(const ProbabilityVector& lambda, const Vec& per_client_radii) {
  if (static_cast<Eigen::Index>(lambda.size()) != per_client_radii.size()) {
    throw InvalidArgument("combined_radius: length mismatch");
  }
  if (per_client_radii.size() > 0 && per_client_radii.minCoeff() < 0.0) {
    throw InvalidArgument("combined_radius: radii must be nonnegative");
  }
  return std::sqrt(lambda.values().dot(per_client_radii));
}

nlohmann::json distribution_to_json(const DiscreteDistribution& dist) {
  nlohmann::json points = nlohmann::json::array();
  for (Eigen::Index i = 0; i < dist.points.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(dist.points.cols()));
    for (Eigen::Index j = 0; j < dist.points.cols(); ++j) row[static_cast<std::size_t>(j)] = dist.points(i, j);
    points.push_back(row);
  }
  const Vec& m = dist.masses.values();
  return {{"points", points}, {"masses", std::vector<double>(m.data(), m.data() + m.size())}};
}

DiscreteDistribution distribution_from_json(const nlohmann::json& j) {
  const auto rows = j.at("points").get<std::vector<std::vector<double>>>();
  const auto masses = j.at("masses").get<std::vector<double>>();
  if (rows.empty()) throw InvalidArgument("distribution JSON has no points");
  Mat pts(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw InvalidArgument("distribution JSON has ragged points");
    for (std::size_t k = 0; k < rows[i].size(); ++k) pts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return make_distribution(std::move(pts), Eigen::Map<const Vec>(masses.data(), static_cast<Eigen::Index>(masses.size())));
}

}  // namespace wafl
