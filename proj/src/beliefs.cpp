#include "cages/beliefs.hpp"

#include <gsl/gsl_linalg.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cages/rng.hpp"

namespace cages {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.9189385332046727;

struct Row {
  double x1 = 0.0;  // LLR
  double x2 = 0.0;  // LPR
  double z = 0.0;   // log odds of the report (interior rows)
  int censor = 0;   // -1 below, 0 interior, +1 above
};

std::vector<Row> build_rows(std::span<const ReportTrial> data, bool drop_censored) {
  std::vector<Row> rows;
  rows.reserve(data.size());
  for (const auto& rt : data) {
    validate(rt.trial);
    if (rt.report < 0.0 || rt.report > 1.0)
      throw std::domain_error("belief regression: report outside [0,1]");
    Row row;
    row.x1 = llr(rt.trial);
    row.x2 = lpr(rt.trial.prior);
    if (!std::isfinite(row.x1) || !std::isfinite(row.x2))
      throw std::invalid_argument(
          "belief regression: trial has infinite LLR or LPR (endpoint prior or degenerate cage)");
    if (rt.report == 0.0)
      row.censor = -1;
    else if (rt.report == 1.0)
      row.censor = 1;
    else
      row.z = std::log(rt.report) - std::log1p(-rt.report);
    if (row.censor != 0 && drop_censored) continue;
    rows.push_back(row);
  }
  return rows;
}

double index_of(const Row& row, const BeliefParams& b) {
  return b.beta0 + b.beta1 * row.x1 + b.beta2 * row.x2;
}

double rows_loglik(std::span<const Row> rows, const BeliefParams& b, double eta, double z_lower,
                   double z_upper) {
  double ll = 0.0;
  for (const auto& row : rows) {
    const double mu = index_of(row, b);
    if (row.censor == 0) {
      const double r = (row.z - mu) / eta;
      ll += -kLogSqrt2Pi - std::log(eta) - 0.5 * r * r;
    } else if (row.censor < 0) {
      ll += std::log(std::max(normal_cdf((z_lower - mu) / eta), 1e-300));
    } else {
      ll += std::log(std::max(1.0 - normal_cdf((z_upper - mu) / eta), 1e-300));
    }
  }
  return ll;
}

// Least squares of z on (1, LLR, LPR) over the interior rows.
struct LsFit {
  BeliefParams beliefs;
  double rss = 0.0;
  Matrix xtx_inv;  // 3x3
  int n = 0;
};

LsFit least_squares(std::span<const Row> rows) {
  double xtx[9] = {0}, xty[3] = {0};
  int n = 0;
  for (const auto& row : rows) {
    if (row.censor != 0) continue;
    const double x[3] = {1.0, row.x1, row.x2};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) xtx[3 * i + j] += x[i] * x[j];
      xty[i] += x[i] * row.z;
    }
    ++n;
  }

  gsl_matrix_view a = gsl_matrix_view_array(xtx, 3, 3);
  gsl_vector_view b = gsl_vector_view_array(xty, 3);
  gsl_vector* beta = gsl_vector_alloc(3);
  gsl_permutation* perm = gsl_permutation_alloc(3);
  int sign = 0;
  if (gsl_linalg_LU_decomp(&a.matrix, perm, &sign) != 0 ||
      gsl_linalg_LU_solve(&a.matrix, perm, &b.vector, beta) != 0) {
    gsl_vector_free(beta);
    gsl_permutation_free(perm);
    throw std::runtime_error("belief regression: singular design matrix (collinear LLR/LPR)");
  }
  LsFit fit;
  fit.beliefs = {gsl_vector_get(beta, 0), gsl_vector_get(beta, 1), gsl_vector_get(beta, 2)};
  fit.n = n;
  fit.xtx_inv = Matrix(3, 3);
  gsl_matrix* inv = gsl_matrix_alloc(3, 3);
  gsl_linalg_LU_invert(&a.matrix, perm, inv);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) fit.xtx_inv.at(i, j) = gsl_matrix_get(inv, i, j);
  gsl_matrix_free(inv);
  gsl_vector_free(beta);
  gsl_permutation_free(perm);

  for (const auto& row : rows) {
    if (row.censor != 0) continue;
    const double resid = row.z - index_of(row, fit.beliefs);
    fit.rss += resid * resid;
  }
  return fit;
}

}  // namespace

double bdm_expected_payoff(double report, double subjective, double reward) {
  if (report < 0.0 || report > 1.0 || subjective < 0.0 || subjective > 1.0)
    throw std::domain_error("bdm_expected_payoff: probabilities outside [0,1]");
  if (reward <= 0.0) throw std::domain_error("bdm_expected_payoff: reward must be positive");
  return reward * ((1.0 - report * report) / 2.0 + report * subjective);
}

double bdm_optimal_report(double subjective) {
  if (subjective < 0.0 || subjective > 1.0)
    throw std::domain_error("bdm_optimal_report: probability outside [0,1]");
  // dE/dp_r = R (Pi_s - p_r) vanishes at the subjective posterior itself.
  return subjective;
}

double belief_loglik(std::span<const ReportTrial> data, const BeliefParams& beliefs, double eta,
                     double p_lower, double p_upper) {
  if (eta <= 0.0) throw std::invalid_argument("belief_loglik: eta must be > 0");
  if (!(p_lower > 0.0 && p_lower <= p_upper && p_upper < 1.0))
    throw std::domain_error("belief_loglik: need 0 < p_lower <= p_upper < 1");
  const std::vector<Row> rows = build_rows(data, false);
  const double z_lower = std::log(p_lower) - std::log1p(-p_lower);
  const double z_upper = std::log(p_upper) - std::log1p(-p_upper);
  return rows_loglik(rows, beliefs, eta, z_lower, z_upper);
}

BeliefFit fit_belief_regression(std::span<const ReportTrial> data, const FitConfig& config,
                                bool drop_censored) {
  const std::vector<Row> rows = build_rows(data, drop_censored);

  BeliefFit fit;
  double report_lo = 1.0, report_hi = 0.0;
  for (const auto& rt : data) {
    if (rt.report == 0.0)
      ++fit.n_censored_low;
    else if (rt.report == 1.0)
      ++fit.n_censored_high;
    else {
      ++fit.n_interior;
      report_lo = std::min(report_lo, rt.report);
      report_hi = std::max(report_hi, rt.report);
    }
  }
  if (fit.n_interior == 0)
    throw std::runtime_error("belief regression: every report is censored at 0 or 1");
  if (fit.n_interior < 4)
    throw std::invalid_argument("belief regression: need at least 4 interior reports");
  // MLE of the censoring thresholds: min and max of the interior reports.
  fit.p_lower = report_lo;
  fit.p_upper = report_hi;
  if (drop_censored) {
    fit.n_censored_low = 0;
    fit.n_censored_high = 0;
  }

  const LsFit ls = least_squares(rows);
  const bool censored = fit.n_censored_low + fit.n_censored_high > 0;
  const int n = ls.n;

  if (!censored) {
    fit.beliefs = ls.beliefs;
    fit.eta = std::sqrt(ls.rss / n);
    fit.converged = true;
    fit.covariance = Matrix(4, 4);
    fit.std_errors.assign(4, 0.0);
    if (fit.eta < 1e-12) {
      // Exact logistic reports: degenerate (zero-noise) maximum.
      fit.eta = 0.0;
      fit.loglik = kInf;
      return fit;
    }
    const double s2 = ls.rss / (n - 3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) fit.covariance.at(i, j) = s2 * ls.xtx_inv.at(i, j);
      fit.std_errors[i] = std::sqrt(fit.covariance.at(i, i));
    }
    const double eta_var = fit.eta * fit.eta / (2.0 * n);
    fit.covariance.at(3, 3) = eta_var;
    fit.std_errors[3] = std::sqrt(eta_var);
    const double z_lo = std::log(fit.p_lower) - std::log1p(-fit.p_lower);
    const double z_hi = std::log(fit.p_upper) - std::log1p(-fit.p_upper);
    fit.loglik = rows_loglik(rows, fit.beliefs, fit.eta, z_lo, z_hi);
    return fit;
  }

  // Censored path: maximize over (beta, log eta) from the least-squares start.
  const double z_lo = std::log(fit.p_lower) - std::log1p(-fit.p_lower);
  const double z_hi = std::log(fit.p_upper) - std::log1p(-fit.p_upper);
  const auto objective = [&](std::span<const double> x) {
    const BeliefParams b{x[0], x[1], x[2]};
    const double value = rows_loglik(rows, b, std::exp(x[3]), z_lo, z_hi);
    return std::isfinite(value) ? -value : 1e300;
  };

  const double eta0 = std::max(std::sqrt(ls.rss / n), 0.05);
  std::vector<double> start{ls.beliefs.beta0, ls.beliefs.beta1, ls.beliefs.beta2, std::log(eta0)};
  SimplexResult best;
  best.fmin = kInf;
  const int restarts = std::max(1, config.restarts);
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> x = start;
    if (r > 0) {
      CounterRng rng(config.seed, static_cast<std::uint64_t>(r), 0, 137);
      for (double& xi : x) xi += 0.5 * rng.normal();
    }
    SimplexResult run = minimize_simplex(objective, x, config.max_iter, config.ll_tol);
    if (run.fmin < best.fmin) best = run;
  }
  if (best.x.empty())
    throw std::runtime_error("belief regression: censored likelihood never evaluated finitely");

  fit.beliefs = {best.x[0], best.x[1], best.x[2]};
  fit.eta = std::exp(best.x[3]);
  fit.loglik = -best.fmin;
  fit.converged = best.converged;
  fit.used_censoring = true;

  bool warn = false;
  const Matrix hessian = hessian_fd(objective, best.x);
  const Matrix cov_x = invert_symmetric(hessian, &warn);
  // Only eta is log-transformed; the delta map is diagonal.
  fit.covariance = Matrix(4, 4);
  fit.std_errors.assign(4, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double ji = i == 3 ? fit.eta : 1.0;
    for (int j = 0; j < 4; ++j) {
      const double jj = j == 3 ? fit.eta : 1.0;
      fit.covariance.at(i, j) = ji * jj * cov_x.at(i, j);
    }
    fit.std_errors[i] = std::sqrt(std::max(fit.covariance.at(i, i), 0.0));
  }
  return fit;
}

ImpliedReport implied_choice_and_median(const BeliefFit& fit, const Trial& trial,
                                        std::optional<double> report) {
  validate(trial);
  ImpliedReport out;
  out.median = subjective_posterior(fit.beliefs, llr(trial), lpr(trial.prior), 0.0);
  const double basis = report.value_or(out.median);
  out.choice = basis >= 0.5 ? Cage::A : Cage::B;
  return out;
}

}  // namespace cages
