#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cages/likelihood.hpp"

namespace cages {

struct FitConfig {
  int restarts = 10;        // multi-start count for the simplex search
  int max_iter = 2000;      // simplex iterations per start
  int em_max_iter = 500;    // EM / EC sweeps
  double ll_tol = 1e-9;     // relative log-likelihood convergence tolerance
  std::uint64_t seed = 0;
  int quad_nodes = 32;
};
void validate(const FitConfig& config);

// Estimable decision-rule families. noisy_bayes and bayes_beliefs are the
// Bayesian-belief restrictions of the structural logit (sigma free; sigma and
// eta free). intercept_logit is the constant-CCP null model.
enum class Family {
  structural_logit,
  mixed_logit,
  noisy_bayes,
  bayes_beliefs,
  structural_probit,
  reduced_logit_raw,
  reduced_logit_transformed,
  nn5,
  cutoff_rule,
  intercept_logit,
};

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Number of free parameters; the cutoff rule needs the per-prior thresholds,
// so its count comes from a concrete parameter value.
int n_free_params(Family f, const ModelParams* example = nullptr);
std::vector<std::string> param_names(Family f, const ModelParams* example = nullptr);
// Natural-scale values in param_names order.
std::vector<double> natural_params(Family f, const ModelParams& p);

// Unconstrained optimizer coordinates: sigma and eta enter as logs, all other
// parameters as-is. The cutoff rule is not packable (integer thresholds).
std::vector<double> pack_transformed(Family f, const ModelParams& p);
ModelParams unpack_transformed(Family f, std::span<const double> x);
ModelParams default_params(Family f);
// Inverse of natural_params for the continuous families (param_names order).
ModelParams params_from_natural(Family f, std::span<const double> natural);

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;
  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct FitResult {
  Family family{};
  std::vector<ModelParams> thetas;   // one entry per type
  std::vector<double> lambdas;       // {1} for pooled fits
  std::vector<int> assignments;      // EC only: subject -> type
  Matrix type_posteriors;            // FM: subjects x types (EC: 0/1)
  double loglik = 0.0;
  int n_params = 0;
  double aic = 0.0;
  std::vector<double> std_errors;    // natural scale, types flattened, then lambdas (K > 1)
  Matrix covariance;                 // natural scale, same ordering
  bool converged = false;
  bool boundary = false;             // degenerate data or parameter at a bound
  bool rank_warning = false;         // Hessian pseudo-inverted
  bool dropped_component = false;
  long clamp_count = 0;
  int iterations = 0;
  std::vector<double> em_loglik_path;
};

double aic(int n_params, double loglik);  // 2 (k - LL)

// Pooled maximum likelihood: best of `restarts` Nelder-Mead runs on the
// transformed parameters. Deterministic given (data, config.seed). Rejects
// endpoint priors up front.
FitResult fit_mle(Family f, const Dataset& data, const FitConfig& config);

// Finite-mixture MLE via EM. The reported loglik path is nondecreasing.
FitResult fit_mixture_em(Family f, int k, const Dataset& data, const FitConfig& config);

// Estimation-Classification: alternate best-response type assignment and
// per-type refits until assignments stabilize. lambda_k = assigned fraction.
FitResult fit_ec(Family f, int k, const Dataset& data, const FitConfig& config);

// posterior_k(s) proportional to lambda_k exp(LL_s(theta_k)); rows sum to 1.
Matrix type_posteriors(const MixtureSpec& spec, const Dataset& data, int quad_nodes = 32);

// Label-switching convention: types sorted by ascending noise scale, then
// slope. Multi-type fits report in this order.
std::vector<int> canonical_type_order(Family f, const std::vector<ModelParams>& thetas);

struct WaldResult {
  Matrix covariance;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};
// Linear restrictions R * natural_params = q on a single-type fit.
WaldResult covariance_and_wald(const FitResult& fit, const Matrix& restrictions,
                               std::span<const double> q);

struct LrAicResult {
  double lr = 0.0;
  int df = 0;
  double p_value = 1.0;
  double aic_full = 0.0;
  double aic_restricted = 0.0;
  bool clipped_negative = false;
};
// Caller is responsible for nesting; a small negative LR is clipped to 0.
LrAicResult lr_aic(const FitResult& full, const FitResult& restricted);

struct VuongResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int n = 0;
};
// Non-nested comparison on per-trial log-likelihood differences. Only defined
// for single-type fits (a mixture has no per-trial decomposition).
VuongResult vuong_test(const FitResult& a, const FitResult& b, const Dataset& data,
                       int quad_nodes = 32);

double delta_method_se(const Matrix& covariance, std::span<const double> gradient);

struct SimplexResult {
  std::vector<double> x;
  double fmin = 0.0;
  bool converged = false;
  int iterations = 0;
};
// Nelder-Mead minimization; stops on simplex collapse or when the objective
// stalls within ll_tol (relative) for 25 iterations.
SimplexResult minimize_simplex(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> start, int max_iter, double ll_tol);

// Central-difference Hessian with step 1e-4 * (1 + |x_i|).
Matrix hessian_fd(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> x);
// Symmetric inverse; falls back to an eigenvalue pseudo-inverse and sets
// rank_warning when the matrix is singular or indefinite.
Matrix invert_symmetric(const Matrix& m, bool* rank_warning);

double chi_square_sf(double statistic, int df);  // upper tail

}  // namespace cages
