#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cages/estimation.hpp"

namespace cages {

// One elicited-belief observation: the trial plus the reported probability
// of cage A from the BDM stage.
struct ReportTrial {
  std::string subject_id;
  Trial trial;
  double report = 0.5;
};

// Expected payoff of reporting p_r against subjective posterior Pi_s under
// the BDM second-stage gamble: R [ (1 - p_r^2)/2 + p_r Pi_s ]. Strictly
// concave in the report (second derivative -R), maximized at p_r = Pi_s.
double bdm_expected_payoff(double report, double subjective, double reward);
double bdm_optimal_report(double subjective);

struct BeliefFit {
  BeliefParams beliefs;
  double eta = 0.0;
  double p_lower = 0.0;   // censoring thresholds: min/max interior reports
  double p_upper = 1.0;
  double loglik = 0.0;    // +inf on an exact eta = 0 fit
  std::vector<double> std_errors;  // beta0, beta1, beta2, eta
  Matrix covariance;
  int n_interior = 0;
  int n_censored_low = 0;
  int n_censored_high = 0;
  bool used_censoring = false;
  bool converged = false;
};

// Censored-normal log-likelihood of the log-odds regression
//   log(r/(1-r)) = beta0 + beta1 LLR + beta2 LPR + nu,  nu ~ N(0, eta^2),
// with reports of exactly 0 (1) treated as below p_lower (above p_upper).
// Exposed so tests can check the censored terms against direct integration.
double belief_loglik(std::span<const ReportTrial> data, const BeliefParams& beliefs, double eta,
                     double p_lower, double p_upper);

// MLE of (beta, eta). Needs at least 4 interior reports. With no censored
// observations the problem reduces to least squares on the log odds;
// drop_censored discards 0/1 reports instead of modeling them.
BeliefFit fit_belief_regression(std::span<const ReportTrial> data, const FitConfig& config,
                                bool drop_censored = false);

struct ImpliedReport {
  Cage choice = Cage::A;
  double median = 0.5;
};
// Median report is logistic(beta' x): the monotone transform of the symmetric
// noise median, so it does not depend on eta. Choice compares the report
// (when given) or the median against 1/2; ties go to A.
ImpliedReport implied_choice_and_median(const BeliefFit& fit, const Trial& trial,
                                        std::optional<double> report = std::nullopt);

}  // namespace cages
