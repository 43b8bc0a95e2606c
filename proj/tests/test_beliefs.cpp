#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "cages/beliefs.hpp"
#include "cages/simulate.hpp"

using namespace cages;

namespace {
const Design kHoltSmith{2.0 / 3.0, 1.0 / 3.0, 2};
const Design kWisconsin{0.4, 0.6, 7};

FitConfig quick_config(std::uint64_t seed) {
  FitConfig cfg;
  cfg.seed = seed;
  cfg.restarts = 3;
  return cfg;
}

std::vector<ReportTrial> simulated_reports(const BeliefParams& beliefs, double eta, int subjects,
                                           int trials, std::uint64_t seed) {
  SimSpec spec;
  spec.schedule =
      repeated_schedule(kHoltSmith, std::vector<double>{1.0 / 3.0, 0.5, 2.0 / 3.0}, trials);
  spec.model = {{StructuralLogitParams{beliefs, 0.0, eta}}, {1.0}};
  spec.subjects = subjects;
  spec.seed = seed;
  return simulate_report_panel(spec).reports;
}
}  // namespace

TEST_CASE("BDM expected payoff") {
  CHECK(bdm_expected_payoff(0.0, 0.7, 10.0) == doctest::Approx(5.0));
  for (double pi : {0.2, 0.5, 0.8})
    CHECK(bdm_expected_payoff(pi, pi, 2.0) == doctest::Approx(2.0 * (1 + pi * pi) / 2).epsilon(1e-12));
  // the GPT-o1 self-correction case: reporting 1/9 beats the miscomputed 0.2222
  CHECK(bdm_expected_payoff(1.0 / 9.0, 1.0 / 9.0, 1000.0) >
        bdm_expected_payoff(0.2222, 1.0 / 9.0, 1000.0));
  CHECK_THROWS_AS(bdm_expected_payoff(0.5, 0.5, 0.0), std::domain_error);
}

TEST_CASE("BDM payoff is strictly concave in the report") {
  for (double pi : {0.1, 0.5, 0.9}) {
    for (double p = 0.1; p < 0.9; p += 0.1) {
      const double h = 0.05;
      const double second = bdm_expected_payoff(p + h, pi, 3.0) -
                            2 * bdm_expected_payoff(p, pi, 3.0) +
                            bdm_expected_payoff(p - h, pi, 3.0);
      CHECK(second / (h * h) == doctest::Approx(-3.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("BDM optimal report equals the subjective posterior") {
  CHECK(bdm_optimal_report(0.5) == 0.5);
  CHECK(bdm_optimal_report(1.0 / 9.0) == doctest::Approx(0.1111).epsilon(1e-3));

  // grid-argmax oracle at 1e-4 resolution
  for (double pi = 0.1; pi < 0.95; pi += 0.1) {
    double best_p = 0.0, best_v = -1.0;
    for (int i = 0; i <= 10000; ++i) {
      const double p = i * 1e-4;
      const double v = bdm_expected_payoff(p, pi, 1.0);
      if (v > best_v) {
        best_v = v;
        best_p = p;
      }
    }
    CHECK(std::abs(best_p - bdm_optimal_report(pi)) <= 1e-4);
  }
}

TEST_CASE("noise-free reports are fit exactly") {
  const BeliefParams truth{0.1, 1.3, 0.8};
  const auto reports = simulated_reports(truth, 0.0, 20, 9, 41);
  const BeliefFit fit = fit_belief_regression(reports, quick_config(1));
  CHECK(fit.beliefs.beta0 == doctest::Approx(truth.beta0).epsilon(1e-9));
  CHECK(fit.beliefs.beta1 == doctest::Approx(truth.beta1).epsilon(1e-9));
  CHECK(fit.beliefs.beta2 == doctest::Approx(truth.beta2).epsilon(1e-9));
  CHECK(fit.eta == 0.0);
  CHECK(std::isinf(fit.loglik));
}

TEST_CASE("noisy reports are recovered within their confidence intervals") {
  const BeliefParams truth{0.0, 1.0, 1.0};
  const auto reports = simulated_reports(truth, 0.9, 34, 9, 300);  // n = 306
  const BeliefFit fit = fit_belief_regression(reports, quick_config(2));
  const double truth_vec[] = {0.0, 1.0, 1.0, 0.9};
  const double est[] = {fit.beliefs.beta0, fit.beliefs.beta1, fit.beliefs.beta2, fit.eta};
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(est[i] - truth_vec[i]) <= 1.96 * fit.std_errors[i]);
}

TEST_CASE("zero-draw trials are ordinary observations") {
  auto reports = simulated_reports({0, 1, 1}, 0.4, 12, 6, 7);
  for (int i = 0; i < 4; ++i) {
    reports[i].trial = Trial{0.5, 0, Design{0.5, 0.5, 0}};  // LLR = LPR = 0
    reports[i].report = 0.5 + 0.01 * (i + 1);
  }
  CHECK_NOTHROW(fit_belief_regression(reports, quick_config(3)));
}

TEST_CASE("censored reports") {
  auto reports = simulated_reports({0, 1, 1}, 0.7, 30, 9, 11);
  reports[0].report = 1.0;
  reports[1].report = 0.0;

  SUBCASE("censored likelihood term matches direct integration") {
    const BeliefParams b{0.05, 1.1, 0.9};
    const double eta = 0.8;
    const double p_lo = 0.1, p_hi = 0.9;
    std::vector<ReportTrial> interior(reports.begin() + 2, reports.end());
    std::vector<ReportTrial> with_top(interior);
    ReportTrial top = reports[0];
    with_top.push_back(top);

    const double term = belief_loglik(with_top, b, eta, p_lo, p_hi) -
                        belief_loglik(interior, b, eta, p_lo, p_hi);

    // Simpson integration of the normal density of z above logit(p_hi)
    const double mu = b.beta0 + b.beta1 * llr(top.trial) + b.beta2 * lpr(top.trial.prior);
    const double z_hi = std::log(p_hi / (1 - p_hi));
    const double a = z_hi, width = 14.0 * eta;
    const int n = 4000;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double z = a + width * i / n;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      integral += w * std::exp(-0.5 * (z - mu) * (z - mu) / (eta * eta));
    }
    integral *= width / n / 3.0 / (eta * std::sqrt(2.0 * M_PI));
    CHECK(term == doctest::Approx(std::log(integral)).epsilon(1e-6));
  }

  SUBCASE("thresholds come from the interior reports") {
    const BeliefFit fit = fit_belief_regression(reports, quick_config(4));
    double lo = 1.0, hi = 0.0;
    for (std::size_t i = 2; i < reports.size(); ++i) {
      lo = std::min(lo, reports[i].report);
      hi = std::max(hi, reports[i].report);
    }
    CHECK(fit.p_lower == lo);
    CHECK(fit.p_upper == hi);
    CHECK(fit.n_censored_low == 1);
    CHECK(fit.n_censored_high == 1);
    CHECK(fit.used_censoring);
  }

  SUBCASE("drop_censored ignores the 0/1 rows") {
    const BeliefFit fit = fit_belief_regression(reports, quick_config(5), true);
    CHECK(fit.n_censored_low == 0);
    CHECK(fit.n_censored_high == 0);
    CHECK_FALSE(fit.used_censoring);
  }
}

TEST_CASE("degenerate report sets are estimation errors") {
  std::vector<ReportTrial> all_censored;
  for (int i = 0; i < 6; ++i)
    all_censored.push_back(
        ReportTrial{"s", Trial{0.5, i % 3, Design{0.6, 0.4, 3}}, i % 2 ? 1.0 : 0.0});
  CHECK_THROWS(fit_belief_regression(all_censored, quick_config(6)));

  auto too_few = simulated_reports({0, 1, 1}, 0.3, 1, 3, 8);  // 3 interior rows
  CHECK_THROWS_AS(fit_belief_regression(too_few, quick_config(7)), std::invalid_argument);
}

TEST_CASE("implied choice and median") {
  BeliefFit fit;
  fit.beliefs = {0, 1, 1};
  fit.eta = 0.9;

  const Trial benchmark{0.6, 3, kWisconsin};
  const ImpliedReport median_only = implied_choice_and_median(fit, benchmark);
  CHECK(median_only.median == doctest::Approx(9.0 / 13.0).epsilon(1e-12));
  CHECK(median_only.choice == Cage::A);

  CHECK(implied_choice_and_median(fit, benchmark, 0.6).choice == Cage::A);
  CHECK(implied_choice_and_median(fit, benchmark, 0.4).choice == Cage::B);
  CHECK(implied_choice_and_median(fit, benchmark, 0.5).choice == Cage::A);  // tie to A

  // the median is free of eta
  BeliefFit quiet = fit;
  quiet.eta = 0.0;
  CHECK(implied_choice_and_median(quiet, benchmark).median == median_only.median);

  // half-weight beliefs at a null index
  BeliefFit half;
  half.beliefs = {0, 0.5, 0.5};
  const Trial null_index{0.5, 1, Design{0.6, 0.4, 2}};
  CHECK(implied_choice_and_median(half, null_index).median == doctest::Approx(0.5));
}
