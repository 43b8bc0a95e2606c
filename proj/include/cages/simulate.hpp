#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cages/beliefs.hpp"
#include "cages/estimation.hpp"

namespace cages {

// Per-trial (prior, design) schedule shared by every simulated subject.
struct SimSchedule {
  std::vector<std::pair<double, Design>> trials;
};
// Cycle the given priors over `trials` slots of one design.
SimSchedule repeated_schedule(const Design& design, std::span<const double> priors, int trials);

struct SimSpec {
  SimSchedule schedule;
  MixtureSpec model;  // one or more types with population weights
  int subjects = 1;
  std::uint64_t seed = 0;
};

// Ground truth kept out of the estimation-facing dataset.
struct SimTruth {
  std::vector<int> type;                  // per subject
  std::vector<std::vector<int>> cage;     // 1 = A
  std::vector<std::vector<double>> nu;    // calculational errors (0 when unused)
};

struct SimResult {
  Dataset data;
  SimTruth truth;
};

// Mechanism: cage ~ Bernoulli(prior), d ~ Binomial(D, p_cage), nu ~ N(0,1)
// when the type has eta > 0, choice ~ Bernoulli(CCP | nu). Streams are
// counter-based and keyed by (seed, subject, trial, role), so output is
// identical for any thread count.
SimResult simulate_choice_panel(const SimSpec& spec);

struct ReportSimResult {
  std::vector<ReportTrial> reports;
  SimTruth truth;
};
// Reports are logistic(beta' x + eta nu); requires structural-logit types.
ReportSimResult simulate_report_panel(const SimSpec& spec);

struct RecoverySummary {
  std::vector<std::string> parameter_names;  // types flattened
  std::vector<double> truth;
  std::vector<double> mean_estimate;
  std::vector<double> bias;
  std::vector<double> coverage;  // share of replications whose 95% CI covers
  std::vector<double> lambda_truth;
  std::vector<double> lambda_mean;
  int replications = 0;
};

// Simulate-and-refit harness: `truth` drives the generator, `family` the
// estimator (fit_mle for one type, fit_mixture_em otherwise). Types are
// compared in canonical order on both sides.
RecoverySummary recovery_experiment(Family family, const MixtureSpec& truth,
                                    const SimSchedule& schedule, int subjects, int replications,
                                    std::uint64_t seed, const FitConfig& config);

}  // namespace cages
