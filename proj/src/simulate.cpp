#include "cages/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cages/rng.hpp"

namespace cages {

namespace {

// Stream roles, part of the (seed, subject, trial, role) key.
constexpr std::uint64_t kRoleCage = 1;
constexpr std::uint64_t kRoleDraw = 2;
constexpr std::uint64_t kRoleNu = 3;
constexpr std::uint64_t kRoleChoice = 4;
constexpr std::uint64_t kRoleType = 5;

void validate_spec(const SimSpec& spec) {
  if (spec.subjects < 1) throw std::invalid_argument("simulate: subjects must be >= 1");
  if (spec.schedule.trials.empty()) throw std::invalid_argument("simulate: empty schedule");
  for (const auto& [prior, design] : spec.schedule.trials) {
    validate(design);
    if (prior < 0.0 || prior > 1.0) throw std::domain_error("simulate: prior outside [0,1]");
  }
  validate(spec.model);
}

std::string subject_label(int s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%05d", s + 1);
  return buf;
}

double eta_of(const ModelParams& p) {
  if (const auto* sl = std::get_if<StructuralLogitParams>(&p)) return sl->eta;
  return 0.0;
}

}  // namespace

SimSchedule repeated_schedule(const Design& design, std::span<const double> priors, int trials) {
  validate(design);
  if (priors.empty()) throw std::invalid_argument("repeated_schedule: no priors");
  if (trials < 1) throw std::invalid_argument("repeated_schedule: trials must be >= 1");
  SimSchedule out;
  out.trials.reserve(trials);
  for (int t = 0; t < trials; ++t) out.trials.emplace_back(priors[t % priors.size()], design);
  return out;
}

SimResult simulate_choice_panel(const SimSpec& spec) {
  validate_spec(spec);
  const int n_subj = spec.subjects;
  const int n_trials = static_cast<int>(spec.schedule.trials.size());
  const int k = static_cast<int>(spec.model.thetas.size());

  SimResult out;
  out.data.subjects.resize(n_subj);
  out.truth.type.resize(n_subj);
  out.truth.cage.assign(n_subj, std::vector<int>(n_trials));
  out.truth.nu.assign(n_subj, std::vector<double>(n_trials, 0.0));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int s = 0; s < n_subj; ++s) {
    Subject subject;
    subject.id = subject_label(s);
    subject.trials.reserve(n_trials);
    subject.choices.reserve(n_trials);

    int type = 0;
    if (k > 1) {
      CounterRng rng(spec.seed, s, 0, kRoleType);
      type = rng.categorical(spec.model.lambdas.data(), k);
    }
    out.truth.type[s] = type;
    const ModelParams& theta = spec.model.thetas[type];
    const double eta = eta_of(theta);

    for (int t = 0; t < n_trials; ++t) {
      const auto& [prior, design] = spec.schedule.trials[t];
      const bool cage_a = CounterRng(spec.seed, s, t, kRoleCage).bernoulli(prior);
      const int marked = CounterRng(spec.seed, s, t, kRoleDraw)
                             .binomial(design.draws, cage_a ? design.p_a : design.p_b);
      const Trial trial{prior, marked, design};

      double nu = 0.0;
      if (eta > 0.0) nu = eta * CounterRng(spec.seed, s, t, kRoleNu).normal();
      const double p = ccp_given_nu(theta, trial, nu);
      const int choice = CounterRng(spec.seed, s, t, kRoleChoice).bernoulli(p) ? 1 : 0;

      subject.trials.push_back(trial);
      subject.choices.push_back(choice);
      out.truth.cage[s][t] = cage_a ? 1 : 0;
      out.truth.nu[s][t] = nu;
    }
    out.data.subjects[s] = std::move(subject);
  }
  return out;
}

ReportSimResult simulate_report_panel(const SimSpec& spec) {
  validate_spec(spec);
  for (const auto& theta : spec.model.thetas)
    if (!std::holds_alternative<StructuralLogitParams>(theta))
      throw std::invalid_argument("simulate_report_panel: report models need belief parameters");

  const int n_subj = spec.subjects;
  const int n_trials = static_cast<int>(spec.schedule.trials.size());
  const int k = static_cast<int>(spec.model.thetas.size());

  ReportSimResult out;
  out.reports.resize(static_cast<std::size_t>(n_subj) * n_trials);
  out.truth.type.resize(n_subj);
  out.truth.cage.assign(n_subj, std::vector<int>(n_trials));
  out.truth.nu.assign(n_subj, std::vector<double>(n_trials, 0.0));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int s = 0; s < n_subj; ++s) {
    int type = 0;
    if (k > 1) {
      CounterRng rng(spec.seed, s, 0, kRoleType);
      type = rng.categorical(spec.model.lambdas.data(), k);
    }
    out.truth.type[s] = type;
    const auto& theta = std::get<StructuralLogitParams>(spec.model.thetas[type]);

    for (int t = 0; t < n_trials; ++t) {
      const auto& [prior, design] = spec.schedule.trials[t];
      const bool cage_a = CounterRng(spec.seed, s, t, kRoleCage).bernoulli(prior);
      const int marked = CounterRng(spec.seed, s, t, kRoleDraw)
                             .binomial(design.draws, cage_a ? design.p_a : design.p_b);
      const Trial trial{prior, marked, design};

      double nu = 0.0;
      if (theta.eta > 0.0) nu = theta.eta * CounterRng(spec.seed, s, t, kRoleNu).normal();
      const double report =
          logistic(belief_index(theta.beliefs, llr(trial), lpr(prior), nu));

      out.reports[static_cast<std::size_t>(s) * n_trials + t] =
          ReportTrial{subject_label(s), trial, report};
      out.truth.cage[s][t] = cage_a ? 1 : 0;
      out.truth.nu[s][t] = nu;
    }
  }
  return out;
}

RecoverySummary recovery_experiment(Family family, const MixtureSpec& truth,
                                    const SimSchedule& schedule, int subjects, int replications,
                                    std::uint64_t seed, const FitConfig& config) {
  if (replications < 1) throw std::invalid_argument("recovery: replications must be >= 1");
  validate(truth);
  const int k = static_cast<int>(truth.thetas.size());

  // Compare against the truth in the estimator's reporting order.
  MixtureSpec sorted_truth;
  for (int j : canonical_type_order(family, truth.thetas)) {
    sorted_truth.thetas.push_back(truth.thetas[j]);
    sorted_truth.lambdas.push_back(truth.lambdas[j]);
  }

  RecoverySummary summary;
  summary.replications = replications;
  summary.lambda_truth = sorted_truth.lambdas;
  summary.lambda_mean.assign(k, 0.0);
  const std::vector<std::string> base_names = param_names(family, &sorted_truth.thetas[0]);
  for (int j = 0; j < k; ++j) {
    const std::vector<double> nat = natural_params(family, sorted_truth.thetas[j]);
    for (std::size_t i = 0; i < base_names.size(); ++i) {
      summary.parameter_names.push_back(
          k == 1 ? base_names[i] : "type" + std::to_string(j + 1) + "." + base_names[i]);
      summary.truth.push_back(nat[i]);
    }
  }
  const int n_flat = static_cast<int>(summary.truth.size());
  summary.mean_estimate.assign(n_flat, 0.0);
  summary.bias.assign(n_flat, 0.0);
  summary.coverage.assign(n_flat, 0.0);

  for (int rep = 0; rep < replications; ++rep) {
    SimSpec spec;
    spec.schedule = schedule;
    spec.model = truth;
    spec.subjects = subjects;
    spec.seed = mix64(mix64(seed) ^ mix64(rep + 1));

    const SimResult sim = simulate_choice_panel(spec);
    FitConfig rep_config = config;
    rep_config.seed = spec.seed;
    const FitResult fit = k == 1 ? fit_mle(family, sim.data, rep_config)
                                 : fit_mixture_em(family, k, sim.data, rep_config);

    int flat = 0;
    const int p = n_flat / k;
    for (int j = 0; j < k; ++j) {
      const std::vector<double> nat = natural_params(family, fit.thetas[j]);
      for (int i = 0; i < p; ++i, ++flat) {
        summary.mean_estimate[flat] += nat[i];
        const double se = flat < static_cast<int>(fit.std_errors.size())
                              ? fit.std_errors[j * p + i]
                              : 0.0;
        if (std::abs(nat[i] - summary.truth[flat]) <= 1.959963984540054 * se)
          summary.coverage[flat] += 1.0;
      }
      summary.lambda_mean[j] += fit.lambdas[j];
    }
  }
  for (int i = 0; i < n_flat; ++i) {
    summary.mean_estimate[i] /= replications;
    summary.coverage[i] /= replications;
    summary.bias[i] = summary.mean_estimate[i] - summary.truth[i];
  }
  for (int j = 0; j < k; ++j) summary.lambda_mean[j] /= replications;
  return summary;
}

}  // namespace cages
