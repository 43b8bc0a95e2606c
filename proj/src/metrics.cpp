#include "cages/metrics.hpp"

#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cages {

WinLoss win_loss(double ccp_value, double posterior) {
  if (ccp_value < 0.0 || ccp_value > 1.0) throw std::domain_error("win_loss: ccp outside [0,1]");
  if (posterior < 0.0 || posterior > 1.0)
    throw std::domain_error("win_loss: posterior outside [0,1]");
  WinLoss out;
  out.win = ccp_value * posterior + (1.0 - ccp_value) * (1.0 - posterior);
  out.loss = 1.0 - out.win;
  return out;
}

DesignWeights uniform_design_weights(const Dataset& data) {
  validate(data);
  DesignWeights out;
  for (const auto& s : data.subjects)
    for (const auto& t : s.trials) {
      bool found = false;
      for (const auto& cell : out.cells)
        if (cell.prior == t.prior && cell.design.p_a == t.design.p_a &&
            cell.design.p_b == t.design.p_b && cell.design.draws == t.design.draws) {
          found = true;
          break;
        }
      if (!found) out.cells.push_back({0.0, t.prior, t.design});
    }
  for (auto& cell : out.cells) cell.weight = 1.0 / out.cells.size();
  return out;
}

namespace {

// Marginal pmf of d under the prior: f(d|p_a) pi + f(d|p_b)(1 - pi).
double marginal_pmf(int d, double prior, const Design& design) {
  return prior * binomial_pmf(d, design.draws, design.p_a) +
         (1.0 - prior) * binomial_pmf(d, design.draws, design.p_b);
}

}  // namespace

double expected_win(const ModelParams& params, double prior, const Design& design,
                    int quad_nodes) {
  validate(design);
  double win = 0.0;
  for (int d = 0; d <= design.draws; ++d) {
    const double m = marginal_pmf(d, prior, design);
    if (m == 0.0) continue;
    const Trial trial{prior, d, design};
    win += win_loss(ccp(params, trial, quad_nodes), bayes_posterior(trial).pi_a).win * m;
  }
  return win;
}

double bayes_expected_win(double prior, const Design& design) {
  validate(design);
  double win = 0.0;
  for (int d = 0; d <= design.draws; ++d) {
    const double m = marginal_pmf(d, prior, design);
    if (m == 0.0) continue;
    const double pi = bayes_posterior(Trial{prior, d, design}).pi_a;
    win += std::max(pi, 1.0 - pi) * m;
  }
  return win;
}

std::vector<LossPoint> loss_curve(const ModelParams& params, const Design& design,
                                  std::span<const double> priors, int quad_nodes) {
  std::vector<LossPoint> out;
  out.reserve(priors.size());
  for (double prior : priors)
    out.push_back({prior, 1.0 - expected_win(params, prior, design, quad_nodes)});
  return out;
}

ScoreCard overall_efficiency(const ModelParams& params, const DesignWeights& weights,
                             int quad_nodes) {
  if (weights.cells.empty()) throw std::domain_error("overall_efficiency: no weight cells");
  double total = 0.0;
  for (const auto& cell : weights.cells) {
    if (cell.weight < 0.0) throw std::domain_error("overall_efficiency: negative weight");
    total += cell.weight;
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw std::domain_error("overall_efficiency: weights must sum to 1");

  ScoreCard card;
  double optimal = 0.0;
  for (const auto& cell : weights.cells) {
    card.win += cell.weight * expected_win(params, cell.prior, cell.design, quad_nodes);
    optimal += cell.weight * bayes_expected_win(cell.prior, cell.design);
  }
  card.loss = 1.0 - card.win;
  // W_opt >= 1/2 > 0 for any valid design, so the ratio is well defined.
  card.efficiency = card.win / optimal;
  return card;
}

ScoreCard subject_scores(const Dataset& data) {
  validate(data);
  for (const auto& subject : data.subjects)
    if (subject.trials.empty())
      throw std::domain_error("subject_scores: subject " + subject.id + " has no trials");

  const int n = static_cast<int>(data.subjects.size());
  ScoreCard card;
  card.subject_accuracy.resize(n);
  card.subject_efficiency.resize(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int s = 0; s < n; ++s) {
    const Subject& subject = data.subjects[s];
    int matches = 0;
    double won = 0.0, optimal = 0.0;
    for (std::size_t i = 0; i < subject.trials.size(); ++i) {
      const double pi = bayes_posterior(subject.trials[i]).pi_a;
      const int y_star = pi >= 0.5 ? 1 : 0;
      if (subject.choices[i] == y_star) ++matches;
      won += subject.choices[i] ? pi : 1.0 - pi;
      optimal += std::max(pi, 1.0 - pi);
    }
    card.subject_accuracy[s] = static_cast<double>(matches) / subject.trials.size();
    card.subject_efficiency[s] = won / optimal;
  }
  // fixed-order means keep the card identical across thread counts
  double acc_sum = 0.0, eff_sum = 0.0;
  for (int s = 0; s < n; ++s) {
    acc_sum += card.subject_accuracy[s];
    eff_sum += card.subject_efficiency[s];
  }
  card.accuracy = acc_sum / n;
  card.mean_subject_efficiency = eff_sum / n;
  return card;
}

}  // namespace cages
