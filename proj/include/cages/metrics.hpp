#pragma once

#include <span>
#include <vector>

#include "cages/likelihood.hpp"

namespace cages {

struct WinLoss {
  double win = 0.0;
  double loss = 0.0;  // win + loss == 1 exactly
};

// win = P * Pi + (1 - P)(1 - Pi): probability the rule picks the true cage.
WinLoss win_loss(double ccp_value, double posterior);

// Empirical distribution over the experimental control cells.
struct DesignCell {
  double weight = 0.0;
  double prior = 0.5;
  Design design;
};
struct DesignWeights {
  std::vector<DesignCell> cells;
};
// Uniform over the distinct (prior, design) cells present in the data.
DesignWeights uniform_design_weights(const Dataset& data);

// Unconditional win probability at one control cell, by exact enumeration
// over the sample count d.
double expected_win(const ModelParams& params, double prior, const Design& design,
                    int quad_nodes = 32);
// Same under the optimal rule: sum_d max(Pi, 1 - Pi) m(d).
double bayes_expected_win(double prior, const Design& design);

struct LossPoint {
  double prior = 0.0;
  double loss = 0.0;
};
std::vector<LossPoint> loss_curve(const ModelParams& params, const Design& design,
                                  std::span<const double> priors, int quad_nodes = 32);

struct ScoreCard {
  double win = 0.0;
  double loss = 0.0;
  double efficiency = 0.0;  // W_P / W_bayes, in [0, 1]
  double accuracy = 0.0;    // share of choices matching bayes_choice
  double mean_subject_efficiency = 0.0;
  std::vector<double> subject_accuracy;
  std::vector<double> subject_efficiency;
};

// Model-based half of the card: win / loss / efficiency under the weights.
ScoreCard overall_efficiency(const ModelParams& params, const DesignWeights& weights,
                             int quad_nodes = 32);

// Data-based half: per-subject accuracy and the efficiency ratio
// omega_s = sum_t Pi-if-chosen / sum_t max(Pi, 1 - Pi).
ScoreCard subject_scores(const Dataset& data);

}  // namespace cages
