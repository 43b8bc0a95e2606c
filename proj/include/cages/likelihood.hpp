#pragma once

#include <span>
#include <string>
#include <vector>

#include "cages/models.hpp"

namespace cages {

struct Subject {
  std::string id;
  std::vector<Trial> trials;
  std::vector<int> choices;  // 1 = cage A, 0 = cage B
};

struct Dataset {
  std::vector<Subject> subjects;
  int n_trials() const;
};

void validate(const Subject& subject);
void validate(const Dataset& data);
// Estimation accepts only priors strictly inside (0,1); throws otherwise.
void require_interior_priors(const Dataset& data);

struct MixtureSpec {
  std::vector<ModelParams> thetas;
  std::vector<double> lambdas;
};
void validate(const MixtureSpec& spec);

// CCPs are clamped to [kCcpClamp, 1 - kCcpClamp] inside the log only; callers
// can count how often that happened via the clamp_count out-parameters.
inline constexpr double kCcpClamp = 1e-12;

double subject_loglik(const ModelParams& params, const Subject& subject, int quad_nodes = 32,
                      long* clamp_count = nullptr);

// OpenMP kernel: per-subject log-likelihoods evaluate in parallel, the total
// is a fixed-order sum over subjects, so results are bit-identical across
// thread counts.
double panel_loglik(const ModelParams& params, const Dataset& data, int quad_nodes = 32,
                    long* clamp_count = nullptr);

// Plain double loop in trial order; the reference the parallel paths are
// tested against.
double panel_loglik_serial(const ModelParams& params, const Dataset& data, int quad_nodes = 32);

// sum_s log sum_k lambda_k exp(LL_s(theta_k)), evaluated with log-sum-exp.
double mixture_loglik(const MixtureSpec& spec, const Dataset& data, int quad_nodes = 32);

double ec_loglik(const std::vector<ModelParams>& thetas, const std::vector<int>& assignments,
                 const Dataset& data, int quad_nodes = 32);

// Deduplicates identical (design, prior, marked) cells so a likelihood
// evaluation costs O(cells) CCPs plus O(sum T_s) integer-weighted adds.
// Optimizers and EM sweeps construct this once per dataset.
class PanelEvaluator {
 public:
  explicit PanelEvaluator(const Dataset& data);

  int n_subjects() const { return static_cast<int>(subject_counts_.size()); }
  int n_cells() const { return static_cast<int>(cells_.size()); }
  int n_trials() const { return n_trials_; }

  // out.size() == n_subjects(). Bit-reproducible across thread counts.
  void subject_logliks(const ModelParams& params, int quad_nodes, std::span<double> out,
                       long* clamp_count = nullptr) const;
  double total_loglik(const ModelParams& params, int quad_nodes,
                      long* clamp_count = nullptr) const;
  double weighted_loglik(const ModelParams& params, int quad_nodes,
                         std::span<const double> subject_weights,
                         long* clamp_count = nullptr) const;
  // log P(observed choice) per trial in dataset order; the Vuong test input.
  std::vector<double> per_trial_loglik(const ModelParams& params, int quad_nodes) const;

 private:
  std::vector<double> ccp_by_cell(const ModelParams& params, int quad_nodes) const;

  struct CellCount {
    int cell = 0;
    int chose_a = 0;
    int chose_b = 0;
  };
  std::vector<Trial> cells_;
  std::vector<std::vector<CellCount>> subject_counts_;
  std::vector<std::vector<std::pair<int, int>>> trial_cells_;  // (cell, choice)
  int n_trials_ = 0;
};

// log(sum_i exp(x_i)) with the usual max shift; -inf entries are skipped.
double log_sum_exp(std::span<const double> x);

}  // namespace cages
