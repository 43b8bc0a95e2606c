#include "cages/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <tuple>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cages {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log of the probability assigned to the observed choice, clamped from below.
inline double log_observed(double p_choose_a, int y, long& clamps) {
  double p = y ? p_choose_a : 1.0 - p_choose_a;
  if (p < kCcpClamp) {
    ++clamps;
    p = kCcpClamp;
  }
  return std::log(p);
}

}  // namespace

int Dataset::n_trials() const {
  int n = 0;
  for (const auto& s : subjects) n += static_cast<int>(s.trials.size());
  return n;
}

void validate(const Subject& subject) {
  if (subject.trials.size() != subject.choices.size())
    throw std::domain_error("subject " + subject.id + ": trials and choices differ in length");
  for (const auto& t : subject.trials) validate(t);
  for (int y : subject.choices)
    if (y != 0 && y != 1) throw std::domain_error("subject " + subject.id + ": choice not 0/1");
}

void validate(const Dataset& data) {
  if (data.subjects.empty()) throw std::domain_error("dataset: no subjects");
  for (const auto& s : data.subjects) validate(s);
}

void require_interior_priors(const Dataset& data) {
  for (const auto& s : data.subjects)
    for (const auto& t : s.trials)
      if (t.prior <= 0.0 || t.prior >= 1.0)
        throw std::invalid_argument(
            "estimation requires priors strictly inside (0,1); subject " + s.id +
            " has an endpoint prior (drop those trials or use metrics instead)");
}

void validate(const MixtureSpec& spec) {
  if (spec.thetas.empty() || spec.thetas.size() != spec.lambdas.size())
    throw std::domain_error("mixture: thetas and lambdas must be nonempty and equal-length");
  double sum = 0.0;
  for (double l : spec.lambdas) {
    if (l < 0.0) throw std::domain_error("mixture: negative weight");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-8) throw std::domain_error("mixture: weights must sum to 1");
}

double subject_loglik(const ModelParams& params, const Subject& subject, int quad_nodes,
                      long* clamp_count) {
  validate(subject);
  double ll = 0.0;
  long clamps = 0;
  for (std::size_t i = 0; i < subject.trials.size(); ++i)
    ll += log_observed(ccp(params, subject.trials[i], quad_nodes), subject.choices[i], clamps);
  if (clamp_count) *clamp_count += clamps;
  return ll;
}

double panel_loglik(const ModelParams& params, const Dataset& data, int quad_nodes,
                    long* clamp_count) {
  validate(data);
  const int n = static_cast<int>(data.subjects.size());
  std::vector<double> per_subject(n);
  long clamps = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : clamps)
#endif
  for (int s = 0; s < n; ++s) {
    long c = 0;
    per_subject[s] = subject_loglik(params, data.subjects[s], quad_nodes, &c);
    clamps += c;
  }
  // Fixed-order reduction: identical result for any thread count.
  double total = 0.0;
  for (int s = 0; s < n; ++s) total += per_subject[s];
  if (clamp_count) *clamp_count += clamps;
  return total;
}

double panel_loglik_serial(const ModelParams& params, const Dataset& data, int quad_nodes) {
  validate(data);
  double total = 0.0;
  long clamps = 0;
  for (const auto& subject : data.subjects)
    for (std::size_t i = 0; i < subject.trials.size(); ++i)
      total += log_observed(ccp(params, subject.trials[i], quad_nodes), subject.choices[i], clamps);
  return total;
}

double log_sum_exp(std::span<const double> x) {
  double m = -kInf;
  for (double v : x) m = std::max(m, v);
  if (m == -kInf) return -kInf;
  double acc = 0.0;
  for (double v : x)
    if (v != -kInf) acc += std::exp(v - m);
  return m + std::log(acc);
}

double mixture_loglik(const MixtureSpec& spec, const Dataset& data, int quad_nodes) {
  validate(spec);
  validate(data);
  const int k = static_cast<int>(spec.thetas.size());
  const int n = static_cast<int>(data.subjects.size());

  PanelEvaluator eval(data);
  std::vector<std::vector<double>> ll(k, std::vector<double>(n));
  for (int j = 0; j < k; ++j) eval.subject_logliks(spec.thetas[j], quad_nodes, ll[j]);

  double total = 0.0;
  std::vector<double> terms(k);
  for (int s = 0; s < n; ++s) {
    for (int j = 0; j < k; ++j)
      terms[j] = spec.lambdas[j] > 0.0 ? std::log(spec.lambdas[j]) + ll[j][s] : -kInf;
    total += log_sum_exp(terms);
  }
  return total;
}

double ec_loglik(const std::vector<ModelParams>& thetas, const std::vector<int>& assignments,
                 const Dataset& data, int quad_nodes) {
  validate(data);
  if (assignments.size() != data.subjects.size())
    throw std::domain_error("ec_loglik: one assignment per subject required");
  const int k = static_cast<int>(thetas.size());
  double total = 0.0;
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const int a = assignments[s];
    if (a < 0 || a >= k) throw std::domain_error("ec_loglik: type index out of range");
    total += subject_loglik(thetas[a], data.subjects[s], quad_nodes);
  }
  return total;
}

PanelEvaluator::PanelEvaluator(const Dataset& data) {
  validate(data);
  std::map<std::tuple<double, double, int, double, int>, int> index;
  subject_counts_.resize(data.subjects.size());
  trial_cells_.resize(data.subjects.size());
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const Subject& subject = data.subjects[s];
    std::map<int, CellCount> counts;
    for (std::size_t i = 0; i < subject.trials.size(); ++i) {
      const Trial& t = subject.trials[i];
      const auto key = std::make_tuple(t.design.p_a, t.design.p_b, t.design.draws, t.prior, t.marked);
      auto [it, inserted] = index.emplace(key, static_cast<int>(cells_.size()));
      if (inserted) cells_.push_back(t);
      const int cell = it->second;
      auto& cc = counts[cell];
      cc.cell = cell;
      (subject.choices[i] ? cc.chose_a : cc.chose_b)++;
      trial_cells_[s].push_back({cell, subject.choices[i]});
      ++n_trials_;
    }
    subject_counts_[s].reserve(counts.size());
    for (const auto& [cell, cc] : counts) subject_counts_[s].push_back(cc);
  }
}

std::vector<double> PanelEvaluator::ccp_by_cell(const ModelParams& params, int quad_nodes) const {
  const int n = n_cells();
  std::vector<double> p(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int c = 0; c < n; ++c) p[c] = ccp(params, cells_[c], quad_nodes);
  return p;
}

void PanelEvaluator::subject_logliks(const ModelParams& params, int quad_nodes,
                                     std::span<double> out, long* clamp_count) const {
  if (static_cast<int>(out.size()) != n_subjects())
    throw std::invalid_argument("subject_logliks: output span has wrong size");
  const std::vector<double> p = ccp_by_cell(params, quad_nodes);
  long clamps = 0;
  const int n = n_subjects();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : clamps)
#endif
  for (int s = 0; s < n; ++s) {
    double ll = 0.0;
    long local = 0;
    for (const CellCount& cc : subject_counts_[s]) {
      long hit = 0;
      if (cc.chose_a) {
        ll += cc.chose_a * log_observed(p[cc.cell], 1, hit);
        local += hit * cc.chose_a;
      }
      hit = 0;
      if (cc.chose_b) {
        ll += cc.chose_b * log_observed(p[cc.cell], 0, hit);
        local += hit * cc.chose_b;
      }
    }
    clamps += local;
    out[s] = ll;
  }
  if (clamp_count) *clamp_count += clamps;
}

double PanelEvaluator::total_loglik(const ModelParams& params, int quad_nodes,
                                    long* clamp_count) const {
  std::vector<double> per_subject(n_subjects());
  subject_logliks(params, quad_nodes, per_subject, clamp_count);
  double total = 0.0;
  for (double v : per_subject) total += v;
  return total;
}

double PanelEvaluator::weighted_loglik(const ModelParams& params, int quad_nodes,
                                       std::span<const double> subject_weights,
                                       long* clamp_count) const {
  if (static_cast<int>(subject_weights.size()) != n_subjects())
    throw std::invalid_argument("weighted_loglik: one weight per subject required");
  std::vector<double> per_subject(n_subjects());
  subject_logliks(params, quad_nodes, per_subject, clamp_count);
  double total = 0.0;
  for (int s = 0; s < n_subjects(); ++s) total += subject_weights[s] * per_subject[s];
  return total;
}

std::vector<double> PanelEvaluator::per_trial_loglik(const ModelParams& params,
                                                     int quad_nodes) const {
  const std::vector<double> p = ccp_by_cell(params, quad_nodes);
  std::vector<double> out;
  out.reserve(n_trials_);
  long clamps = 0;
  for (const auto& subject : trial_cells_)
    for (const auto& [cell, y] : subject) out.push_back(log_observed(p[cell], y, clamps));
  return out;
}

}  // namespace cages
