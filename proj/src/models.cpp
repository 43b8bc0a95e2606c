#include "cages/models.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace cages {

namespace {

void require_nonnegative(double v, const char* what) {
  if (!(v >= 0.0)) throw std::domain_error(std::string(what) + " must be >= 0");
}

}  // namespace

int CutoffParams::cutoff_for(double prior) const {
  for (const auto& [p, c] : cutoffs)
    if (std::abs(p - prior) < 1e-9) return c;
  throw std::domain_error("cutoff rule: prior not mapped to a cutoff");
}

double belief_index(const BeliefParams& b, double llr_value, double lpr_value, double nu) {
  auto term = [](double coef, double v) { return coef == 0.0 ? 0.0 : coef * v; };
  return b.beta0 + term(b.beta1, llr_value) + term(b.beta2, lpr_value) + nu;
}

double subjective_posterior(const BeliefParams& b, double llr_value, double lpr_value, double nu) {
  return logistic(belief_index(b, llr_value, lpr_value, nu));
}

double choice_layer(double subjective, double sigma) {
  require_nonnegative(sigma, "choice_layer: sigma");
  if (sigma == 0.0) {
    if (subjective > 0.5) return 1.0;
    if (subjective < 0.5) return 0.0;
    return 0.5;
  }
  return logistic((2.0 * subjective - 1.0) / sigma);
}

double ccp_structural_logit_given_nu(const StructuralLogitParams& p, const Trial& t, double nu) {
  const PosteriorPair post = bayes_posterior(t);
  return choice_layer(subjective_posterior(p.beliefs, post.llr, post.lpr, nu), p.sigma);
}

double ccp_structural_logit(const StructuralLogitParams& p, const Trial& t) {
  if (p.eta != 0.0)
    throw std::invalid_argument("ccp_structural_logit: eta must be 0; use ccp_mixed");
  return ccp_structural_logit_given_nu(p, t, 0.0);
}

const GaussHermite& gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be >= 1");
  static std::mutex mutex;
  static std::map<int, GaussHermite> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  gsl_integration_fixed_workspace* w =
      gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, n, 0.0, 1.0, 0.0, 0.0);
  if (w == nullptr) throw std::runtime_error("gauss_hermite: node allocation failed");
  GaussHermite rule;
  rule.nodes.assign(gsl_integration_fixed_nodes(w), gsl_integration_fixed_nodes(w) + n);
  rule.weights.assign(gsl_integration_fixed_weights(w), gsl_integration_fixed_weights(w) + n);
  gsl_integration_fixed_free(w);
  return cache.emplace(n, std::move(rule)).first->second;
}

double ccp_mixed(const StructuralLogitParams& p, const Trial& t, int nodes) {
  require_nonnegative(p.eta, "ccp_mixed: eta");
  if (p.eta == 0.0) return ccp_structural_logit_given_nu(p, t, 0.0);
  if (nodes < 8) throw std::invalid_argument("ccp_mixed: need at least 8 quadrature nodes");

  const PosteriorPair post = bayes_posterior(t);
  const double index = belief_index(p.beliefs, post.llr, post.lpr, 0.0);
  if (p.sigma == 0.0) {
    // Deterministic choice layer: P(index + eta nu > 0) in closed form. With
    // eta = 1 this is exactly the structural probit.
    if (std::isinf(index)) return index > 0 ? 1.0 : 0.0;
    return normal_cdf(index / p.eta);
  }
  const GaussHermite& rule = gauss_hermite(nodes);
  // E_nu[P] with nu ~ N(0,1): substitute nu = sqrt(2) x into the Hermite rule
  // and normalize by the realized weight sum.
  double acc = 0.0, wsum = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double nu = std::sqrt(2.0) * rule.nodes[i];
    acc += rule.weights[i] * choice_layer(logistic(index + p.eta * nu), p.sigma);
    wsum += rule.weights[i];
  }
  return acc / wsum;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ccp_structural_probit(const BeliefParams& b, const Trial& t) {
  const PosteriorPair post = bayes_posterior(t);
  return normal_cdf(belief_index(b, post.llr, post.lpr, 0.0));
}

double ccp_cutoff_rule(const CutoffParams& p, const Trial& t) {
  validate(t);
  if (p.epsilon < 0.0 || p.epsilon > 1.0)
    throw std::domain_error("cutoff rule: epsilon outside [0,1]");
  const int c = p.cutoff_for(t.prior);
  if (c < -1 || c > t.design.draws)
    throw std::domain_error("cutoff rule: threshold outside [-1, draws]");
  return cutoff_chooses_a(t.design, c, t.marked) ? 1.0 - p.epsilon / 2.0 : p.epsilon / 2.0;
}

double ccp_nn5(const Nn5Params& p, const Trial& t) {
  const PosteriorPair post = bayes_posterior(t);
  const double pi_s = subjective_posterior(p.beliefs, post.llr, post.lpr, 0.0);
  return logistic(p.out_bias + p.out_weight * pi_s);
}

double ccp_reduced_logit_raw(const RawLogitParams& p, const Trial& t) {
  validate(t);
  return logistic(p.gamma0 + p.gamma_d * t.marked + p.gamma_pi * t.prior);
}

double ccp_reduced_logit_transformed(const BeliefParams& b, const Trial& t) {
  if (t.prior == 0.0 || t.prior == 1.0)
    throw std::domain_error("reduced logit (transformed): endpoint prior has infinite LPR");
  const PosteriorPair post = bayes_posterior(t);
  return logistic(belief_index(b, post.llr, post.lpr, 0.0));
}

double noisy_bayesian(double sigma, const Trial& t) {
  return ccp_structural_logit(StructuralLogitParams{BeliefParams{0.0, 1.0, 1.0}, sigma, 0.0}, t);
}

double ccp(const ModelParams& params, const Trial& t, int quad_nodes) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, StructuralLogitParams>)
          return p.eta > 0.0 ? ccp_mixed(p, t, quad_nodes) : ccp_structural_logit_given_nu(p, t, 0.0);
        else if constexpr (std::is_same_v<T, ProbitParams>)
          return ccp_structural_probit(p.beliefs, t);
        else if constexpr (std::is_same_v<T, CutoffParams>)
          return ccp_cutoff_rule(p, t);
        else if constexpr (std::is_same_v<T, Nn5Params>)
          return ccp_nn5(p, t);
        else if constexpr (std::is_same_v<T, RawLogitParams>)
          return ccp_reduced_logit_raw(p, t);
        else
          return ccp_reduced_logit_transformed(p.beliefs, t);
      },
      params);
}

double ccp_given_nu(const ModelParams& params, const Trial& t, double nu) {
  if (const auto* sl = std::get_if<StructuralLogitParams>(&params))
    return ccp_structural_logit_given_nu(*sl, t, nu);
  return ccp(params, t);
}

}  // namespace cages
