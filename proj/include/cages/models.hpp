#pragma once

#include <utility>
#include <variant>
#include <vector>

#include "cages/design.hpp"

namespace cages {

// Belief weights on (1, LLR, LPR). The Bayesian point is (0, 1, 1).
struct BeliefParams {
  double beta0 = 0.0;
  double beta1 = 1.0;
  double beta2 = 1.0;
};

// Two-layer model: logistic subjective posterior in (LLR, LPR) plus a logit
// choice layer with extreme-value scale sigma. eta scales the N(0,1)
// calculational error nu. The reward for a correct choice is normalized to 1,
// so sigma is really a noise-to-reward ratio. sigma = 0 and eta = 0 are legal
// degenerate values with analytic limits.
struct StructuralLogitParams {
  BeliefParams beliefs;
  double sigma = 0.0;
  double eta = 0.0;
};

// Prior-specific integer thresholds plus a guessing probability. epsilon is
// the paper's cutoff-model error rate (renamed: sigma is taken by the logit).
struct CutoffParams {
  std::vector<std::pair<double, int>> cutoffs;  // (prior, threshold)
  double epsilon = 0.0;

  // Throws std::domain_error when the prior is not mapped (1e-9 tolerance).
  int cutoff_for(double prior) const;
};

// Five-parameter two-layer network; the structural logit is the restriction
// out_bias = -out_weight / 2.
struct Nn5Params {
  BeliefParams beliefs;
  double out_weight = 0.0;
  double out_bias = 0.0;
};

// Reduced-form logit on the raw covariates (1, marked, prior).
struct RawLogitParams {
  double gamma0 = 0.0;
  double gamma_d = 0.0;
  double gamma_pi = 0.0;
};

// Structural probit: Phi(beta0 + beta1 LLR + beta2 LPR).
struct ProbitParams {
  BeliefParams beliefs;
};

// Reduced-form logit on the transformed covariates (1, LLR, LPR); rejects
// endpoint priors, whose LPR is infinite.
struct TransformedLogitParams {
  BeliefParams beliefs;
};

using ModelParams = std::variant<StructuralLogitParams, ProbitParams, CutoffParams, Nn5Params,
                                 RawLogitParams, TransformedLogitParams>;

// beta0 + beta1*llr + beta2*lpr + nu, with a zero coefficient switching its
// covariate off even when that covariate is infinite (endpoint priors).
double belief_index(const BeliefParams& b, double llr_value, double lpr_value, double nu = 0.0);

// logistic(belief_index); the perceived posterior probability of cage A.
double subjective_posterior(const BeliefParams& b, double llr_value, double lpr_value,
                            double nu = 0.0);

// Logit choice layer 1/(1 + exp((1 - 2 pi_s)/sigma)) with reward 1.
// sigma = 0 returns the deterministic limit (1 / 0 / one-half at a tie).
double choice_layer(double subjective, double sigma);

// CCP evaluators. Each is a pure function of (params, trial).
double ccp_structural_logit(const StructuralLogitParams& p, const Trial& t);  // requires eta == 0
double ccp_structural_logit_given_nu(const StructuralLogitParams& p, const Trial& t, double nu);
double ccp_mixed(const StructuralLogitParams& p, const Trial& t, int nodes = 32);
double ccp_structural_probit(const BeliefParams& b, const Trial& t);
double ccp_cutoff_rule(const CutoffParams& p, const Trial& t);
double ccp_nn5(const Nn5Params& p, const Trial& t);
double ccp_reduced_logit_raw(const RawLogitParams& p, const Trial& t);
double ccp_reduced_logit_transformed(const BeliefParams& b, const Trial& t);
double noisy_bayesian(double sigma, const Trial& t);

// Generic dispatch; quad_nodes only matters for structural logits with eta > 0.
double ccp(const ModelParams& params, const Trial& t, int quad_nodes = 32);
// Conditional on a realized calculational error (the simulation path); models
// without nu ignore it.
double ccp_given_nu(const ModelParams& params, const Trial& t, double nu);

// Gauss-Hermite rule for weight exp(-x^2); cached per node count.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite(int n);

double normal_cdf(double x);

}  // namespace cages
