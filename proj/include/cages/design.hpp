#pragma once

#include <string>

namespace cages {

// Two-cage binomial experiment: p_a / p_b are the marked-ball rates in cage A
// and B, `draws` balls are drawn with replacement from the selected cage.
struct Design {
  double p_a = 0.5;
  double p_b = 0.5;
  int draws = 0;
};

enum class Cage { A, B };

char to_char(Cage c);

// One observation: prior probability of cage A and the marked-ball count.
struct Trial {
  double prior = 0.5;
  int marked = 0;
  Design design;
};

// Posterior probability of cage A together with the two log-odds transforms.
// Invariant: pi_a == logistic(llr + lpr) whenever both terms are finite.
struct PosteriorPair {
  double pi_a = 0.0;
  double llr = 0.0;
  double lpr = 0.0;
};

// Throw std::domain_error on out-of-range fields.
void validate(const Design& design);
void validate(const Trial& trial);

// Equal cage rates force LLR == 0 for every sample: legal, but the sample
// carries no information and cutoff-style operations reject such designs.
bool informative(const Design& design);

// C(draws, d) p^d (1-p)^(draws-d), computed in log space via lgamma.
double binomial_pmf(int successes, int draws, double p);
// Returns -infinity when the pmf is exactly zero.
double log_binomial_pmf(int successes, int draws, double p);

double logistic(double x);

// log f(d | p_a, D) - log f(d | p_b, D); the binomial coefficients cancel.
// Signed infinity when exactly one pmf is zero; both zero is a domain error.
double llr(const Trial& trial);

// log(prior / (1 - prior)); signed infinity at the endpoints.
double lpr(double prior);

PosteriorPair bayes_posterior(const Trial& trial);

// Lemma-style optimal rule: A iff the posterior is >= 1/2 (ties go to A).
Cage bayes_choice(const Trial& trial);

// Integer cutoff c in [-1, draws] reproducing bayes_choice:
//   p_a > p_b: choose A iff marked > c
//   p_a < p_b: choose A iff (draws - marked) > c   (reversed designs)
// c = draws means "never A", c = -1 means "always A". p_a == p_b is a
// domain error (no informative cutoff).
int bayes_cutoff(const Design& design, double prior);

// Evaluates the cutoff condition above for either orientation.
bool cutoff_chooses_a(const Design& design, int cutoff, int marked);

}  // namespace cages
