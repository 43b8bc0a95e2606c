#include "cages/design.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cages {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_probability(double p) { return p >= 0.0 && p <= 1.0 && std::isfinite(p); }

// log(p^d (1-p)^(D-d)) without the binomial coefficient, with the 0*log(0)=0
// convention so degenerate cages (p in {0,1}) work.
double log_pmf_kernel(int d, int draws, double p) {
  double out = 0.0;
  if (d > 0) {
    if (p == 0.0) return -kInf;
    out += d * std::log(p);
  }
  if (draws - d > 0) {
    if (p == 1.0) return -kInf;
    out += (draws - d) * std::log1p(-p);
  }
  return out;
}

}  // namespace

char to_char(Cage c) { return c == Cage::A ? 'A' : 'B'; }

void validate(const Design& design) {
  if (!is_probability(design.p_a)) throw std::domain_error("design: p_a outside [0,1]");
  if (!is_probability(design.p_b)) throw std::domain_error("design: p_b outside [0,1]");
  if (design.draws < 0) throw std::domain_error("design: draws must be >= 0");
}

void validate(const Trial& trial) {
  validate(trial.design);
  if (!is_probability(trial.prior)) throw std::domain_error("trial: prior outside [0,1]");
  if (trial.marked < 0 || trial.marked > trial.design.draws)
    throw std::domain_error("trial: marked outside [0, draws]");
}

bool informative(const Design& design) { return design.p_a != design.p_b; }

double log_binomial_pmf(int successes, int draws, double p) {
  if (draws < 0 || successes < 0 || successes > draws)
    throw std::domain_error("binomial_pmf: successes outside [0, draws]");
  if (!is_probability(p)) throw std::domain_error("binomial_pmf: p outside [0,1]");
  const double kernel = log_pmf_kernel(successes, draws, p);
  if (kernel == -kInf) return -kInf;
  const double lchoose =
      std::lgamma(draws + 1.0) - std::lgamma(successes + 1.0) - std::lgamma(draws - successes + 1.0);
  return lchoose + kernel;
}

double binomial_pmf(int successes, int draws, double p) {
  const double lp = log_binomial_pmf(successes, draws, p);
  return lp == -kInf ? 0.0 : std::exp(lp);
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double llr(const Trial& trial) {
  validate(trial);
  const double la = log_pmf_kernel(trial.marked, trial.design.draws, trial.design.p_a);
  const double lb = log_pmf_kernel(trial.marked, trial.design.draws, trial.design.p_b);
  if (la == -kInf && lb == -kInf)
    throw std::domain_error("llr: both cage pmfs are zero for this sample");
  if (la == -kInf) return -kInf;
  if (lb == -kInf) return kInf;
  return la - lb;
}

double lpr(double prior) {
  if (!is_probability(prior)) throw std::domain_error("lpr: prior outside [0,1]");
  if (prior == 0.0) return -kInf;
  if (prior == 1.0) return kInf;
  return std::log(prior) - std::log1p(-prior);
}

PosteriorPair bayes_posterior(const Trial& trial) {
  validate(trial);
  const double fa = binomial_pmf(trial.marked, trial.design.draws, trial.design.p_a);
  const double fb = binomial_pmf(trial.marked, trial.design.draws, trial.design.p_b);
  const double num = trial.prior * fa;
  const double denom = num + (1.0 - trial.prior) * fb;
  if (denom == 0.0)
    throw std::domain_error("bayes_posterior: zero denominator (impossible sample)");
  PosteriorPair out;
  out.pi_a = num / denom;
  out.llr = llr(trial);
  out.lpr = lpr(trial.prior);
  return out;
}

Cage bayes_choice(const Trial& trial) {
  return bayes_posterior(trial).pi_a >= 0.5 ? Cage::A : Cage::B;
}

int bayes_cutoff(const Design& design, double prior) {
  validate(design);
  if (design.p_a == design.p_b)
    throw std::domain_error("bayes_cutoff: p_a == p_b has no informative cutoff");
  if (!is_probability(prior)) throw std::domain_error("bayes_cutoff: prior outside [0,1]");

  const int draws = design.draws;
  const bool mirrored = design.p_a < design.p_b;
  // Count of the statistic the rule thresholds: marked for p_a > p_b,
  // draws - marked for the reversed orientation.
  int c = -1;
  bool seen_a = false;
  for (int stat = 0; stat <= draws; ++stat) {
    const int marked = mirrored ? draws - stat : stat;
    const bool a = bayes_choice(Trial{prior, marked, design}) == Cage::A;
    if (!a) {
      if (seen_a)
        throw std::logic_error("bayes_cutoff: choice not monotone in the sample count");
      c = stat;
    } else {
      seen_a = true;
    }
  }
  return c;
}

bool cutoff_chooses_a(const Design& design, int cutoff, int marked) {
  if (design.p_a == design.p_b)
    throw std::domain_error("cutoff_chooses_a: p_a == p_b has no orientation");
  const int stat = design.p_a > design.p_b ? marked : design.draws - marked;
  return stat > cutoff;
}

}  // namespace cages
