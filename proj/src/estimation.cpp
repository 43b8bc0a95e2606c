#include "cages/estimation.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_eigen.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_linalg.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cages/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cages {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kRoleRestart = 101;
constexpr std::uint64_t kRoleEmInit = 102;

// GSL aborts on errors by default; turn that off exactly once.
const int kGslQuiet = [] {
  gsl_set_error_handler_off();
  return 0;
}();

double safe_log(double v) { return std::log(std::max(v, 1e-300)); }

std::string format_prior(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", p);
  return buf;
}

// ---------------------------------------------------------------------------
// Family metadata

const BeliefParams& beliefs_of(const ModelParams& p) {
  if (const auto* sl = std::get_if<StructuralLogitParams>(&p)) return sl->beliefs;
  if (const auto* pr = std::get_if<ProbitParams>(&p)) return pr->beliefs;
  if (const auto* nn = std::get_if<Nn5Params>(&p)) return nn->beliefs;
  if (const auto* tl = std::get_if<TransformedLogitParams>(&p)) return tl->beliefs;
  throw std::invalid_argument("model has no belief parameters");
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::structural_logit: return "structural-logit";
    case Family::mixed_logit: return "mixed-logit";
    case Family::noisy_bayes: return "noisy-bayes";
    case Family::bayes_beliefs: return "bayes-beliefs";
    case Family::structural_probit: return "probit";
    case Family::reduced_logit_raw: return "logit";
    case Family::reduced_logit_transformed: return "logit-llr";
    case Family::nn5: return "nn5";
    case Family::cutoff_rule: return "cutoff";
    case Family::intercept_logit: return "intercept";
  }
  throw std::logic_error("unknown family");
}

Family family_from_name(const std::string& name) {
  for (Family f : {Family::structural_logit, Family::mixed_logit, Family::noisy_bayes,
                   Family::bayes_beliefs, Family::structural_probit, Family::reduced_logit_raw,
                   Family::reduced_logit_transformed, Family::nn5, Family::cutoff_rule,
                   Family::intercept_logit})
    if (family_name(f) == name) return f;
  throw std::invalid_argument("unknown model family: " + name);
}

int n_free_params(Family f, const ModelParams* example) {
  switch (f) {
    case Family::structural_logit: return 4;
    case Family::mixed_logit: return 5;
    case Family::noisy_bayes: return 1;
    case Family::bayes_beliefs: return 2;
    case Family::structural_probit: return 3;
    case Family::reduced_logit_raw: return 3;
    case Family::reduced_logit_transformed: return 3;
    case Family::nn5: return 5;
    case Family::intercept_logit: return 1;
    case Family::cutoff_rule: {
      if (!example) throw std::invalid_argument("cutoff rule: need params to count priors");
      return static_cast<int>(std::get<CutoffParams>(*example).cutoffs.size()) + 1;
    }
  }
  throw std::logic_error("unknown family");
}

std::vector<std::string> param_names(Family f, const ModelParams* example) {
  switch (f) {
    case Family::structural_logit: return {"beta0", "beta1", "beta2", "sigma"};
    case Family::mixed_logit: return {"beta0", "beta1", "beta2", "sigma", "eta"};
    case Family::noisy_bayes: return {"sigma"};
    case Family::bayes_beliefs: return {"sigma", "eta"};
    case Family::structural_probit: return {"beta0", "beta1", "beta2"};
    case Family::reduced_logit_raw: return {"gamma0", "gamma_d", "gamma_pi"};
    case Family::reduced_logit_transformed: return {"beta0", "beta1", "beta2"};
    case Family::nn5: return {"beta0", "beta1", "beta2", "out_weight", "out_bias"};
    case Family::intercept_logit: return {"gamma0"};
    case Family::cutoff_rule: {
      if (!example) throw std::invalid_argument("cutoff rule: need params for names");
      std::vector<std::string> names;
      for (const auto& [prior, c] : std::get<CutoffParams>(*example).cutoffs)
        names.push_back("c[" + format_prior(prior) + "]");
      names.push_back("epsilon");
      return names;
    }
  }
  throw std::logic_error("unknown family");
}

std::vector<double> natural_params(Family f, const ModelParams& p) {
  switch (f) {
    case Family::structural_logit: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {sl.beliefs.beta0, sl.beliefs.beta1, sl.beliefs.beta2, sl.sigma};
    }
    case Family::mixed_logit: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {sl.beliefs.beta0, sl.beliefs.beta1, sl.beliefs.beta2, sl.sigma, sl.eta};
    }
    case Family::noisy_bayes: return {std::get<StructuralLogitParams>(p).sigma};
    case Family::bayes_beliefs: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {sl.sigma, sl.eta};
    }
    case Family::structural_probit:
    case Family::reduced_logit_transformed: {
      const auto& b = beliefs_of(p);
      return {b.beta0, b.beta1, b.beta2};
    }
    case Family::reduced_logit_raw: {
      const auto& g = std::get<RawLogitParams>(p);
      return {g.gamma0, g.gamma_d, g.gamma_pi};
    }
    case Family::nn5: {
      const auto& nn = std::get<Nn5Params>(p);
      return {nn.beliefs.beta0, nn.beliefs.beta1, nn.beliefs.beta2, nn.out_weight, nn.out_bias};
    }
    case Family::intercept_logit: return {std::get<RawLogitParams>(p).gamma0};
    case Family::cutoff_rule: {
      const auto& c = std::get<CutoffParams>(p);
      std::vector<double> out;
      for (const auto& [prior, cut] : c.cutoffs) out.push_back(static_cast<double>(cut));
      out.push_back(c.epsilon);
      return out;
    }
  }
  throw std::logic_error("unknown family");
}

std::vector<double> pack_transformed(Family f, const ModelParams& p) {
  switch (f) {
    case Family::structural_logit: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {sl.beliefs.beta0, sl.beliefs.beta1, sl.beliefs.beta2, safe_log(sl.sigma)};
    }
    case Family::mixed_logit: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {sl.beliefs.beta0, sl.beliefs.beta1, sl.beliefs.beta2, safe_log(sl.sigma),
              safe_log(sl.eta)};
    }
    case Family::noisy_bayes: return {safe_log(std::get<StructuralLogitParams>(p).sigma)};
    case Family::bayes_beliefs: {
      const auto& sl = std::get<StructuralLogitParams>(p);
      return {safe_log(sl.sigma), safe_log(sl.eta)};
    }
    case Family::structural_probit:
    case Family::reduced_logit_transformed:
    case Family::reduced_logit_raw:
    case Family::nn5:
    case Family::intercept_logit: return natural_params(f, p);
    case Family::cutoff_rule:
      throw std::invalid_argument("cutoff rule: integer thresholds are not packable");
  }
  throw std::logic_error("unknown family");
}

ModelParams unpack_transformed(Family f, std::span<const double> x) {
  const auto need = [&](int n) {
    if (static_cast<int>(x.size()) != n)
      throw std::invalid_argument("unpack_transformed: wrong parameter count");
  };
  switch (f) {
    case Family::structural_logit:
      need(4);
      return StructuralLogitParams{{x[0], x[1], x[2]}, std::exp(x[3]), 0.0};
    case Family::mixed_logit:
      need(5);
      return StructuralLogitParams{{x[0], x[1], x[2]}, std::exp(x[3]), std::exp(x[4])};
    case Family::noisy_bayes:
      need(1);
      return StructuralLogitParams{{0.0, 1.0, 1.0}, std::exp(x[0]), 0.0};
    case Family::bayes_beliefs:
      need(2);
      return StructuralLogitParams{{0.0, 1.0, 1.0}, std::exp(x[0]), std::exp(x[1])};
    case Family::structural_probit:
      need(3);
      return ProbitParams{{x[0], x[1], x[2]}};
    case Family::reduced_logit_transformed:
      need(3);
      return TransformedLogitParams{{x[0], x[1], x[2]}};
    case Family::reduced_logit_raw:
      need(3);
      return RawLogitParams{x[0], x[1], x[2]};
    case Family::nn5:
      need(5);
      return Nn5Params{{x[0], x[1], x[2]}, x[3], x[4]};
    case Family::intercept_logit:
      need(1);
      return RawLogitParams{x[0], 0.0, 0.0};
    case Family::cutoff_rule:
      throw std::invalid_argument("cutoff rule: integer thresholds are not packable");
  }
  throw std::logic_error("unknown family");
}

ModelParams params_from_natural(Family f, std::span<const double> natural) {
  const auto need = [&](int n) {
    if (static_cast<int>(natural.size()) != n)
      throw std::invalid_argument("params_from_natural: wrong parameter count");
  };
  switch (f) {
    case Family::structural_logit:
      need(4);
      return StructuralLogitParams{{natural[0], natural[1], natural[2]}, natural[3], 0.0};
    case Family::mixed_logit:
      need(5);
      return StructuralLogitParams{{natural[0], natural[1], natural[2]}, natural[3], natural[4]};
    case Family::noisy_bayes:
      need(1);
      return StructuralLogitParams{{0.0, 1.0, 1.0}, natural[0], 0.0};
    case Family::bayes_beliefs:
      need(2);
      return StructuralLogitParams{{0.0, 1.0, 1.0}, natural[0], natural[1]};
    case Family::structural_probit:
      need(3);
      return ProbitParams{{natural[0], natural[1], natural[2]}};
    case Family::reduced_logit_transformed:
      need(3);
      return TransformedLogitParams{{natural[0], natural[1], natural[2]}};
    case Family::reduced_logit_raw:
      need(3);
      return RawLogitParams{natural[0], natural[1], natural[2]};
    case Family::nn5:
      need(5);
      return Nn5Params{{natural[0], natural[1], natural[2]}, natural[3], natural[4]};
    case Family::intercept_logit:
      need(1);
      return RawLogitParams{natural[0], 0.0, 0.0};
    case Family::cutoff_rule:
      throw std::invalid_argument("params_from_natural: build CutoffParams directly");
  }
  throw std::logic_error("unknown family");
}

ModelParams default_params(Family f) {
  switch (f) {
    case Family::structural_logit: return StructuralLogitParams{{0.0, 1.0, 1.0}, 0.5, 0.0};
    case Family::mixed_logit: return StructuralLogitParams{{0.0, 1.0, 1.0}, 0.5, 0.5};
    case Family::noisy_bayes: return StructuralLogitParams{{0.0, 1.0, 1.0}, 0.5, 0.0};
    case Family::bayes_beliefs: return StructuralLogitParams{{0.0, 1.0, 1.0}, 0.5, 0.5};
    case Family::structural_probit: return ProbitParams{{0.0, 1.0, 1.0}};
    case Family::reduced_logit_transformed: return TransformedLogitParams{{0.0, 1.0, 1.0}};
    case Family::reduced_logit_raw: return RawLogitParams{0.0, 0.0, 0.0};
    case Family::nn5: return Nn5Params{{0.0, 1.0, 1.0}, 4.0, -2.0};
    case Family::intercept_logit: return RawLogitParams{0.0, 0.0, 0.0};
    case Family::cutoff_rule:
      throw std::invalid_argument("cutoff rule: no continuous default parameters");
  }
  throw std::logic_error("unknown family");
}

double aic(int n_params, double loglik) { return 2.0 * (n_params - loglik); }

double chi_square_sf(double statistic, int df) {
  if (df == 0) return statistic <= 1e-12 ? 1.0 : 0.0;
  return gsl_cdf_chisq_Q(statistic, df);
}

// ---------------------------------------------------------------------------
// Numerical utilities

Matrix hessian_fd(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> h(n);
  for (int i = 0; i < n; ++i) h[i] = 1e-4 * (1.0 + std::abs(x[i]));
  std::vector<double> p(x.begin(), x.end());
  const double f0 = f(p);

  Matrix out(n, n);
  for (int i = 0; i < n; ++i) {
    p[i] = x[i] + h[i];
    const double fp = f(p);
    p[i] = x[i] - h[i];
    const double fm = f(p);
    p[i] = x[i];
    out.at(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (int j = i + 1; j < n; ++j) {
      p[i] = x[i] + h[i];
      p[j] = x[j] + h[j];
      const double fpp = f(p);
      p[j] = x[j] - h[j];
      const double fpm = f(p);
      p[i] = x[i] - h[i];
      const double fmm = f(p);
      p[j] = x[j] + h[j];
      const double fmp = f(p);
      p[i] = x[i];
      p[j] = x[j];
      out.at(i, j) = out.at(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
    }
  }
  return out;
}

Matrix invert_symmetric(const Matrix& m, bool* rank_warning) {
  if (m.rows != m.cols) throw std::invalid_argument("invert_symmetric: matrix not square");
  const int n = m.rows;
  Matrix out(n, n);

  gsl_matrix* a = gsl_matrix_alloc(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) gsl_matrix_set(a, i, j, 0.5 * (m.at(i, j) + m.at(j, i)));

  if (gsl_linalg_cholesky_decomp1(a) == GSL_SUCCESS) {
    gsl_linalg_cholesky_invert(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = gsl_matrix_get(a, i, j);
    gsl_matrix_free(a);
    return out;
  }

  // Not positive definite: eigenvalue pseudo-inverse with a rank warning.
  if (rank_warning) *rank_warning = true;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) gsl_matrix_set(a, i, j, 0.5 * (m.at(i, j) + m.at(j, i)));
  gsl_matrix* evec = gsl_matrix_alloc(n, n);
  gsl_vector* eval = gsl_vector_alloc(n);
  gsl_eigen_symmv_workspace* w = gsl_eigen_symmv_alloc(n);
  gsl_eigen_symmv(a, eval, evec, w);
  gsl_eigen_symmv_free(w);
  double max_abs = 0.0;
  for (int i = 0; i < n; ++i) max_abs = std::max(max_abs, std::abs(gsl_vector_get(eval, i)));
  const double tol = 1e-12 * std::max(max_abs, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double lambda = gsl_vector_get(eval, k);
        if (std::abs(lambda) > tol)
          acc += gsl_matrix_get(evec, i, k) * gsl_matrix_get(evec, j, k) / lambda;
      }
      out.at(i, j) = acc;
    }
  gsl_matrix_free(a);
  gsl_matrix_free(evec);
  gsl_vector_free(eval);
  return out;
}

double delta_method_se(const Matrix& covariance, std::span<const double> gradient) {
  if (covariance.rows != static_cast<int>(gradient.size()))
    throw std::invalid_argument("delta_method_se: gradient length mismatch");
  double acc = 0.0;
  for (int i = 0; i < covariance.rows; ++i)
    for (int j = 0; j < covariance.cols; ++j)
      acc += gradient[i] * covariance.at(i, j) * gradient[j];
  return std::sqrt(std::max(acc, 0.0));
}

namespace {

struct NmProblem {
  const std::function<double(std::span<const double>)>* f = nullptr;
  std::vector<double> scratch;
};

double nm_eval(const gsl_vector* v, void* raw) {
  auto* problem = static_cast<NmProblem*>(raw);
  auto& x = problem->scratch;
  for (std::size_t i = 0; i < v->size; ++i) x[i] = gsl_vector_get(v, i);
  const double value = (*problem->f)(x);
  return std::isfinite(value) ? value : 1e300;
}

}  // namespace

SimplexResult minimize_simplex(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> start, int max_iter, double ll_tol) {
  const std::size_t n = start.size();
  NmProblem problem{&f, std::vector<double>(n)};

  gsl_multimin_function target;
  target.n = n;
  target.f = &nm_eval;
  target.params = &problem;

  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* step = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, start[i]);
    gsl_vector_set(step, i, 0.25 * (1.0 + std::abs(start[i])));
  }

  gsl_multimin_fminimizer* mini =
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(mini, &target, x, step);

  SimplexResult out;
  out.x.assign(start.begin(), start.end());
  out.fmin = kInf;
  double prev = kInf;
  int stall = 0;
  for (int iter = 1; iter <= max_iter; ++iter) {
    if (gsl_multimin_fminimizer_iterate(mini) != GSL_SUCCESS) break;
    out.iterations = iter;
    const double fval = mini->fval;
    const double size = gsl_multimin_fminimizer_size(mini);
    if (std::abs(prev - fval) <= ll_tol * (1.0 + std::abs(fval)))
      ++stall;
    else
      stall = 0;
    prev = fval;
    if (size < 1e-8 || stall >= 25) {
      out.converged = true;
      break;
    }
  }
  out.fmin = mini->fval;
  for (std::size_t i = 0; i < n; ++i) out.x[i] = gsl_vector_get(mini->x, i);
  gsl_multimin_fminimizer_free(mini);
  gsl_vector_free(x);
  gsl_vector_free(step);
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Inner weighted fits (shared by pooled MLE and the EM / EC M-steps)

struct InnerFit {
  ModelParams theta = RawLogitParams{};
  double loglik = -kInf;
  bool converged = false;
  int iterations = 0;
  bool boundary = false;
};

InnerFit fit_cutoff_weighted(const Dataset& data, std::span<const double> weights,
                             const FitConfig& cfg) {
  // Distinct priors, tolerance-matched; thresholds are searched within each
  // prior group's own draw range so they stay inside [-1, draws].
  std::vector<double> priors;
  std::vector<int> group_draws;
  int max_draws = 0;
  int orientation = 0;
  for (const auto& s : data.subjects)
    for (const auto& t : s.trials) {
      const int sign = t.design.p_a > t.design.p_b ? 1 : (t.design.p_a < t.design.p_b ? -1 : 0);
      if (sign == 0) throw std::domain_error("cutoff rule: p_a == p_b has no orientation");
      if (orientation == 0) orientation = sign;
      if (sign != orientation)
        throw std::domain_error("cutoff rule: mixed cutoff orientations in dataset");
      max_draws = std::max(max_draws, t.design.draws);
      bool found = false;
      for (std::size_t k = 0; k < priors.size(); ++k)
        if (std::abs(priors[k] - t.prior) < 1e-9) {
          group_draws[k] = std::min(group_draws[k], t.design.draws);
          found = true;
        }
      if (!found) {
        priors.push_back(t.prior);
        group_draws.push_back(t.design.draws);
      }
    }
  {
    std::vector<std::size_t> order(priors.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return priors[a] < priors[b]; });
    std::vector<double> sorted_priors;
    std::vector<int> sorted_draws;
    for (std::size_t k : order) {
      sorted_priors.push_back(priors[k]);
      sorted_draws.push_back(group_draws[k]);
    }
    priors = std::move(sorted_priors);
    group_draws = std::move(sorted_draws);
  }

  // For epsilon < 1 the per-prior likelihood is increasing in the match
  // count, so the optimal integer cutoffs are the weighted match argmax and
  // do not depend on epsilon. epsilon then has a closed-form MLE.
  const int n_cut = max_draws + 2;  // c in [-1, max_draws]
  std::vector<std::vector<double>> match(priors.size(), std::vector<double>(n_cut, 0.0));
  double total_weight = 0.0;
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const double w = weights[s];
    if (w == 0.0) continue;
    const Subject& subject = data.subjects[s];
    for (std::size_t i = 0; i < subject.trials.size(); ++i) {
      const Trial& t = subject.trials[i];
      std::size_t pi = 0;
      while (std::abs(priors[pi] - t.prior) >= 1e-9) ++pi;
      total_weight += w;
      for (int c = -1; c <= max_draws; ++c)
        if (static_cast<int>(cutoff_chooses_a(t.design, c, t.marked)) == subject.choices[i])
          match[pi][c + 1] += w;
    }
  }
  if (total_weight <= 0.0) throw std::domain_error("cutoff rule: no weighted observations");

  CutoffParams params;
  double matched = 0.0;
  for (std::size_t pi = 0; pi < priors.size(); ++pi) {
    int best = -1;
    for (int c = -1; c <= group_draws[pi]; ++c)
      if (match[pi][c + 1] > match[pi][best + 1]) best = c;
    params.cutoffs.emplace_back(priors[pi], best);
    matched += match[pi][best + 1];
  }
  const double miss_rate = 1.0 - matched / total_weight;
  params.epsilon = std::clamp(2.0 * miss_rate, 0.0, 1.0);

  InnerFit out;
  out.theta = params;
  out.converged = true;
  out.boundary = params.epsilon == 0.0 || params.epsilon == 1.0;
  (void)cfg;
  return out;
}

InnerFit maximize_weighted(Family f, const Dataset& data, const PanelEvaluator& eval,
                           std::span<const double> weights, const FitConfig& cfg,
                           const ModelParams* warm, int restarts) {
  if (f == Family::cutoff_rule) {
    InnerFit fit = fit_cutoff_weighted(data, weights, cfg);
    fit.loglik = eval.weighted_loglik(fit.theta, cfg.quad_nodes, weights);
    return fit;
  }

  const std::vector<double> x0 =
      pack_transformed(f, warm ? *warm : default_params(f));
  const int n = static_cast<int>(x0.size());

  const auto objective = [&](std::span<const double> x) -> double {
    return -eval.weighted_loglik(unpack_transformed(f, x), cfg.quad_nodes, weights);
  };

  std::vector<SimplexResult> runs(restarts);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> start = x0;
    if (r > 0) {
      CounterRng rng(cfg.seed, static_cast<std::uint64_t>(r), 0, kRoleRestart);
      for (int i = 0; i < n; ++i) start[i] += 0.75 * rng.normal();
    }
    runs[r] = minimize_simplex(objective, start, cfg.max_iter, cfg.ll_tol);
  }

  int best = 0;
  for (int r = 1; r < restarts; ++r)
    if (runs[r].fmin < runs[best].fmin) best = r;

  InnerFit out;
  out.theta = unpack_transformed(f, runs[best].x);
  out.loglik = -runs[best].fmin;
  out.converged = runs[best].converged;
  out.iterations = runs[best].iterations;
  return out;
}

// Generic Jacobian of the natural-parameter map at transformed x.
Matrix natural_jacobian(const std::function<std::vector<double>(std::span<const double>)>& to_nat,
                        std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> p(x.begin(), x.end());
  const int m = static_cast<int>(to_nat(p).size());
  Matrix jac(m, n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    p[j] = x[j] + h;
    const std::vector<double> up = to_nat(p);
    p[j] = x[j] - h;
    const std::vector<double> down = to_nat(p);
    p[j] = x[j];
    for (int i = 0; i < m; ++i) jac.at(i, j) = (up[i] - down[i]) / (2.0 * h);
  }
  return jac;
}

Matrix sandwich(const Matrix& jac, const Matrix& cov) {
  Matrix out(jac.rows, jac.rows);
  for (int i = 0; i < jac.rows; ++i)
    for (int j = 0; j < jac.rows; ++j) {
      double acc = 0.0;
      for (int a = 0; a < jac.cols; ++a)
        for (int b = 0; b < jac.cols; ++b) acc += jac.at(i, a) * cov.at(a, b) * jac.at(j, b);
      out.at(i, j) = acc;
    }
  return out;
}

void attach_covariance(FitResult& res,
                       const std::function<double(std::span<const double>)>& neg_loglik,
                       const std::function<std::vector<double>(std::span<const double>)>& to_nat,
                       std::span<const double> xhat) {
  bool warn = false;
  const Matrix hessian = hessian_fd(neg_loglik, xhat);
  const Matrix cov_x = invert_symmetric(hessian, &warn);
  const Matrix jac = natural_jacobian(to_nat, xhat);
  res.covariance = sandwich(jac, cov_x);
  res.rank_warning = res.rank_warning || warn;
  res.std_errors.resize(res.covariance.rows);
  for (int i = 0; i < res.covariance.rows; ++i) {
    const double v = res.covariance.at(i, i);
    res.std_errors[i] = v > 0.0 ? std::sqrt(v) : 0.0;
    if (v < -1e-10) res.rank_warning = true;
  }
}

bool all_choices_identical(const Dataset& data) {
  int first = -1;
  for (const auto& s : data.subjects)
    for (int y : s.choices) {
      if (first == -1) first = y;
      if (y != first) return false;
    }
  return true;
}

// Responsibilities and mixture loglik from a K x S loglik table, in log space.
double responsibilities(const std::vector<std::vector<double>>& ll,
                        std::span<const double> lambdas, Matrix& resp) {
  const int k = static_cast<int>(ll.size());
  const int n = static_cast<int>(ll[0].size());
  double total = 0.0;
  std::vector<double> terms(k);
  for (int s = 0; s < n; ++s) {
    for (int j = 0; j < k; ++j)
      terms[j] = lambdas[j] > 0.0 ? std::log(lambdas[j]) + ll[j][s] : -kInf;
    const double lse = log_sum_exp(terms);
    total += lse;
    for (int j = 0; j < k; ++j)
      resp.at(s, j) = terms[j] == -kInf ? 0.0 : std::exp(terms[j] - lse);
  }
  return total;
}

// Canonical type order: ascending noise scale, then slope (label switching).
std::pair<double, double> sort_key(Family f, const ModelParams& p) {
  const std::vector<std::string> names = param_names(f, &p);
  const std::vector<double> nat = natural_params(f, p);
  double noise = 0.0, slope = nat.empty() ? 0.0 : nat[0];
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == "sigma" || names[i] == "epsilon") noise = nat[i];
    if (names[i] == "beta1" || names[i] == "gamma_d") slope = nat[i];
  }
  return {noise, slope};
}

std::vector<double> softmax_lambdas(std::span<const double> a) {
  // Last-weight normalization: lambda_K = 1 / (1 + sum exp(a)).
  std::vector<double> lambdas(a.size() + 1);
  double denom = 1.0;
  for (double v : a) denom += std::exp(v);
  for (std::size_t i = 0; i < a.size(); ++i) lambdas[i] = std::exp(a[i]) / denom;
  lambdas.back() = 1.0 / denom;
  return lambdas;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pooled maximum likelihood

void validate(const FitConfig& config) {
  if (config.restarts < 1) throw std::invalid_argument("fit config: restarts must be >= 1");
  if (config.ll_tol <= 0.0) throw std::invalid_argument("fit config: ll_tol must be > 0");
  if (config.max_iter < 1 || config.em_max_iter < 1)
    throw std::invalid_argument("fit config: iteration limits must be >= 1");
}

FitResult fit_mle(Family f, const Dataset& data, const FitConfig& config) {
  validate(data);
  validate(config);
  require_interior_priors(data);

  PanelEvaluator eval(data);
  const std::vector<double> weights(eval.n_subjects(), 1.0);

  FitResult res;
  res.family = f;
  res.boundary = all_choices_identical(data);

  const InnerFit inner =
      maximize_weighted(f, data, eval, weights, config, nullptr, config.restarts);
  res.thetas = {inner.theta};
  res.lambdas = {1.0};
  res.converged = inner.converged;
  res.boundary = res.boundary || inner.boundary;
  res.iterations = inner.iterations;
  res.loglik = eval.total_loglik(inner.theta, config.quad_nodes, &res.clamp_count);
  res.n_params = n_free_params(f, &inner.theta);
  res.aic = aic(res.n_params, res.loglik);

  if (f == Family::cutoff_rule) {
    // Integer thresholds carry no standard errors; epsilon has the binomial
    // closed form 2 * sqrt((eps/2)(1 - eps/2) / n).
    const auto& cp = std::get<CutoffParams>(inner.theta);
    const int n = res.n_params;
    res.covariance = Matrix(n, n);
    res.std_errors.assign(n, 0.0);
    const double half = cp.epsilon / 2.0;
    const double se = 2.0 * std::sqrt(std::max(half * (1.0 - half), 0.0) / data.n_trials());
    res.std_errors.back() = se;
    res.covariance.at(n - 1, n - 1) = se * se;
  } else {
    const std::vector<double> xhat = pack_transformed(f, inner.theta);
    attach_covariance(
        res,
        [&](std::span<const double> x) {
          const double v =
              eval.weighted_loglik(unpack_transformed(f, x), config.quad_nodes, weights);
          return std::isfinite(v) ? -v : 1e300;
        },
        [&](std::span<const double> x) { return natural_params(f, unpack_transformed(f, x)); },
        xhat);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Finite mixture via EM

FitResult fit_mixture_em(Family f, int k, const Dataset& data, const FitConfig& config) {
  if (k < 1) throw std::invalid_argument("fit_mixture_em: k must be >= 1");
  validate(data);
  validate(config);
  require_interior_priors(data);

  PanelEvaluator eval(data);
  const int n_subj = eval.n_subjects();

  if (k == 1) {
    FitResult res = fit_mle(f, data, config);
    res.type_posteriors = Matrix(n_subj, 1);
    for (int s = 0; s < n_subj; ++s) res.type_posteriors.at(s, 0) = 1.0;
    res.em_loglik_path = {res.loglik};
    return res;
  }

  const std::vector<double> unit(n_subj, 1.0);
  const InnerFit pooled = maximize_weighted(f, data, eval, unit, config, nullptr, config.restarts);
  const bool packable = f != Family::cutoff_rule;

  struct EmRun {
    std::vector<ModelParams> thetas;
    std::vector<double> lambdas;
    std::vector<double> path;
    Matrix resp;
    bool converged = false;
    bool dropped = false;
    int sweeps = 0;
    double loglik = -kInf;
  };

  // EM runs are expensive; cap the number of random initializations.
  const int em_restarts = std::max(1, std::min(config.restarts, 5));
  EmRun best;
  FitConfig mstep_cfg = config;

  for (int run = 0; run < em_restarts; ++run) {
    EmRun cur;
    cur.lambdas.assign(k, 1.0 / k);
    cur.resp = Matrix(n_subj, k);
    for (int j = 0; j < k; ++j) {
      if (packable) {
        std::vector<double> x = pack_transformed(f, pooled.theta);
        CounterRng rng(config.seed, static_cast<std::uint64_t>(run) * k + j, 0, kRoleEmInit);
        const double scale = (run == 0 && j == 0) ? 0.0 : 0.6;
        for (double& xi : x) xi += scale * rng.normal();
        cur.thetas.push_back(unpack_transformed(f, x));
      } else {
        // Cutoff thetas are refit exactly in the M-step; seed with random
        // subject subsets to break symmetry.
        CounterRng rng(config.seed, static_cast<std::uint64_t>(run) * k + j, 0, kRoleEmInit);
        std::vector<double> w(n_subj);
        for (double& wi : w) wi = rng.uniform();
        cur.thetas.push_back(fit_cutoff_weighted(data, w, config).theta);
      }
    }

    std::vector<std::vector<double>> ll(k, std::vector<double>(n_subj));
    for (int j = 0; j < k; ++j) eval.subject_logliks(cur.thetas[j], config.quad_nodes, ll[j]);

    double prev = -kInf;
    for (int sweep = 1; sweep <= config.em_max_iter; ++sweep) {
      cur.sweeps = sweep;
      const double mix_ll = responsibilities(ll, cur.lambdas, cur.resp);
      // GEM ascent: the E-step is exact and the M-step never accepts a worse
      // point, so a decrease means a bug, not noise.
      if (std::isfinite(prev) && mix_ll < prev - 1e-7 * (1.0 + std::abs(mix_ll)))
        throw std::logic_error("fit_mixture_em: EM log-likelihood decreased");
      cur.path.push_back(mix_ll);
      if (std::isfinite(prev) &&
          std::abs(mix_ll - prev) <= config.ll_tol * (1.0 + std::abs(mix_ll))) {
        cur.converged = true;
        break;
      }
      prev = mix_ll;

      // M-step: responsibility-weighted refits; warm starts keep the sweep
      // a generalized-EM ascent.
      for (int j = 0; j < k; ++j) {
        std::vector<double> w(n_subj);
        double mass = 0.0;
        for (int s = 0; s < n_subj; ++s) {
          w[s] = cur.resp.at(s, j);
          mass += w[s];
        }
        cur.lambdas[j] = mass / n_subj;
        if (mass < 1e-8) {
          cur.dropped = true;
          cur.lambdas[j] = 0.0;
          continue;
        }
        const InnerFit step = maximize_weighted(f, data, eval, w, mstep_cfg, &cur.thetas[j], 1);
        cur.thetas[j] = step.theta;
        eval.subject_logliks(cur.thetas[j], config.quad_nodes, ll[j]);
      }
    }
    cur.loglik = cur.path.empty() ? -kInf : cur.path.back();
    if (cur.loglik > best.loglik) best = std::move(cur);
  }

  FitResult res;
  res.family = f;
  res.converged = best.converged;
  res.dropped_component = best.dropped;
  res.iterations = best.sweeps;
  res.em_loglik_path = best.path;

  // Canonical type order, then final responsibilities at the sorted solution.
  const std::vector<int> order = canonical_type_order(f, best.thetas);
  for (int j : order) {
    res.thetas.push_back(best.thetas[j]);
    res.lambdas.push_back(best.lambdas[j]);
  }
  std::vector<std::vector<double>> ll(k, std::vector<double>(n_subj));
  for (int j = 0; j < k; ++j) eval.subject_logliks(res.thetas[j], config.quad_nodes, ll[j]);
  res.type_posteriors = Matrix(n_subj, k);
  res.loglik = responsibilities(ll, res.lambdas, res.type_posteriors);

  const int p = n_free_params(f, &res.thetas[0]);
  res.n_params = k * p + (k - 1);
  res.aic = aic(res.n_params, res.loglik);
  res.clamp_count = 0;
  for (int j = 0; j < k; ++j) {
    long c = 0;
    std::vector<double> tmp(n_subj);
    eval.subject_logliks(res.thetas[j], config.quad_nodes, tmp, &c);
    res.clamp_count += c;
  }

  // Joint covariance over (theta_1..theta_K, lambda) unless a component died
  // or the family has integer parameters.
  const bool lambda_interior =
      std::all_of(res.lambdas.begin(), res.lambdas.end(), [](double l) { return l > 1e-12; });
  if (packable && lambda_interior) {
    std::vector<double> x;
    for (const auto& theta : res.thetas) {
      const std::vector<double> xt = pack_transformed(f, theta);
      x.insert(x.end(), xt.begin(), xt.end());
    }
    for (int j = 0; j < k - 1; ++j)
      x.push_back(std::log(res.lambdas[j] / res.lambdas[k - 1]));

    const int px = p;
    const auto unpack_all = [&, px](std::span<const double> v) {
      MixtureSpec out;
      for (int j = 0; j < k; ++j)
        out.thetas.push_back(unpack_transformed(f, v.subspan(j * px, px)));
      out.lambdas = softmax_lambdas(v.subspan(static_cast<std::size_t>(k) * px, k - 1));
      return out;
    };
    attach_covariance(
        res,
        [&](std::span<const double> v) {
          const MixtureSpec s = unpack_all(v);
          std::vector<std::vector<double>> tll(k, std::vector<double>(n_subj));
          for (int j = 0; j < k; ++j) eval.subject_logliks(s.thetas[j], config.quad_nodes, tll[j]);
          Matrix scratch(n_subj, k);
          const double v2 = responsibilities(tll, s.lambdas, scratch);
          return std::isfinite(v2) ? -v2 : 1e300;
        },
        [&](std::span<const double> v) {
          const MixtureSpec s = unpack_all(v);
          std::vector<double> nat;
          for (const auto& theta : s.thetas) {
            const std::vector<double> nt = natural_params(f, theta);
            nat.insert(nat.end(), nt.begin(), nt.end());
          }
          nat.insert(nat.end(), s.lambdas.begin(), s.lambdas.end());
          return nat;
        },
        x);
  } else {
    res.rank_warning = true;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Estimation-Classification

FitResult fit_ec(Family f, int k, const Dataset& data, const FitConfig& config) {
  if (k < 1) throw std::invalid_argument("fit_ec: k must be >= 1");
  validate(data);
  validate(config);
  require_interior_priors(data);
  const int n_subj = static_cast<int>(data.subjects.size());
  if (n_subj < k) throw std::invalid_argument("fit_ec: need at least k subjects");

  if (k == 1) {
    FitResult res = fit_mle(f, data, config);
    res.assignments.assign(n_subj, 0);
    res.type_posteriors = Matrix(n_subj, 1);
    for (int s = 0; s < n_subj; ++s) res.type_posteriors.at(s, 0) = 1.0;
    return res;
  }

  PanelEvaluator eval(data);
  // Starting from the EM solution makes the best-response EC value at least
  // the mixture value (max over types >= the lambda-weighted log average).
  FitResult em = fit_mixture_em(f, k, data, config);
  std::vector<ModelParams> thetas = em.thetas;

  std::vector<std::vector<double>> ll(k, std::vector<double>(n_subj));
  for (int j = 0; j < k; ++j) eval.subject_logliks(thetas[j], config.quad_nodes, ll[j]);

  const auto assign = [&](std::vector<int>& a) {
    double total = 0.0;
    for (int s = 0; s < n_subj; ++s) {
      int arg = 0;
      for (int j = 1; j < k; ++j)
        if (ll[j][s] > ll[arg][s]) arg = j;
      a[s] = arg;
      total += ll[arg][s];
    }
    return total;
  };

  std::vector<int> assignments(n_subj);
  double ec_ll = assign(assignments);

  std::vector<ModelParams> best_thetas = thetas;
  std::vector<int> best_assignments = assignments;
  double best_ll = ec_ll;
  bool converged = false;
  bool dropped = false;
  int sweeps = 0;
  std::vector<double> path{ec_ll};

  for (int sweep = 1; sweep <= config.em_max_iter; ++sweep) {
    sweeps = sweep;
    for (int j = 0; j < k; ++j) {
      std::vector<double> w(n_subj, 0.0);
      int count = 0;
      for (int s = 0; s < n_subj; ++s)
        if (assignments[s] == j) {
          w[s] = 1.0;
          ++count;
        }
      if (count == 0) {
        dropped = true;
        continue;
      }
      const InnerFit step = maximize_weighted(f, data, eval, w, config, &thetas[j], 1);
      thetas[j] = step.theta;
      eval.subject_logliks(thetas[j], config.quad_nodes, ll[j]);
    }
    std::vector<int> next(n_subj);
    ec_ll = assign(next);
    path.push_back(ec_ll);
    if (ec_ll > best_ll) {
      best_ll = ec_ll;
      best_thetas = thetas;
      best_assignments = next;
    }
    if (next == assignments) {
      converged = true;
      break;
    }
    assignments = std::move(next);
  }

  FitResult res;
  res.family = f;
  res.converged = converged;
  res.dropped_component = dropped;
  res.iterations = sweeps;
  res.em_loglik_path = path;

  const std::vector<int> order = canonical_type_order(f, best_thetas);
  std::vector<int> remap(k);
  for (int pos = 0; pos < k; ++pos) remap[order[pos]] = pos;
  for (int j : order) res.thetas.push_back(best_thetas[j]);
  res.assignments.resize(n_subj);
  res.lambdas.assign(k, 0.0);
  for (int s = 0; s < n_subj; ++s) {
    res.assignments[s] = remap[best_assignments[s]];
    res.lambdas[res.assignments[s]] += 1.0 / n_subj;
  }
  res.type_posteriors = Matrix(n_subj, k);
  for (int s = 0; s < n_subj; ++s) res.type_posteriors.at(s, res.assignments[s]) = 1.0;

  res.loglik = ec_loglik(res.thetas, res.assignments, data, config.quad_nodes);
  const int p = n_free_params(f, &res.thetas[0]);
  res.n_params = k * p + (k - 1);
  res.aic = aic(res.n_params, res.loglik);
  for (int j = 0; j < k; ++j) {
    long c = 0;
    std::vector<double> tmp(n_subj);
    eval.subject_logliks(res.thetas[j], config.quad_nodes, tmp, &c);
    res.clamp_count += c;
  }

  // Block-diagonal covariance: per-type Hessian on the assigned subjects,
  // lambda standard errors from the multinomial counts.
  const bool packable = f != Family::cutoff_rule;
  const int nat_dim = k * p + k;
  res.covariance = Matrix(nat_dim, nat_dim);
  res.std_errors.assign(nat_dim, 0.0);
  if (packable) {
    for (int j = 0; j < k; ++j) {
      std::vector<double> w(n_subj, 0.0);
      for (int s = 0; s < n_subj; ++s) w[s] = res.assignments[s] == j ? 1.0 : 0.0;
      FitResult block;
      const std::vector<double> xj = pack_transformed(f, res.thetas[j]);
      attach_covariance(
          block,
          [&](std::span<const double> x) {
            const double v =
                eval.weighted_loglik(unpack_transformed(f, x), config.quad_nodes, w);
            return std::isfinite(v) ? -v : 1e300;
          },
          [&](std::span<const double> x) { return natural_params(f, unpack_transformed(f, x)); },
          xj);
      res.rank_warning = res.rank_warning || block.rank_warning;
      for (int a = 0; a < p; ++a) {
        res.std_errors[j * p + a] = block.std_errors[a];
        for (int b = 0; b < p; ++b)
          res.covariance.at(j * p + a, j * p + b) = block.covariance.at(a, b);
      }
    }
  } else {
    res.rank_warning = true;
  }
  for (int j = 0; j < k; ++j) {
    const double l = res.lambdas[j];
    const double se = std::sqrt(std::max(l * (1.0 - l), 0.0) / n_subj);
    res.std_errors[k * p + j] = se;
    res.covariance.at(k * p + j, k * p + j) = se * se;
  }
  return res;
}

std::vector<int> canonical_type_order(Family f, const std::vector<ModelParams>& thetas) {
  std::vector<int> order(thetas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sort_key(f, thetas[a]) < sort_key(f, thetas[b]);
  });
  return order;
}

Matrix type_posteriors(const MixtureSpec& spec, const Dataset& data, int quad_nodes) {
  validate(spec);
  validate(data);
  PanelEvaluator eval(data);
  const int k = static_cast<int>(spec.thetas.size());
  const int n = eval.n_subjects();
  std::vector<std::vector<double>> ll(k, std::vector<double>(n));
  for (int j = 0; j < k; ++j) eval.subject_logliks(spec.thetas[j], quad_nodes, ll[j]);
  Matrix resp(n, k);
  responsibilities(ll, spec.lambdas, resp);
  return resp;
}

// ---------------------------------------------------------------------------
// Tests and comparisons

WaldResult covariance_and_wald(const FitResult& fit, const Matrix& restrictions,
                               std::span<const double> q) {
  if (fit.thetas.size() != 1)
    throw std::invalid_argument("covariance_and_wald: single-type fits only");
  if (restrictions.rows < 1)
    throw std::invalid_argument("covariance_and_wald: zero-length restriction set");
  const std::vector<double> nat = natural_params(fit.family, fit.thetas[0]);
  if (restrictions.cols != static_cast<int>(nat.size()) ||
      static_cast<int>(q.size()) != restrictions.rows)
    throw std::invalid_argument("covariance_and_wald: restriction dimensions mismatch");

  const int r = restrictions.rows;
  std::vector<double> resid(r, 0.0);
  for (int i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < nat.size(); ++j) resid[i] += restrictions.at(i, j) * nat[j];
    resid[i] -= q[i];
  }

  Matrix rvr(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < nat.size(); ++a)
        for (std::size_t b = 0; b < nat.size(); ++b)
          acc += restrictions.at(i, a) * fit.covariance.at(a, b) * restrictions.at(j, b);
      rvr.at(i, j) = acc;
    }
  bool warn = false;
  const Matrix inv = invert_symmetric(rvr, &warn);

  WaldResult out;
  out.covariance = fit.covariance;
  out.df = r;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) out.statistic += resid[i] * inv.at(i, j) * resid[j];
  out.p_value = chi_square_sf(out.statistic, r);
  return out;
}

LrAicResult lr_aic(const FitResult& full, const FitResult& restricted) {
  LrAicResult out;
  out.df = full.n_params - restricted.n_params;
  if (out.df < 0) throw std::invalid_argument("lr_aic: restricted model has more parameters");
  out.lr = 2.0 * (full.loglik - restricted.loglik);
  if (out.lr < 0.0) {
    out.clipped_negative = true;
    out.lr = 0.0;
  }
  out.p_value = chi_square_sf(out.lr, out.df);
  out.aic_full = aic(full.n_params, full.loglik);
  out.aic_restricted = aic(restricted.n_params, restricted.loglik);
  return out;
}

VuongResult vuong_test(const FitResult& a, const FitResult& b, const Dataset& data,
                       int quad_nodes) {
  if (a.thetas.size() != 1 || b.thetas.size() != 1)
    throw std::invalid_argument("vuong_test: single-type fits only");
  PanelEvaluator eval(data);
  const std::vector<double> la = eval.per_trial_loglik(a.thetas[0], quad_nodes);
  const std::vector<double> lb = eval.per_trial_loglik(b.thetas[0], quad_nodes);

  const int n = static_cast<int>(la.size());
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += la[i] - lb[i];
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = la[i] - lb[i] - mean;
    var += d * d;
  }
  var /= n;
  const double sd = std::sqrt(var);
  if (sd < 1e-12)
    throw std::runtime_error("vuong_test: per-trial likelihoods identical (zero variance)");

  VuongResult out;
  out.n = n;
  out.statistic = std::sqrt(static_cast<double>(n)) * mean / sd;
  out.p_value = 2.0 * normal_cdf(-std::abs(out.statistic));
  return out;
}

}  // namespace cages
